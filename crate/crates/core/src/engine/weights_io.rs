//! Binary weights container.
//!
//! Layout: magic `SLMF`, `u32` version, `u32` header length, a UTF-8 JSON
//! header (config plus tensor directory), then raw little-endian tensor
//! blobs. Directory offsets are relative to the first blob byte. A 4-bit
//! tensor blob is its block scale array (f32) followed by the packed
//! nibble array, two codes per byte, low nibble first, blocks row-major.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archspace::ArchConfig;
use crate::quantkit::Q4BlockTensor;

use super::math::DenseMatrix;
use super::{EngineError, LayerWeights, LinearWeight, ModelWeights, Precision};

const MAGIC: &[u8; 4] = b"SLMF";
const VERSION: u32 = 1;

/// Storage format of a single tensor blob.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorPrecision {
    F32,
    Q4,
}

/// Directory entry for one tensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub precision: TensorPrecision,
    pub offset: u64,
    pub len: u64,
}

/// Parsed container header.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightsManifest {
    pub config: ArchConfig,
    pub precision: Precision,
    pub tensors: Vec<TensorEntry>,
}

fn layer_tensor_names(layer: usize) -> [String; 9] {
    [
        format!("layers.{layer}.attn_norm"),
        format!("layers.{layer}.attn_q"),
        format!("layers.{layer}.attn_k"),
        format!("layers.{layer}.attn_v"),
        format!("layers.{layer}.attn_o"),
        format!("layers.{layer}.ffn_norm"),
        format!("layers.{layer}.ffn_gate"),
        format!("layers.{layer}.ffn_up"),
        format!("layers.{layer}.ffn_down"),
    ]
}

fn f32_blob(data: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_f32_blob(bytes: &[u8]) -> Result<Vec<f32>, EngineError> {
    if !bytes.len().is_multiple_of(4) {
        return Err(EngineError::Corrupt(
            "f32 blob length not a multiple of 4".into(),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn pack_nibbles(codes: &[i8]) -> Vec<u8> {
    debug_assert_eq!(codes.len() % 2, 0);
    codes
        .chunks_exact(2)
        .map(|pair| (pair[0] as u8 & 0x0F) | ((pair[1] as u8 & 0x0F) << 4))
        .collect()
}

fn unpack_nibbles(bytes: &[u8]) -> Vec<i8> {
    fn sign_extend(n: u8) -> i8 {
        if n >= 8 {
            n as i8 - 16
        } else {
            n as i8
        }
    }
    let mut out = Vec::with_capacity(bytes.len() * 2);
    for &b in bytes {
        out.push(sign_extend(b & 0x0F));
        out.push(sign_extend(b >> 4));
    }
    out
}

fn tensor_blob(w: &LinearWeight) -> (TensorPrecision, Vec<u8>) {
    match w {
        LinearWeight::Dense(m) => (TensorPrecision::F32, f32_blob(&m.data)),
        LinearWeight::Q4(t) => {
            let mut blob = f32_blob(t.scales());
            blob.extend_from_slice(&pack_nibbles(t.codes()));
            (TensorPrecision::Q4, blob)
        }
    }
}

fn decode_linear(entry: &TensorEntry, bytes: &[u8]) -> Result<LinearWeight, EngineError> {
    if entry.shape.len() != 2 {
        return Err(EngineError::Corrupt(format!(
            "tensor {} must be two-dimensional",
            entry.name
        )));
    }
    let (rows, cols) = (entry.shape[0], entry.shape[1]);
    match entry.precision {
        TensorPrecision::F32 => {
            let data = read_f32_blob(bytes)?;
            Ok(LinearWeight::Dense(DenseMatrix::new(rows, cols, data)?))
        }
        TensorPrecision::Q4 => {
            let block_rows = rows.div_ceil(4);
            let block_cols = cols.div_ceil(4);
            let scale_bytes = block_rows * block_cols * 4;
            let code_bytes = block_rows * block_cols * 8;
            if bytes.len() != scale_bytes + code_bytes {
                return Err(EngineError::Corrupt(format!(
                    "tensor {}: expected {} blob bytes, got {}",
                    entry.name,
                    scale_bytes + code_bytes,
                    bytes.len()
                )));
            }
            let scales = read_f32_blob(&bytes[..scale_bytes])?;
            let codes = unpack_nibbles(&bytes[scale_bytes..]);
            let tensor = Q4BlockTensor::from_parts(rows, cols, scales, codes)
                .map_err(|e| EngineError::Corrupt(format!("tensor {}: {e}", entry.name)))?;
            Ok(LinearWeight::Q4(tensor))
        }
    }
}

struct ContainerWriter {
    tensors: Vec<TensorEntry>,
    blobs: Vec<u8>,
}

impl ContainerWriter {
    fn new() -> Self {
        Self {
            tensors: Vec::new(),
            blobs: Vec::new(),
        }
    }

    fn push(&mut self, name: String, shape: Vec<usize>, precision: TensorPrecision, blob: Vec<u8>) {
        self.tensors.push(TensorEntry {
            name,
            shape,
            precision,
            offset: self.blobs.len() as u64,
            len: blob.len() as u64,
        });
        self.blobs.extend_from_slice(&blob);
    }

    fn push_linear(&mut self, name: String, w: &LinearWeight) {
        let (precision, blob) = tensor_blob(w);
        self.push(name, vec![w.rows(), w.cols()], precision, blob);
    }

    fn push_vector(&mut self, name: String, v: &[f32]) {
        self.push(name, vec![v.len()], TensorPrecision::F32, f32_blob(v));
    }
}

/// Serializes a model into the container format.
pub fn weights_to_bytes(model: &ModelWeights) -> Result<Vec<u8>, EngineError> {
    let mut w = ContainerWriter::new();
    w.push_linear("embedding".into(), &model.embedding);
    for (i, layer) in model.layers.iter().enumerate() {
        let [norm, q, k, v, o, ffn_norm, gate, up, down] = layer_tensor_names(i);
        w.push_vector(norm, &layer.attn_norm);
        w.push_linear(q, &layer.attn_q);
        w.push_linear(k, &layer.attn_k);
        w.push_linear(v, &layer.attn_v);
        w.push_linear(o, &layer.attn_o);
        w.push_vector(ffn_norm, &layer.ffn_norm);
        w.push_linear(gate, &layer.ffn_gate);
        w.push_linear(up, &layer.ffn_up);
        w.push_linear(down, &layer.ffn_down);
    }
    w.push_vector("final_norm".into(), &model.final_norm);

    let manifest = WeightsManifest {
        config: model.config().clone(),
        precision: model.precision(),
        tensors: w.tensors,
    };
    let header = serde_json::to_vec(&manifest)
        .map_err(|e| EngineError::Corrupt(format!("header encode: {e}")))?;

    let mut out = Vec::with_capacity(12 + header.len() + w.blobs.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&w.blobs);
    Ok(out)
}

pub fn save_weights(model: &ModelWeights, path: &Path) -> Result<(), EngineError> {
    let bytes = weights_to_bytes(model)?;
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

fn split_container(bytes: &[u8]) -> Result<(WeightsManifest, &[u8]), EngineError> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(EngineError::BadMagic);
    }
    let version = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    if version != VERSION {
        return Err(EngineError::UnsupportedVersion(version));
    }
    let header_len = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    if bytes.len() < 12 + header_len {
        return Err(EngineError::Corrupt("truncated header".into()));
    }
    let manifest: WeightsManifest = serde_json::from_slice(&bytes[12..12 + header_len])
        .map_err(|e| EngineError::Corrupt(format!("header decode: {e}")))?;
    Ok((manifest, &bytes[12 + header_len..]))
}

/// Reads only the header: config, precision, and tensor directory.
pub fn read_manifest(path: &Path) -> Result<WeightsManifest, EngineError> {
    let bytes = fs::read(path)?;
    Ok(split_container(&bytes)?.0)
}

/// Reconstructs a model from container bytes.
pub fn weights_from_bytes(bytes: &[u8]) -> Result<ModelWeights, EngineError> {
    let (manifest, blobs) = split_container(bytes)?;

    let lookup = |name: &str| -> Result<&TensorEntry, EngineError> {
        manifest
            .tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| EngineError::Corrupt(format!("missing tensor {name}")))
    };
    let blob_of = |entry: &TensorEntry| -> Result<&[u8], EngineError> {
        let start = entry.offset as usize;
        let end = start + entry.len as usize;
        blobs
            .get(start..end)
            .ok_or_else(|| EngineError::Corrupt(format!("tensor {} out of bounds", entry.name)))
    };
    let linear = |name: &str| -> Result<LinearWeight, EngineError> {
        let entry = lookup(name)?;
        decode_linear(entry, blob_of(entry)?)
    };
    let vector = |name: &str| -> Result<Vec<f32>, EngineError> {
        let entry = lookup(name)?;
        if entry.shape.len() != 1 {
            return Err(EngineError::Corrupt(format!("{name} must be a vector")));
        }
        let data = read_f32_blob(blob_of(entry)?)?;
        if data.len() != entry.shape[0] {
            return Err(EngineError::Corrupt(format!("{name} length mismatch")));
        }
        Ok(data)
    };

    let embedding = linear("embedding")?;
    let mut layers = Vec::with_capacity(manifest.config.num_layers);
    for i in 0..manifest.config.num_layers {
        let [norm, q, k, v, o, ffn_norm, gate, up, down] = layer_tensor_names(i);
        layers.push(LayerWeights {
            attn_norm: vector(&norm)?,
            attn_q: linear(&q)?,
            attn_k: linear(&k)?,
            attn_v: linear(&v)?,
            attn_o: linear(&o)?,
            ffn_norm: vector(&ffn_norm)?,
            ffn_gate: linear(&gate)?,
            ffn_up: linear(&up)?,
            ffn_down: linear(&down)?,
        });
    }
    let final_norm = vector("final_norm")?;

    ModelWeights::from_parts(
        manifest.config,
        manifest.precision,
        embedding,
        layers,
        final_norm,
    )
}

pub fn load_weights(path: &Path) -> Result<ModelWeights, EngineError> {
    let bytes = fs::read(path)?;
    weights_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspace::Activation;
    use crate::engine::init_random_weights;

    fn toy_config() -> ArchConfig {
        ArchConfig {
            hidden_size: 16,
            intermediate_size: 36,
            num_layers: 2,
            q_heads: 4,
            kv_heads: 2,
            activation: Activation::Relu,
            vocab_size: 50,
            context_len: 32,
            rope_theta: 10_000.0,
        }
    }

    #[test]
    fn nibble_packing_round_trips_all_codes() {
        let codes: Vec<i8> = (-7..=7).chain(-7..=7).map(|c| c as i8).take(16).collect();
        assert_eq!(unpack_nibbles(&pack_nibbles(&codes)), codes);
    }

    #[test]
    fn q4_container_round_trip_is_exact() {
        let model = init_random_weights(&toy_config(), 9, Precision::Q4).unwrap();
        let bytes = weights_to_bytes(&model).unwrap();
        let loaded = weights_from_bytes(&bytes).unwrap();
        assert_eq!(loaded.config(), model.config());
        assert_eq!(loaded.precision(), Precision::Q4);
        match (&model.embedding, &loaded.embedding) {
            (LinearWeight::Q4(a), LinearWeight::Q4(b)) => assert_eq!(a, b),
            _ => panic!("expected q4 embeddings"),
        }
        match (&model.layers[1].ffn_down, &loaded.layers[1].ffn_down) {
            (LinearWeight::Q4(a), LinearWeight::Q4(b)) => assert_eq!(a, b),
            _ => panic!("expected q4 ffn_down"),
        }
        assert_eq!(loaded.final_norm, model.final_norm);
    }

    #[test]
    fn float_container_round_trip_is_exact() {
        let model = init_random_weights(&toy_config(), 9, Precision::Float).unwrap();
        let bytes = weights_to_bytes(&model).unwrap();
        let loaded = weights_from_bytes(&bytes).unwrap();
        match (&model.layers[0].attn_q, &loaded.layers[0].attn_q) {
            (LinearWeight::Dense(a), LinearWeight::Dense(b)) => assert_eq!(a.data, b.data),
            _ => panic!("expected dense tensors"),
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let model = init_random_weights(&toy_config(), 9, Precision::Q4).unwrap();
        let mut bytes = weights_to_bytes(&model).unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            weights_from_bytes(&bytes),
            Err(EngineError::BadMagic)
        ));
    }

    #[test]
    fn unsupported_version_is_rejected() {
        let model = init_random_weights(&toy_config(), 9, Precision::Q4).unwrap();
        let mut bytes = weights_to_bytes(&model).unwrap();
        bytes[4] = 99;
        assert!(matches!(
            weights_from_bytes(&bytes),
            Err(EngineError::UnsupportedVersion(99))
        ));
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let model = init_random_weights(&toy_config(), 9, Precision::Q4).unwrap();
        let bytes = weights_to_bytes(&model).unwrap();
        assert!(matches!(
            weights_from_bytes(&bytes[..bytes.len() - 16]),
            Err(EngineError::Corrupt(_))
        ));
    }

    #[test]
    fn manifest_reads_without_decoding_tensors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.slmf");
        let model = init_random_weights(&toy_config(), 4, Precision::Q4).unwrap();
        save_weights(&model, &path).unwrap();
        let manifest = read_manifest(&path).unwrap();
        assert_eq!(manifest.config, toy_config());
        // embedding + 2 layers x 9 tensors + final norm
        assert_eq!(manifest.tensors.len(), 1 + 2 * 9 + 1);
        let loaded = load_weights(&path).unwrap();
        assert_eq!(loaded.param_count(), model.param_count());
    }
}
