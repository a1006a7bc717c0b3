//! Minimal CPU decoder: float and 4-bit forward passes with KV caching.
//!
//! The model family matches [`crate::archspace::ArchConfig`]: pre-norm
//! blocks of rotary multi-head (or grouped-query) attention and a gated
//! FFN, RMSNorm everywhere, bias-free projections, and an output head tied
//! to the token embedding. Weights can be random-initialized for timing
//! runs or loaded from the binary container via [`load_weights`].

mod kvcache;
mod math;
mod weights_io;

pub use kvcache::KvCache;
pub use math::{argmax, dot_f64, rmsnorm, rmsnorm_into, softmax_in_place, DenseMatrix};
pub use weights_io::{load_weights, read_manifest, save_weights, TensorEntry, WeightsManifest};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archspace::{Activation, ArchConfig, ArchError};
use crate::quantkit::{
    build_rope_tables, quantize_q4, quantize_rope, rotate_pairs, Q4BlockTensor, QuantError,
    RopeKind, RopeTableQ8, RopeTables,
};

/// RMSNorm stabilizer.
pub const RMSNORM_EPS: f32 = 1e-5;

/// Attention work (heads x positions x head_dim) above which the per-head
/// loop fans out across the rayon pool.
const ATTN_PAR_MIN: usize = 1 << 15;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("token id {0} is outside the vocabulary")]
    UnknownToken(u32),
    #[error(
        "context overflow: cache holds {have} of {capacity} positions, {requested} more requested"
    )]
    ContextOverflow {
        have: usize,
        capacity: usize,
        requested: usize,
    },
    #[error("no tokens have been processed yet")]
    NoTokens,
    #[error("cache length {cache_len} does not match position {position}")]
    CacheDesync { cache_len: usize, position: usize },
    #[error("weights io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a weights container (bad magic)")]
    BadMagic,
    #[error("unsupported weights container version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt weights container: {0}")]
    Corrupt(String),
}

/// Numeric representation of the linear and embedding weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Float,
    Q4,
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Precision::Float => f.write_str("float"),
            Precision::Q4 => f.write_str("q4"),
        }
    }
}

/// One projection matrix in either representation.
#[derive(Debug, Clone)]
pub enum LinearWeight {
    Dense(DenseMatrix),
    Q4(Q4BlockTensor),
}

impl LinearWeight {
    pub fn rows(&self) -> usize {
        match self {
            LinearWeight::Dense(m) => m.rows,
            LinearWeight::Q4(t) => t.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            LinearWeight::Dense(m) => m.cols,
            LinearWeight::Q4(t) => t.cols(),
        }
    }

    /// Logical parameter count (padding and scales excluded).
    pub fn param_count(&self) -> u64 {
        self.rows() as u64 * self.cols() as u64
    }

    /// `out = W * x`.
    pub fn matvec_into(&self, x: &[f32], out: &mut [f32]) -> Result<(), EngineError> {
        match self {
            LinearWeight::Dense(m) => {
                if x.len() != m.cols || out.len() != m.rows {
                    return Err(EngineError::Corrupt(format!(
                        "matvec shape mismatch: {}x{} against input {} output {}",
                        m.rows,
                        m.cols,
                        x.len(),
                        out.len()
                    )));
                }
                m.matvec_into(x, out);
                Ok(())
            }
            LinearWeight::Q4(t) => {
                t.matvec_into(x, out)?;
                Ok(())
            }
        }
    }

    /// Dequantized logical row `r` (embedding lookup).
    pub fn row_into(&self, r: usize, out: &mut [f32]) {
        match self {
            LinearWeight::Dense(m) => out.copy_from_slice(m.row(r)),
            LinearWeight::Q4(t) => t.row_into(r, out),
        }
    }
}

/// Weights of one decoder layer.
#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub attn_norm: Vec<f32>,
    pub attn_q: LinearWeight,
    pub attn_k: LinearWeight,
    pub attn_v: LinearWeight,
    pub attn_o: LinearWeight,
    pub ffn_norm: Vec<f32>,
    pub ffn_gate: LinearWeight,
    pub ffn_up: LinearWeight,
    pub ffn_down: LinearWeight,
}

/// A complete model: config, tensors, and precomputed rotary tables.
///
/// Immutable after construction and shareable across threads; the output
/// head is the transpose of `embedding` (tied).
#[derive(Debug, Clone)]
pub struct ModelWeights {
    config: ArchConfig,
    precision: Precision,
    pub embedding: LinearWeight,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Vec<f32>,
    rope_float: RopeTables,
    rope_q8: Option<RopeTableQ8>,
}

impl ModelWeights {
    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    /// Rotary tables matching the model precision: the 4-bit model uses the
    /// INT8 pre-quantized tables, the float model the exact ones.
    pub fn rope(&self) -> RopeKind<'_> {
        match &self.rope_q8 {
            Some(q8) => RopeKind::Int8(q8),
            None => RopeKind::Float(&self.rope_float),
        }
    }

    pub fn rope_float(&self) -> &RopeTables {
        &self.rope_float
    }

    pub fn rope_q8(&self) -> Option<&RopeTableQ8> {
        self.rope_q8.as_ref()
    }

    /// Sum of logical tensor element counts. Equals
    /// [`crate::archspace::count_params`] for the same config.
    pub fn param_count(&self) -> u64 {
        let mut total = self.embedding.param_count();
        for layer in &self.layers {
            total += layer.attn_norm.len() as u64;
            total += layer.attn_q.param_count();
            total += layer.attn_k.param_count();
            total += layer.attn_v.param_count();
            total += layer.attn_o.param_count();
            total += layer.ffn_norm.len() as u64;
            total += layer.ffn_gate.param_count();
            total += layer.ffn_up.param_count();
            total += layer.ffn_down.param_count();
        }
        total + self.final_norm.len() as u64
    }

    pub(crate) fn from_parts(
        config: ArchConfig,
        precision: Precision,
        embedding: LinearWeight,
        layers: Vec<LayerWeights>,
        final_norm: Vec<f32>,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        let head_dim = config.head_dim();
        let rope_float = build_rope_tables(config.context_len, head_dim, config.rope_theta)?;
        let rope_q8 = match precision {
            Precision::Q4 => Some(quantize_rope(&rope_float)),
            Precision::Float => None,
        };
        let model = Self {
            config,
            precision,
            embedding,
            layers,
            final_norm,
            rope_float,
            rope_q8,
        };
        model.verify_shapes()?;
        Ok(model)
    }

    fn verify_shapes(&self) -> Result<(), EngineError> {
        let c = &self.config;
        let h = c.hidden_size;
        let kv_dim = c.kv_heads * c.head_dim();
        let check = |name: &str, got: (usize, usize), want: (usize, usize)| {
            if got != want {
                return Err(EngineError::Corrupt(format!(
                    "{name}: expected {}x{}, got {}x{}",
                    want.0, want.1, got.0, got.1
                )));
            }
            Ok(())
        };
        check(
            "embedding",
            (self.embedding.rows(), self.embedding.cols()),
            (c.vocab_size, h),
        )?;
        if self.layers.len() != c.num_layers {
            return Err(EngineError::Corrupt(format!(
                "expected {} layers, got {}",
                c.num_layers,
                self.layers.len()
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.attn_norm.len() != h || l.ffn_norm.len() != h {
                return Err(EngineError::Corrupt(format!("layer {i} norm length")));
            }
            check("attn_q", (l.attn_q.rows(), l.attn_q.cols()), (h, h))?;
            check("attn_k", (l.attn_k.rows(), l.attn_k.cols()), (kv_dim, h))?;
            check("attn_v", (l.attn_v.rows(), l.attn_v.cols()), (kv_dim, h))?;
            check("attn_o", (l.attn_o.rows(), l.attn_o.cols()), (h, h))?;
            check(
                "ffn_gate",
                (l.ffn_gate.rows(), l.ffn_gate.cols()),
                (c.intermediate_size, h),
            )?;
            check(
                "ffn_up",
                (l.ffn_up.rows(), l.ffn_up.cols()),
                (c.intermediate_size, h),
            )?;
            check(
                "ffn_down",
                (l.ffn_down.rows(), l.ffn_down.cols()),
                (h, c.intermediate_size),
            )?;
        }
        if self.final_norm.len() != h {
            return Err(EngineError::Corrupt("final norm length".into()));
        }
        Ok(())
    }
}

/// Builds a model with seeded random weights.
///
/// Linear and embedding entries are uniform in `[-1/sqrt(hidden),
/// 1/sqrt(hidden)]`, which keeps activations finite across deep stacks;
/// norm vectors are ones. The draw order is fixed, so equal `(config,
/// seed)` always produce identical weights, and the 4-bit model is the
/// blockwise quantization of the float model with the same seed.
pub fn init_random_weights(
    config: &ArchConfig,
    seed: u64,
    precision: Precision,
) -> Result<ModelWeights, EngineError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (config.hidden_size as f32).sqrt();
    let mut draw = |rows: usize, cols: usize| -> LinearWeight {
        let data: Vec<f32> = (0..rows * cols)
            .map(|_| rng.random_range(-scale..=scale))
            .collect();
        match precision {
            Precision::Float => LinearWeight::Dense(DenseMatrix { rows, cols, data }),
            Precision::Q4 => {
                LinearWeight::Q4(quantize_q4(rows, cols, &data).expect("finite draws"))
            }
        }
    };

    let h = config.hidden_size;
    let kv_dim = config.kv_heads * config.head_dim();
    let embedding = draw(config.vocab_size, h);
    let layers = (0..config.num_layers)
        .map(|_| LayerWeights {
            attn_norm: vec![1.0; h],
            attn_q: draw(h, h),
            attn_k: draw(kv_dim, h),
            attn_v: draw(kv_dim, h),
            attn_o: draw(h, h),
            ffn_norm: vec![1.0; h],
            ffn_gate: draw(config.intermediate_size, h),
            ffn_up: draw(config.intermediate_size, h),
            ffn_down: draw(h, config.intermediate_size),
        })
        .collect();

    ModelWeights::from_parts(config.clone(), precision, embedding, layers, vec![1.0; h])
}

/// `down(act(gate(x)) ⊙ up(x))`.
pub fn gated_ffn(
    x: &[f32],
    gate_w: &LinearWeight,
    up_w: &LinearWeight,
    down_w: &LinearWeight,
    activation: Activation,
) -> Result<Vec<f32>, EngineError> {
    let inter = gate_w.rows();
    let mut gate = vec![0f32; inter];
    let mut up = vec![0f32; inter];
    gate_w.matvec_into(x, &mut gate)?;
    up_w.matvec_into(x, &mut up)?;
    gate_up_combine(&mut gate, &up, activation);
    let mut out = vec![0f32; down_w.rows()];
    down_w.matvec_into(&gate, &mut out)?;
    Ok(out)
}

/// In place: `gate = act(gate) ⊙ up`.
fn gate_up_combine(gate: &mut [f32], up: &[f32], activation: Activation) {
    match activation {
        Activation::Relu => {
            for (g, &u) in gate.iter_mut().zip(up) {
                *g = g.max(0.0) * u;
            }
        }
        Activation::Silu => {
            for (g, &u) in gate.iter_mut().zip(up) {
                let v = *g;
                *g = v / (1.0 + (-v).exp()) * u;
            }
        }
    }
}

struct AttnScratch {
    q: Vec<f32>,
    k: Vec<f32>,
    v: Vec<f32>,
    mix: Vec<f32>,
    out: Vec<f32>,
    scores: Vec<f32>,
    cos_row: Vec<f32>,
    sin_row: Vec<f32>,
}

impl AttnScratch {
    fn new(config: &ArchConfig) -> Self {
        let kv_dim = config.kv_heads * config.head_dim();
        Self {
            q: vec![0.0; config.hidden_size],
            k: vec![0.0; kv_dim],
            v: vec![0.0; kv_dim],
            mix: vec![0.0; config.hidden_size],
            out: vec![0.0; config.hidden_size],
            scores: vec![0.0; config.q_heads * config.context_len],
            cos_row: vec![0.0; config.head_dim() / 2],
            sin_row: vec![0.0; config.head_dim() / 2],
        }
    }
}

/// One attention block step for the token at `position`.
///
/// Projects and rotates q/k, appends k/v to the cache, runs causal
/// softmax attention over positions `0..=position` (each kv head serves
/// `q_heads / kv_heads` query heads), and applies the output projection.
/// `x` is the already-normed block input; the caller owns the residual.
pub fn attention(
    x: &[f32],
    layer: &LayerWeights,
    cache: &mut KvCache,
    layer_idx: usize,
    position: usize,
    rope: RopeKind<'_>,
    config: &ArchConfig,
) -> Result<Vec<f32>, EngineError> {
    let mut scratch = AttnScratch::new(config);
    attention_with_scratch(
        x,
        layer,
        cache,
        layer_idx,
        position,
        rope,
        config,
        &mut scratch,
    )?;
    Ok(scratch.out)
}

#[allow(clippy::too_many_arguments)]
fn attention_with_scratch(
    x: &[f32],
    layer: &LayerWeights,
    cache: &mut KvCache,
    layer_idx: usize,
    position: usize,
    rope: RopeKind<'_>,
    config: &ArchConfig,
    scratch: &mut AttnScratch,
) -> Result<(), EngineError> {
    if cache.len() != position {
        return Err(EngineError::CacheDesync {
            cache_len: cache.len(),
            position,
        });
    }
    if position >= config.context_len {
        return Err(EngineError::ContextOverflow {
            have: position,
            capacity: config.context_len,
            requested: 1,
        });
    }
    let head_dim = config.head_dim();
    let groups = config.q_heads / config.kv_heads;

    layer.attn_q.matvec_into(x, &mut scratch.q)?;
    layer.attn_k.matvec_into(x, &mut scratch.k)?;
    layer.attn_v.matvec_into(x, &mut scratch.v)?;

    rope.row_into(position, &mut scratch.cos_row, &mut scratch.sin_row);
    for head in scratch.q.chunks_mut(head_dim) {
        rotate_pairs(head, &scratch.cos_row, &scratch.sin_row);
    }
    for head in scratch.k.chunks_mut(head_dim) {
        rotate_pairs(head, &scratch.cos_row, &scratch.sin_row);
    }

    cache.append(layer_idx, &scratch.k, &scratch.v)?;

    let history = position + 1;
    let inv_sqrt = 1.0 / (head_dim as f32).sqrt();
    let keys = cache.keys(layer_idx);
    let values = cache.values(layer_idx);
    let kv_stride = config.kv_heads * head_dim;
    let q = &scratch.q;

    let head_task = |(qh, (mix_head, scores)): (usize, (&mut [f32], &mut [f32]))| {
        let kv_head = qh / groups;
        let q_head = &q[qh * head_dim..][..head_dim];
        let scores = &mut scores[..history];
        for (t, slot) in scores.iter_mut().enumerate() {
            let key = &keys[(t * kv_stride + kv_head * head_dim)..][..head_dim];
            *slot = dot_f64(q_head, key) as f32 * inv_sqrt;
        }
        softmax_in_place(scores);
        mix_head.fill(0.0);
        for (t, &w) in scores.iter().enumerate() {
            let value = &values[(t * kv_stride + kv_head * head_dim)..][..head_dim];
            for (o, &v) in mix_head.iter_mut().zip(value) {
                *o += w * v;
            }
        }
    };

    if config.q_heads * history * head_dim >= ATTN_PAR_MIN {
        scratch
            .mix
            .par_chunks_mut(head_dim)
            .zip(scratch.scores.par_chunks_mut(config.context_len))
            .enumerate()
            .for_each(head_task);
    } else {
        scratch
            .mix
            .chunks_mut(head_dim)
            .zip(scratch.scores.chunks_mut(config.context_len))
            .enumerate()
            .for_each(head_task);
    }

    layer.attn_o.matvec_into(&scratch.mix, &mut scratch.out)?;
    Ok(())
}

/// A generation session: one model, one exclusively-owned cache.
pub struct Session<'m> {
    model: &'m ModelWeights,
    cache: KvCache,
    xn: Vec<f32>,
    gate: Vec<f32>,
    up: Vec<f32>,
    proj: Vec<f32>,
    scratch: AttnScratch,
    last_hidden: Vec<f32>,
}

impl<'m> Session<'m> {
    pub fn new(model: &'m ModelWeights) -> Self {
        let config = model.config();
        let h = config.hidden_size;
        Self {
            model,
            cache: KvCache::new(config),
            xn: vec![0.0; h],
            gate: vec![0.0; config.intermediate_size],
            up: vec![0.0; config.intermediate_size],
            proj: vec![0.0; h],
            scratch: AttnScratch::new(config),
            last_hidden: vec![0.0; h],
        }
    }

    pub fn model(&self) -> &ModelWeights {
        self.model
    }

    /// Number of positions processed so far.
    pub fn position(&self) -> usize {
        self.cache.len()
    }

    pub fn cache(&self) -> &KvCache {
        &self.cache
    }

    /// Runs `tokens` through the stack, filling the cache. No logits are
    /// computed; combine with [`current_logits`](Self::current_logits).
    pub fn advance(&mut self, tokens: &[u32]) -> Result<(), EngineError> {
        if tokens.is_empty() {
            return Err(EngineError::EmptyPrompt);
        }
        if self.cache.len() + tokens.len() > self.model.config().context_len {
            return Err(EngineError::ContextOverflow {
                have: self.cache.len(),
                capacity: self.model.config().context_len,
                requested: tokens.len(),
            });
        }
        for &token in tokens {
            self.forward_token(token)?;
        }
        Ok(())
    }

    /// Logits for the most recently processed position: final norm of the
    /// residual stream through the tied embedding head.
    pub fn current_logits(&mut self) -> Result<Vec<f32>, EngineError> {
        if self.cache.is_empty() {
            return Err(EngineError::NoTokens);
        }
        rmsnorm_into(
            &self.last_hidden,
            &self.model.final_norm,
            RMSNORM_EPS,
            &mut self.xn,
        )?;
        let mut logits = vec![0f32; self.model.config().vocab_size];
        self.model.embedding.matvec_into(&self.xn, &mut logits)?;
        Ok(logits)
    }

    /// Processes the whole prompt and returns the final position's logits.
    pub fn prefill(&mut self, tokens: &[u32]) -> Result<Vec<f32>, EngineError> {
        self.advance(tokens)?;
        self.current_logits()
    }

    /// Single-token prefill: extends the cache by one and returns logits.
    pub fn decode_step(&mut self, token: u32) -> Result<Vec<f32>, EngineError> {
        self.advance(std::slice::from_ref(&token))?;
        self.current_logits()
    }

    fn forward_token(&mut self, token: u32) -> Result<(), EngineError> {
        let config = self.model.config();
        if token as usize >= config.vocab_size {
            return Err(EngineError::UnknownToken(token));
        }
        let position = self.cache.len();
        let rope = self.model.rope();

        let x = &mut self.last_hidden;
        self.model.embedding.row_into(token as usize, x);

        for (layer_idx, layer) in self.model.layers.iter().enumerate() {
            rmsnorm_into(x, &layer.attn_norm, RMSNORM_EPS, &mut self.xn)?;
            attention_with_scratch(
                &self.xn,
                layer,
                &mut self.cache,
                layer_idx,
                position,
                rope,
                config,
                &mut self.scratch,
            )?;
            for (xi, &a) in x.iter_mut().zip(&self.scratch.out) {
                *xi += a;
            }

            rmsnorm_into(x, &layer.ffn_norm, RMSNORM_EPS, &mut self.xn)?;
            layer.ffn_gate.matvec_into(&self.xn, &mut self.gate)?;
            layer.ffn_up.matvec_into(&self.xn, &mut self.up)?;
            gate_up_combine(&mut self.gate, &self.up, config.activation);
            layer.ffn_down.matvec_into(&self.gate, &mut self.proj)?;
            for (xi, &f) in x.iter_mut().zip(&self.proj) {
                *xi += f;
            }
        }
        self.cache.commit();
        Ok(())
    }
}
