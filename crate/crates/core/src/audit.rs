//! Exhaustive quantization-error audits.
//!
//! The rope audit scans every table entry against the `max/254` bound
//! implied by the floor-based INT8 formula. The q4 audit rebuilds the
//! seeded float tensors, quantizes each, and checks every element against
//! its block's `scale/2` bound.

use serde::Serialize;

use crate::archspace::ArchConfig;
use crate::engine::{init_random_weights, EngineError, LinearWeight, Precision};
use crate::quantkit::{build_rope_tables, dequantize_q4, quantize_q4, quantize_rope};

/// Result of scanning one quantized rope table pair.
#[derive(Debug, Clone, Serialize)]
pub struct RopeAudit {
    pub context_len: usize,
    pub head_dim: usize,
    pub cos_max: f32,
    pub sin_max: f32,
    pub max_abs_error_cos: f64,
    pub max_abs_error_sin: f64,
    pub bound_cos: f64,
    pub bound_sin: f64,
    pub position0_cos_all_127: bool,
    pub ok: bool,
}

/// Builds and quantizes the rope tables for `config`, then checks every
/// reconstructed entry against `max/254`.
pub fn audit_rope(config: &ArchConfig) -> Result<RopeAudit, EngineError> {
    config.validate()?;
    let tables = build_rope_tables(config.context_len, config.head_dim(), config.rope_theta)?;
    let q = quantize_rope(&tables);

    let scan = |codes: &[i8], max: f32, table: &[f32]| -> f64 {
        codes
            .iter()
            .zip(table)
            .map(|(&code, &orig)| (code as f64 * max as f64 / 127.0 - orig as f64).abs())
            .fold(0.0, f64::max)
    };
    let max_abs_error_cos = scan(q.cos_codes(), q.cos_max(), tables.cos());
    let max_abs_error_sin = scan(q.sin_codes(), q.sin_max(), tables.sin());
    let bound_cos = q.cos_max() as f64 / 254.0;
    let bound_sin = q.sin_max() as f64 / 254.0;
    let position0_cos_all_127 = q.cos_code_row(0).iter().all(|&c| c == 127);
    let tol = 1e-12;
    Ok(RopeAudit {
        context_len: config.context_len,
        head_dim: config.head_dim(),
        cos_max: q.cos_max(),
        sin_max: q.sin_max(),
        max_abs_error_cos,
        max_abs_error_sin,
        bound_cos,
        bound_sin,
        position0_cos_all_127,
        ok: max_abs_error_cos <= bound_cos + tol
            && max_abs_error_sin <= bound_sin + tol
            && position0_cos_all_127,
    })
}

/// Per-tensor result of the 4-bit weight audit.
#[derive(Debug, Clone, Serialize)]
pub struct TensorAudit {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub max_abs_error: f64,
    /// Worst observed `error / (block scale / 2)`; must not exceed 1.
    pub worst_block_ratio: f64,
    pub ok: bool,
}

/// Full 4-bit audit over a seeded model.
#[derive(Debug, Clone, Serialize)]
pub struct Q4Audit {
    pub seed: u64,
    pub params: u64,
    pub tensors: Vec<TensorAudit>,
    pub ok: bool,
}

fn audit_tensor(name: &str, w: &LinearWeight) -> TensorAudit {
    let LinearWeight::Dense(m) = w else {
        unreachable!("audit runs on the float model");
    };
    let q = quantize_q4(m.rows, m.cols, &m.data).expect("finite weights");
    let deq = dequantize_q4(&q);
    let mut max_abs_error = 0f64;
    let mut worst_block_ratio = 0f64;
    let mut ok = true;
    for r in 0..m.rows {
        for c in 0..m.cols {
            let err = (deq[r * m.cols + c] as f64 - m.data[r * m.cols + c] as f64).abs();
            max_abs_error = max_abs_error.max(err);
            let scale = q.scale_at(r / 4, c / 4) as f64;
            if scale == 0.0 {
                if err != 0.0 {
                    ok = false;
                }
                continue;
            }
            let ratio = err / (scale / 2.0);
            worst_block_ratio = worst_block_ratio.max(ratio);
        }
    }
    TensorAudit {
        name: name.to_string(),
        rows: m.rows,
        cols: m.cols,
        max_abs_error,
        worst_block_ratio,
        ok: ok && worst_block_ratio <= 1.0 + 1e-6,
    }
}

/// Draws the same seeded float tensors the engine would use, quantizes
/// every linear and embedding weight, and verifies the blockwise bound.
pub fn audit_q4(config: &ArchConfig, seed: u64) -> Result<Q4Audit, EngineError> {
    let model = init_random_weights(config, seed, Precision::Float)?;
    let mut tensors = vec![audit_tensor("embedding", &model.embedding)];
    for (i, layer) in model.layers.iter().enumerate() {
        for (suffix, w) in [
            ("attn_q", &layer.attn_q),
            ("attn_k", &layer.attn_k),
            ("attn_v", &layer.attn_v),
            ("attn_o", &layer.attn_o),
            ("ffn_gate", &layer.ffn_gate),
            ("ffn_up", &layer.ffn_up),
            ("ffn_down", &layer.ffn_down),
        ] {
            tensors.push(audit_tensor(&format!("layers.{i}.{suffix}"), w));
        }
    }
    let ok = tensors.iter().all(|t| t.ok);
    Ok(Q4Audit {
        seed,
        params: model.param_count(),
        tensors,
        ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspace::Activation;

    fn toy_config() -> ArchConfig {
        ArchConfig {
            hidden_size: 32,
            intermediate_size: 96,
            num_layers: 2,
            q_heads: 4,
            kv_heads: 2,
            activation: Activation::Relu,
            vocab_size: 64,
            context_len: 64,
            rope_theta: 10_000.0,
        }
    }

    #[test]
    fn rope_audit_is_within_bounds() {
        let audit = audit_rope(&toy_config()).unwrap();
        assert!(audit.ok);
        assert!(audit.max_abs_error_cos <= audit.bound_cos + 1e-12);
        assert!(audit.position0_cos_all_127);
        assert_eq!(audit.head_dim, 8);
    }

    #[test]
    fn q4_audit_covers_every_linear_tensor() {
        let audit = audit_q4(&toy_config(), 3).unwrap();
        assert!(audit.ok);
        // embedding + 2 layers x 7 linear tensors
        assert_eq!(audit.tensors.len(), 1 + 2 * 7);
        assert!(audit
            .tensors
            .iter()
            .all(|t| t.worst_block_ratio <= 1.0 + 1e-6));
        assert!(audit.tensors.iter().any(|t| t.max_abs_error > 0.0));
    }

    #[test]
    fn audit_rejects_invalid_configs() {
        let mut config = toy_config();
        config.num_layers = 0;
        assert!(audit_rope(&config).is_err());
        assert!(audit_q4(&config, 1).is_err());
    }
}
