//! Architecture space: exact parameter counting and budgeted enumeration.
//!
//! A candidate is a full decoder hyperparameter point ([`ArchConfig`]).
//! [`count_params`] is exact for the tied-embedding, bias-free family this
//! crate implements; [`enumerate_candidates`] walks a [`SearchSpace`] grid
//! and keeps every configuration whose parameter count lands inside the
//! budget window.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// FFN activation function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Silu,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Silu => "silu",
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Activation {
    type Err = ArchError;

    fn from_str(s: &str) -> Result<Self, ArchError> {
        match s {
            "relu" => Ok(Activation::Relu),
            "silu" => Ok(Activation::Silu),
            other => Err(ArchError::UnknownActivation(other.to_string())),
        }
    }
}

fn default_context_len() -> usize {
    2048
}

fn default_rope_theta() -> f64 {
    10_000.0
}

fn default_activation() -> Activation {
    Activation::Relu
}

/// One transformer-decoder hyperparameter point.
///
/// The family is fixed: pre-norm decoder blocks with RMSNorm, rotary
/// position embeddings, gated FFN, bias-free linear layers, and a token
/// embedding tied to the output head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub hidden_size: usize,
    pub intermediate_size: usize,
    pub num_layers: usize,
    pub q_heads: usize,
    pub kv_heads: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    pub vocab_size: usize,
    #[serde(default = "default_context_len")]
    pub context_len: usize,
    #[serde(default = "default_rope_theta")]
    pub rope_theta: f64,
}

impl ArchConfig {
    /// Per-head vector width, `hidden_size / q_heads`.
    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.q_heads
    }

    /// Checks all structural invariants of the configuration.
    pub fn validate(&self) -> Result<(), ArchError> {
        for (name, v) in [
            ("hidden_size", self.hidden_size),
            ("intermediate_size", self.intermediate_size),
            ("num_layers", self.num_layers),
            ("q_heads", self.q_heads),
            ("kv_heads", self.kv_heads),
            ("vocab_size", self.vocab_size),
            ("context_len", self.context_len),
        ] {
            if v == 0 {
                return Err(ArchError::NonPositiveField(name));
            }
        }
        if !(self.rope_theta.is_finite() && self.rope_theta > 0.0) {
            return Err(ArchError::NonPositiveField("rope_theta"));
        }
        if !self.hidden_size.is_multiple_of(self.q_heads) {
            return Err(ArchError::HeadsDontDivideHidden {
                hidden_size: self.hidden_size,
                q_heads: self.q_heads,
            });
        }
        if !self.q_heads.is_multiple_of(self.kv_heads) {
            return Err(ArchError::KvHeadsDontDivideQ {
                q_heads: self.q_heads,
                kv_heads: self.kv_heads,
            });
        }
        if self.intermediate_size < self.hidden_size {
            return Err(ArchError::IntermediateTooSmall {
                intermediate_size: self.intermediate_size,
                hidden_size: self.hidden_size,
            });
        }
        Ok(())
    }
}

/// Grid of configurations to enumerate under a parameter budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchSpace {
    /// Target parameter count.
    pub budget: u64,
    /// Accepted relative deviation from the budget, in (0, 1).
    pub tolerance: f64,
    /// Inclusive `[lo, hi]` range of decoder layer counts.
    #[serde(rename = "layers")]
    pub layer_range: [usize; 2],
    /// `(q_heads, kv_heads)` pairs to try.
    #[serde(rename = "heads")]
    pub head_options: Vec<[usize; 2]>,
    pub activations: Vec<Activation>,
    /// Inclusive bounds on `intermediate_size / hidden_size`.
    #[serde(rename = "ratio")]
    pub ratio_range: [f64; 2],
    /// Allowed hidden sizes.
    pub hidden_grid: Vec<usize>,
    /// Explicit intermediate sizes. When absent, every multiple of
    /// `intermediate_step` inside `ratio_range` is tried.
    #[serde(default)]
    pub intermediate_grid: Option<Vec<usize>>,
    #[serde(default = "default_intermediate_step")]
    pub intermediate_step: usize,
    pub vocab_size: usize,
    #[serde(default = "default_context_len")]
    pub context_len: usize,
    #[serde(default = "default_rope_theta")]
    pub rope_theta: f64,
}

fn default_intermediate_step() -> usize {
    32
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), ArchError> {
        if self.layer_range[0] == 0 || self.layer_range[0] > self.layer_range[1] {
            return Err(ArchError::EmptyLayerRange(
                self.layer_range[0],
                self.layer_range[1],
            ));
        }
        if self.ratio_range[0] < 1.0 || self.ratio_range[0] > self.ratio_range[1] {
            return Err(ArchError::BadRatioRange(
                self.ratio_range[0],
                self.ratio_range[1],
            ));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(ArchError::BadTolerance(self.tolerance));
        }
        if self.intermediate_step == 0 {
            return Err(ArchError::NonPositiveField("intermediate_step"));
        }
        if self.vocab_size == 0 {
            return Err(ArchError::NonPositiveField("vocab_size"));
        }
        Ok(())
    }

    /// Inclusive parameter window `budget * (1 ± tolerance)`.
    pub fn budget_window(&self) -> (f64, f64) {
        let b = self.budget as f64;
        (b * (1.0 - self.tolerance), b * (1.0 + self.tolerance))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ArchError {
    #[error("{0} must be positive")]
    NonPositiveField(&'static str),
    #[error("hidden_size {hidden_size} is not divisible by q_heads {q_heads}")]
    HeadsDontDivideHidden { hidden_size: usize, q_heads: usize },
    #[error("q_heads {q_heads} is not divisible by kv_heads {kv_heads}")]
    KvHeadsDontDivideQ { q_heads: usize, kv_heads: usize },
    #[error("intermediate_size {intermediate_size} is below hidden_size {hidden_size}")]
    IntermediateTooSmall {
        intermediate_size: usize,
        hidden_size: usize,
    },
    #[error("layer range [{0}, {1}] is empty or starts at zero")]
    EmptyLayerRange(usize, usize),
    #[error("ratio range [{0}, {1}] must satisfy 1 <= lo <= hi")]
    BadRatioRange(f64, f64),
    #[error("tolerance {0} must lie strictly between 0 and 1")]
    BadTolerance(f64),
    #[error("unknown activation `{0}` (expected `relu` or `silu`)")]
    UnknownActivation(String),
}

/// Exact parameter count of a configuration.
///
/// Counts the tied token embedding once (`vocab * hidden`), per layer the
/// four attention projections (`q`/`o` are `hidden x hidden`, `k`/`v` are
/// `kv_heads*head_dim x hidden`), the three gated-FFN projections, and two
/// RMSNorm weight vectors, plus the final norm vector. No bias terms
/// anywhere; the output head reuses the embedding.
pub fn count_params(config: &ArchConfig) -> Result<u64, ArchError> {
    config.validate()?;
    let h = config.hidden_size as u64;
    let kv_dim = (config.head_dim() * config.kv_heads) as u64;
    let attn = 2 * h * h + 2 * h * kv_dim;
    let ffn = 3 * h * config.intermediate_size as u64;
    let per_layer = attn + ffn + 2 * h;
    let embedding = config.vocab_size as u64 * h;
    Ok(embedding + config.num_layers as u64 * per_layer + h)
}

/// Enumerates every grid configuration whose parameter count lies within
/// the budget window and whose `intermediate/hidden` ratio is in range.
///
/// The result is deterministic and duplicate-free, ordered by ascending
/// `(layers, hidden, intermediate, q_heads, kv_heads, activation)`. Grid
/// combinations that violate [`ArchConfig`] invariants (for example a
/// hidden size not divisible by the head count) are skipped, not errors.
/// An empty result is not an error.
pub fn enumerate_candidates(space: &SearchSpace) -> Result<Vec<ArchConfig>, ArchError> {
    space.validate()?;
    let (lo, hi) = space.budget_window();

    let mut out = Vec::new();
    for layers in space.layer_range[0]..=space.layer_range[1] {
        for &hidden in &space.hidden_grid {
            for &[q, kv] in &space.head_options {
                for &activation in &space.activations {
                    for intermediate in intermediate_candidates(space, hidden) {
                        let config = ArchConfig {
                            hidden_size: hidden,
                            intermediate_size: intermediate,
                            num_layers: layers,
                            q_heads: q,
                            kv_heads: kv,
                            activation,
                            vocab_size: space.vocab_size,
                            context_len: space.context_len,
                            rope_theta: space.rope_theta,
                        };
                        let Ok(params) = count_params(&config) else {
                            continue;
                        };
                        let p = params as f64;
                        if p >= lo && p <= hi {
                            out.push(config);
                        }
                    }
                }
            }
        }
    }

    out.sort_by_key(|c| {
        (
            c.num_layers,
            c.hidden_size,
            c.intermediate_size,
            c.q_heads,
            c.kv_heads,
            c.activation,
        )
    });
    out.dedup_by(|a, b| a == b);
    Ok(out)
}

fn intermediate_candidates(space: &SearchSpace, hidden: usize) -> Vec<usize> {
    let lo = space.ratio_range[0] * hidden as f64;
    let hi = space.ratio_range[1] * hidden as f64;
    match &space.intermediate_grid {
        Some(grid) => grid
            .iter()
            .copied()
            .filter(|&i| {
                let r = i as f64;
                r >= lo && r <= hi
            })
            .collect(),
        None => {
            let step = space.intermediate_step;
            let first = (lo / step as f64).ceil() as usize * step;
            let last = (hi / step as f64).floor() as usize * step;
            (first..=last).step_by(step).collect()
        }
    }
}

/// Renders candidates as CSV with the stable column order
/// `hidden,intermediate,layers,q_heads,kv_heads,activation,params`.
pub fn candidates_to_csv(candidates: &[ArchConfig]) -> Result<String, ArchError> {
    let mut out = String::from("hidden,intermediate,layers,q_heads,kv_heads,activation,params\n");
    for c in candidates {
        let params = count_params(c)?;
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            c.hidden_size,
            c.intermediate_size,
            c.num_layers,
            c.q_heads,
            c.kv_heads,
            c.activation,
            params
        ));
    }
    Ok(out)
}
