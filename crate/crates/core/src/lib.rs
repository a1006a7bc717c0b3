//! Latency-first toolkit for small transformer decoders.
//!
//! The crate covers the full pre-training architecture-selection loop:
//!
//! - [`archspace`]: exact parameter counting and budgeted enumeration of
//!   decoder configurations.
//! - [`quantkit`]: 4-bit block weight quantization and INT8-quantized
//!   rotary embedding tables.
//! - [`engine`]: a minimal CPU decoder (float and 4-bit paths) with
//!   KV caching, plus a binary weights container.
//! - [`mod@bench`]: the prefill/decode throughput protocol and candidate
//!   ranking.
//! - [`audit`]: exhaustive quantization-error scans.
//! - [`funcall`]: function-call prompt rendering, output parsing, and
//!   accuracy / soft-accuracy scoring.

pub mod archspace;
pub mod audit;
pub mod bench;
pub mod engine;
pub mod funcall;
pub mod quantkit;

pub use archspace::{Activation, ArchConfig, SearchSpace};
pub use bench::{BenchmarkPlan, RankedSearchResult, ThroughputReport};
pub use engine::{KvCache, ModelWeights, Precision, Session};
pub use quantkit::{Q4BlockTensor, RopeTableQ8, RopeTables};
