//! Throughput measurement protocol and architecture-search ranking.
//!
//! A benchmark cell runs, per prompt length: warmup runs (untimed), then
//! `repeats` runs of prefill over a seeded random prompt followed by
//! `gen_tokens` greedy decode steps on a fresh KV cache. Prefill and
//! decode are timed separately with a monotonic clock; sampling the first
//! generated token (final-position logits and argmax) is attributed to
//! the decode phase. Candidates are always benchmarked sequentially.

mod render;

pub use render::{
    parse_report_csv, render_report, CsvReportRow, ReportFormat, SEARCH_REPORT_SCHEMA,
};

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archspace::{count_params, enumerate_candidates, ArchConfig, ArchError, SearchSpace};
use crate::engine::{argmax, init_random_weights, EngineError, ModelWeights, Precision, Session};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("search space produced no candidates")]
    EmptyCandidates,
    #[error("ranking prompt length {0} was not measured")]
    RankLenNotMeasured(usize),
    #[error("reports come from different environments and cannot be ranked together")]
    EnvironmentMismatch,
    #[error("nothing to rank")]
    EmptyReports,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// What to execute: prompt lengths, decode length, repeats, pool size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkPlan {
    pub prompt_lengths: Vec<usize>,
    pub gen_tokens: usize,
    pub repeats: usize,
    pub warmup_runs: usize,
    pub threads: usize,
    pub seed: u64,
}

impl Default for BenchmarkPlan {
    fn default() -> Self {
        Self {
            prompt_lengths: vec![32, 64, 128, 256, 512, 1024],
            gen_tokens: 100,
            repeats: 5,
            warmup_runs: 1,
            threads: 4,
            seed: 42,
        }
    }
}

impl BenchmarkPlan {
    pub fn validate(&self, context_len: usize) -> Result<(), BenchError> {
        if self.prompt_lengths.is_empty() {
            return Err(BenchError::InvalidPlan("no prompt lengths".into()));
        }
        if self.repeats == 0 {
            return Err(BenchError::InvalidPlan("repeats must be >= 1".into()));
        }
        if self.gen_tokens == 0 {
            return Err(BenchError::InvalidPlan("gen_tokens must be >= 1".into()));
        }
        if self.threads == 0 {
            return Err(BenchError::InvalidPlan("threads must be >= 1".into()));
        }
        for &len in &self.prompt_lengths {
            if len == 0 {
                return Err(BenchError::InvalidPlan("zero-length prompt".into()));
            }
            if len + self.gen_tokens > context_len {
                return Err(BenchError::InvalidPlan(format!(
                    "prompt {len} plus {} generated tokens exceeds context {context_len}",
                    self.gen_tokens
                )));
            }
        }
        Ok(())
    }
}

/// Where a report was measured. Reports from different environments are
/// never ranked together.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvDescriptor {
    pub host: String,
    pub os: String,
    pub arch: String,
    pub threads: usize,
}

impl EnvDescriptor {
    pub fn detect(threads: usize) -> Self {
        let host = std::env::var("HOSTNAME")
            .ok()
            .filter(|h| !h.is_empty())
            .or_else(|| {
                std::fs::read_to_string("/etc/hostname")
                    .ok()
                    .map(|s| s.trim().to_string())
                    .filter(|h| !h.is_empty())
            })
            .unwrap_or_else(|| "unknown-host".to_string());
        Self {
            host,
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            threads,
        }
    }
}

/// Wall times of one timed run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepeatTiming {
    pub prefill_secs: f64,
    pub decode_secs: f64,
}

/// All timed runs for one prompt length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthTimings {
    pub prompt_len: usize,
    pub repeats: Vec<RepeatTiming>,
}

/// Mean and sample standard deviation of per-repeat throughput.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthStats {
    pub prompt_len: usize,
    pub prefill_tps_mean: f64,
    pub prefill_tps_stdev: f64,
    pub decode_tps_mean: f64,
    pub decode_tps_stdev: f64,
}

/// One model's full benchmark result, including per-repeat raw timings so
/// that rankings can be recomputed without re-measuring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub config: ArchConfig,
    pub params: u64,
    pub precision: Precision,
    pub environment: EnvDescriptor,
    pub gen_tokens: usize,
    pub repeats: usize,
    pub seed: u64,
    pub rows: Vec<LengthStats>,
    pub raw: Vec<LengthTimings>,
}

impl ThroughputReport {
    pub fn stats_for(&self, prompt_len: usize) -> Option<&LengthStats> {
        self.rows.iter().find(|r| r.prompt_len == prompt_len)
    }
}

fn mean_and_stdev(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Derives throughput statistics from raw wall times. Pure, so replaying
/// persisted timings reproduces identical numbers.
pub fn stats_from_timings(raw: &[LengthTimings], gen_tokens: usize) -> Vec<LengthStats> {
    raw.iter()
        .map(|cell| {
            let prefill: Vec<f64> = cell
                .repeats
                .iter()
                .map(|t| cell.prompt_len as f64 / t.prefill_secs)
                .collect();
            let decode: Vec<f64> = cell
                .repeats
                .iter()
                .map(|t| gen_tokens as f64 / t.decode_secs)
                .collect();
            let (pm, ps) = mean_and_stdev(&prefill);
            let (dm, ds) = mean_and_stdev(&decode);
            LengthStats {
                prompt_len: cell.prompt_len,
                prefill_tps_mean: pm,
                prefill_tps_stdev: ps,
                decode_tps_mean: dm,
                decode_tps_stdev: ds,
            }
        })
        .collect()
}

/// Deterministic prompt for a `(seed, length)` pair: tokens uniform over
/// the vocabulary from a ChaCha stream.
pub fn prompt_tokens(seed: u64, prompt_len: usize, vocab_size: usize) -> Vec<u32> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (prompt_len as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    (0..prompt_len)
        .map(|_| rng.random_range(0..vocab_size as u32))
        .collect()
}

/// Anything that can prefill a prompt and decode greedily; lets tests
/// instrument the protocol without a real model.
pub trait DecodeSession {
    /// Processes the prompt, filling internal state. Untimed logits.
    fn prefill(&mut self, tokens: &[u32]) -> Result<(), EngineError>;
    /// Logits at the last processed position.
    fn logits(&mut self) -> Result<Vec<f32>, EngineError>;
    /// Extends by one token and returns the new position's logits.
    fn decode(&mut self, token: u32) -> Result<Vec<f32>, EngineError>;
}

impl DecodeSession for Session<'_> {
    fn prefill(&mut self, tokens: &[u32]) -> Result<(), EngineError> {
        self.advance(tokens)
    }

    fn logits(&mut self) -> Result<Vec<f32>, EngineError> {
        self.current_logits()
    }

    fn decode(&mut self, token: u32) -> Result<Vec<f32>, EngineError> {
        self.decode_step(token)
    }
}

/// Runs the timing protocol against session instances from `factory`.
///
/// Per prompt length and run: a fresh session, timed prefill, then a timed
/// decode phase of first-token sampling plus `gen_tokens` decode steps.
/// Warmup runs execute identically but are not recorded.
pub fn run_session_benchmark<S, F>(
    mut factory: F,
    vocab_size: usize,
    plan: &BenchmarkPlan,
) -> Result<Vec<LengthTimings>, BenchError>
where
    S: DecodeSession,
    F: FnMut() -> S,
{
    let mut out = Vec::with_capacity(plan.prompt_lengths.len());
    for &prompt_len in &plan.prompt_lengths {
        let prompt = prompt_tokens(plan.seed, prompt_len, vocab_size);
        let mut repeats = Vec::with_capacity(plan.repeats);
        for run in 0..plan.warmup_runs + plan.repeats {
            let mut session = factory();

            let prefill_start = Instant::now();
            session.prefill(&prompt)?;
            let prefill_secs = prefill_start.elapsed().as_secs_f64();

            let decode_start = Instant::now();
            let logits = session.logits()?;
            let mut next = argmax(&logits) as u32;
            for _ in 0..plan.gen_tokens {
                let logits = session.decode(next)?;
                next = argmax(&logits) as u32;
            }
            let decode_secs = decode_start.elapsed().as_secs_f64();

            if run >= plan.warmup_runs {
                repeats.push(RepeatTiming {
                    prefill_secs,
                    decode_secs,
                });
            }
        }
        out.push(LengthTimings {
            prompt_len,
            repeats,
        });
    }
    Ok(out)
}

/// Benchmarks one model, running the engine inside a dedicated rayon pool
/// of `plan.threads` workers.
pub fn run_benchmark(
    model: &ModelWeights,
    plan: &BenchmarkPlan,
) -> Result<ThroughputReport, BenchError> {
    let config = model.config();
    plan.validate(config.context_len)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.threads)
        .build()
        .map_err(|e| BenchError::Pool(e.to_string()))?;
    let raw =
        pool.install(|| run_session_benchmark(|| Session::new(model), config.vocab_size, plan))?;
    let rows = stats_from_timings(&raw, plan.gen_tokens);
    Ok(ThroughputReport {
        config: config.clone(),
        params: model.param_count(),
        precision: model.precision(),
        environment: EnvDescriptor::detect(plan.threads),
        gen_tokens: plan.gen_tokens,
        repeats: plan.repeats,
        seed: plan.seed,
        rows,
        raw,
    })
}

/// Throughput aggregate used to order candidates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankingMetric {
    Prefill,
    Decode,
    /// `w * prefill_tps + (1 - w) * decode_tps`.
    Weighted(f64),
}

impl RankingMetric {
    pub fn score(&self, prefill_tps: f64, decode_tps: f64) -> f64 {
        match self {
            RankingMetric::Prefill => prefill_tps,
            RankingMetric::Decode => decode_tps,
            RankingMetric::Weighted(w) => w * prefill_tps + (1.0 - w) * decode_tps,
        }
    }

    pub fn descriptor(&self) -> String {
        match self {
            RankingMetric::Prefill => "prefill".to_string(),
            RankingMetric::Decode => "decode".to_string(),
            RankingMetric::Weighted(w) => format!("weighted({w})"),
        }
    }
}

/// Metric plus the prompt length it is evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub metric: RankingMetric,
    pub prompt_len: usize,
}

impl Default for Ranking {
    fn default() -> Self {
        Self {
            metric: RankingMetric::Prefill,
            prompt_len: 64,
        }
    }
}

/// One ranked candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRow {
    pub config: ArchConfig,
    pub params: u64,
    pub prefill_tps: f64,
    pub decode_tps: f64,
    pub score: f64,
}

/// Candidates ordered best first under the declared metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSearchResult {
    pub metric: String,
    pub prompt_len: usize,
    pub environment: EnvDescriptor,
    pub rows: Vec<RankedRow>,
}

/// Orders measured reports by the ranking metric at its prompt length.
///
/// Pure over the measured numbers: score descending, ties broken by fewer
/// params, then fewer layers, then the remaining shape fields. All reports
/// must share one environment descriptor.
pub fn rank_reports(
    reports: &[ThroughputReport],
    ranking: &Ranking,
) -> Result<RankedSearchResult, BenchError> {
    let first = reports.first().ok_or(BenchError::EmptyReports)?;
    if reports.iter().any(|r| r.environment != first.environment) {
        return Err(BenchError::EnvironmentMismatch);
    }
    let mut rows = Vec::with_capacity(reports.len());
    for report in reports {
        let stats = report
            .stats_for(ranking.prompt_len)
            .ok_or(BenchError::RankLenNotMeasured(ranking.prompt_len))?;
        rows.push(RankedRow {
            config: report.config.clone(),
            params: report.params,
            prefill_tps: stats.prefill_tps_mean,
            decode_tps: stats.decode_tps_mean,
            score: ranking
                .metric
                .score(stats.prefill_tps_mean, stats.decode_tps_mean),
        });
    }
    rows.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.params.cmp(&b.params))
            .then_with(|| a.config.num_layers.cmp(&b.config.num_layers))
            .then_with(|| a.config.hidden_size.cmp(&b.config.hidden_size))
            .then_with(|| a.config.intermediate_size.cmp(&b.config.intermediate_size))
            .then_with(|| a.config.q_heads.cmp(&b.config.q_heads))
            .then_with(|| a.config.kv_heads.cmp(&b.config.kv_heads))
            .then_with(|| a.config.activation.cmp(&b.config.activation))
    });
    Ok(RankedSearchResult {
        metric: ranking.metric.descriptor(),
        prompt_len: ranking.prompt_len,
        environment: first.environment.clone(),
        rows,
    })
}

/// Enumerates a search space, benchmarks every candidate with 4-bit random
/// weights under the same plan and seed, and ranks them.
///
/// Candidates run strictly sequentially so timings never contend; the only
/// parallelism is the engine worker pool of `plan.threads`.
pub fn run_search(
    space: &SearchSpace,
    plan: &BenchmarkPlan,
    ranking: &Ranking,
) -> Result<(RankedSearchResult, Vec<ThroughputReport>), BenchError> {
    let candidates = enumerate_candidates(space)?;
    if candidates.is_empty() {
        return Err(BenchError::EmptyCandidates);
    }
    if !plan.prompt_lengths.contains(&ranking.prompt_len) {
        return Err(BenchError::RankLenNotMeasured(ranking.prompt_len));
    }
    let mut reports = Vec::with_capacity(candidates.len());
    for candidate in &candidates {
        count_params(candidate)?;
        let model = init_random_weights(candidate, plan.seed, Precision::Q4)?;
        reports.push(run_benchmark(&model, plan)?);
    }
    let ranked = rank_reports(&reports, ranking)?;
    Ok((ranked, reports))
}
