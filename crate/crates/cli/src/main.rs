//! `slmkit` command line: architecture enumeration, throughput
//! benchmarking and search, quantization audits, weights containers, and
//! function-call scoring.
//!
//! Machine-readable output goes to stdout (or `--out`); progress logging
//! goes to stderr. Exit codes: 0 success, 65 invalid input data, 66
//! missing input file, 2 usage errors, 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use slmkit::archspace::{
    candidates_to_csv, count_params, enumerate_candidates, ArchConfig, SearchSpace,
};
use slmkit::audit::{audit_q4, audit_rope};
use slmkit::bench::{
    rank_reports, render_report, run_benchmark, run_search, BenchmarkPlan, Ranking, RankingMetric,
    ReportFormat, ThroughputReport,
};
use slmkit::engine::{init_random_weights, load_weights, read_manifest, save_weights, Precision};
use slmkit::funcall::{evaluate, load_outputs, load_samples};

const EXIT_INVALID_DATA: u8 = 65;
const EXIT_MISSING_INPUT: u8 = 66;

#[derive(Debug)]
enum CliError {
    MissingInput(PathBuf),
    InvalidData(String),
    Other(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::MissingInput(p) => write!(f, "missing input file: {}", p.display()),
            CliError::InvalidData(m) => write!(f, "invalid input: {m}"),
            CliError::Other(m) => f.write_str(m),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::MissingInput(_) => EXIT_MISSING_INPUT,
            CliError::InvalidData(_) => EXIT_INVALID_DATA,
            CliError::Other(_) => 1,
        }
    }
}

macro_rules! invalid_from {
    ($($ty:ty),+) => {$(
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::InvalidData(e.to_string())
            }
        }
    )+};
}

invalid_from!(
    slmkit::archspace::ArchError,
    slmkit::quantkit::QuantError,
    slmkit::funcall::FuncallError,
    slmkit::bench::BenchError
);

impl From<slmkit::engine::EngineError> for CliError {
    fn from(e: slmkit::engine::EngineError) -> Self {
        use slmkit::engine::EngineError;
        match e {
            EngineError::Io(io) => CliError::Other(io.to_string()),
            other => CliError::InvalidData(other.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn read_input(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingInput(path.to_path_buf())
        } else {
            CliError::Other(format!("{}: {e}", path.display()))
        }
    })
}

fn require_exists(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingInput(path.to_path_buf()))
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> CliResult<T> {
    serde_json::from_str(text).map_err(|e| CliError::InvalidData(format!("{what}: {e}")))
}

fn load_arch_config(path: &Path) -> CliResult<ArchConfig> {
    let config: ArchConfig = parse_json(&read_input(path)?, "architecture config")?;
    config.validate()?;
    Ok(config)
}

fn load_search_space(path: &Path) -> CliResult<SearchSpace> {
    let space: SearchSpace = parse_json(&read_input(path)?, "search space config")?;
    space.validate()?;
    Ok(space)
}

fn write_stdout(content: &str) -> CliResult<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(content.as_bytes()).and_then(|()| out.flush()) {
        Ok(()) => Ok(()),
        // Downstream closed the pipe (e.g. `| head`); not our error.
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
        Err(e) => Err(CliError::Other(e.to_string())),
    }
}

fn emit(out: Option<&Path>, content: &str) -> CliResult<()> {
    match out {
        Some(path) => std::fs::write(path, content)
            .map_err(|e| CliError::Other(format!("{}: {e}", path.display()))),
        None => write_stdout(content),
    }
}

fn default_threads() -> usize {
    std::env::var("SLMKIT_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(4)
}

#[derive(Parser)]
#[command(
    name = "slmkit",
    version,
    about = "Latency-first architecture search for small decoder models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Log progress to stderr.
    #[arg(long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Count the parameters of a decoder configuration.
    CountParams(CountParamsArgs),
    /// Enumerate candidate configurations under a parameter budget.
    Enumerate(EnumerateArgs),
    /// Benchmark one configuration with seeded random weights.
    Bench(BenchArgs),
    /// Enumerate, benchmark, and rank candidates.
    Search(SearchArgs),
    /// Exhaustively verify quantization error bounds.
    Audit(AuditArgs),
    /// Score function-call outputs against ground truth.
    FuncallEval(FuncallEvalArgs),
    /// Write or inspect binary weights containers.
    #[command(subcommand)]
    Weights(WeightsCommand),
}

#[derive(Args)]
struct CountParamsArgs {
    /// Architecture config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output format: `text` prints the bare count, `json` prints {"params": N}.
    #[arg(long, default_value = "text")]
    format: CountFormat,
}

#[derive(Clone, Copy, ValueEnum)]
enum CountFormat {
    Text,
    Json,
}

#[derive(Args)]
struct EnumerateArgs {
    /// Search-space config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv, json, or md.
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Args)]
struct PlanArgs {
    /// Comma-separated prompt lengths.
    #[arg(long, value_delimiter = ',', default_values_t = [32usize, 64, 128, 256, 512, 1024])]
    prompt_lens: Vec<usize>,
    /// Tokens generated per run.
    #[arg(long, default_value_t = 100)]
    gen_tokens: usize,
    /// Timed runs per prompt length.
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Untimed warmup runs per prompt length.
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Engine worker pool size; SLMKIT_THREADS sets the default (else 4).
    #[arg(long)]
    threads: Option<usize>,
}

impl PlanArgs {
    fn plan(&self) -> BenchmarkPlan {
        BenchmarkPlan {
            prompt_lengths: self.prompt_lens.clone(),
            gen_tokens: self.gen_tokens,
            repeats: self.repeats,
            warmup_runs: self.warmup,
            threads: self.threads.unwrap_or_else(default_threads),
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct BenchArgs {
    /// Architecture config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    plan: PlanArgs,
    /// Weight representation for the run.
    #[arg(long, default_value = "q4")]
    precision: PrecisionArg,
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv, json, or md.
    #[arg(long, default_value = "json")]
    format: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    Float,
    Q4,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::Float => Precision::Float,
            PrecisionArg::Q4 => Precision::Q4,
        }
    }
}

#[derive(Args)]
struct SearchArgs {
    /// Search-space config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    plan: PlanArgs,
    /// `prefill`, `decode`, or `weighted:<w>`.
    #[arg(long, default_value = "prefill")]
    ranking: String,
    /// Prompt length the ranking metric is evaluated at.
    #[arg(long, default_value_t = 64)]
    rank_len: usize,
    /// Persist full per-candidate reports (with raw timings) here.
    #[arg(long)]
    timings_out: Option<PathBuf>,
    /// Re-rank persisted reports instead of measuring.
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv, json, or md.
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Args)]
struct AuditArgs {
    /// What to audit.
    kind: AuditKind,
    /// Architecture config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Seed for the q4 weight audit.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AuditKind {
    Rope,
    Q4,
}

#[derive(Args)]
struct FuncallEvalArgs {
    /// Evaluation samples (JSON-lines).
    #[arg(long)]
    samples: PathBuf,
    /// Model outputs: `.jsonl` files are parsed as JSON-lines, anything
    /// else as blank-line-separated plain text.
    #[arg(long)]
    outputs: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// json or md.
    #[arg(long, default_value = "json")]
    format: String,
}

#[derive(Subcommand)]
enum WeightsCommand {
    /// Generate seeded random weights and write a container file.
    Dump(WeightsDumpArgs),
    /// Print a container's config and tensor directory.
    Inspect(WeightsInspectArgs),
}

#[derive(Args)]
struct WeightsDumpArgs {
    /// Architecture config (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = "q4")]
    precision: PrecisionArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct WeightsInspectArgs {
    /// Container file.
    path: PathBuf,
    /// json or text.
    #[arg(long, default_value = "json")]
    format: String,
}

fn parse_ranking(text: &str, rank_len: usize) -> CliResult<Ranking> {
    let metric = match text {
        "prefill" => RankingMetric::Prefill,
        "decode" => RankingMetric::Decode,
        "weighted" => RankingMetric::Weighted(0.5),
        other => match other.strip_prefix("weighted:") {
            Some(w) => {
                let w: f64 = w
                    .parse()
                    .map_err(|_| CliError::InvalidData(format!("bad ranking weight `{w}`")))?;
                if !(0.0..=1.0).contains(&w) {
                    return Err(CliError::InvalidData(format!(
                        "ranking weight {w} outside [0, 1]"
                    )));
                }
                RankingMetric::Weighted(w)
            }
            None => {
                return Err(CliError::InvalidData(format!(
                    "unknown ranking `{other}` (expected prefill, decode, or weighted:<w>)"
                )))
            }
        },
    };
    Ok(Ranking {
        metric,
        prompt_len: rank_len,
    })
}

fn report_format(text: &str) -> CliResult<ReportFormat> {
    text.parse().map_err(CliError::InvalidData)
}

fn cmd_count_params(args: &CountParamsArgs) -> CliResult<()> {
    let config = load_arch_config(&args.config)?;
    let params = count_params(&config)?;
    match args.format {
        CountFormat::Text => write_stdout(&format!("{params}\n")),
        CountFormat::Json => {
            write_stdout(&format!("{}\n", serde_json::json!({ "params": params })))
        }
    }
}

fn cmd_enumerate(args: &EnumerateArgs, verbose: bool) -> CliResult<()> {
    let space = load_search_space(&args.config)?;
    let candidates = enumerate_candidates(&space)?;
    if verbose {
        eprintln!("enumerated {} candidates", candidates.len());
    }
    let content = match args.format.as_str() {
        "csv" => candidates_to_csv(&candidates)?,
        "json" => {
            let rows: Vec<serde_json::Value> = candidates
                .iter()
                .map(|c| {
                    serde_json::json!({
                        "hidden": c.hidden_size,
                        "intermediate": c.intermediate_size,
                        "layers": c.num_layers,
                        "q_heads": c.q_heads,
                        "kv_heads": c.kv_heads,
                        "activation": c.activation.as_str(),
                        "params": count_params(c).unwrap_or(0),
                    })
                })
                .collect();
            let mut s = serde_json::to_string_pretty(&rows).expect("candidates serialize");
            s.push('\n');
            s
        }
        "md" | "markdown" => {
            let mut s = String::from(
                "| hidden | intermediate | layers | q_heads | kv_heads | activation | params |\n\
                 |---|---|---|---|---|---|---|\n",
            );
            for c in &candidates {
                s.push_str(&format!(
                    "| {} | {} | {} | {} | {} | {} | {} |\n",
                    c.hidden_size,
                    c.intermediate_size,
                    c.num_layers,
                    c.q_heads,
                    c.kv_heads,
                    c.activation,
                    count_params(c).unwrap_or(0)
                ));
            }
            s
        }
        other => return Err(CliError::InvalidData(format!("unknown format `{other}`"))),
    };
    emit(args.out.as_deref(), &content)
}

fn bench_rows_csv(report: &ThroughputReport) -> String {
    let mut s = String::from(
        "prompt_len,prefill_tps_mean,prefill_tps_stdev,decode_tps_mean,decode_tps_stdev\n",
    );
    for row in &report.rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            row.prompt_len,
            row.prefill_tps_mean,
            row.prefill_tps_stdev,
            row.decode_tps_mean,
            row.decode_tps_stdev
        ));
    }
    s
}

fn cmd_bench(args: &BenchArgs, verbose: bool) -> CliResult<()> {
    let config = load_arch_config(&args.config)?;
    let plan = args.plan.plan();
    plan.validate(config.context_len)?;
    if verbose {
        eprintln!(
            "benchmarking {}x{} L{} at {} precision, {} threads",
            config.hidden_size,
            config.intermediate_size,
            config.num_layers,
            match args.precision {
                PrecisionArg::Float => "float",
                PrecisionArg::Q4 => "q4",
            },
            plan.threads
        );
    }
    let model = init_random_weights(&config, plan.seed, args.precision.into())?;
    let report = run_benchmark(&model, &plan)?;
    let content = match args.format.as_str() {
        "json" => {
            let mut s = serde_json::to_string_pretty(&report).expect("report serializes");
            s.push('\n');
            s
        }
        "csv" => bench_rows_csv(&report),
        "md" | "markdown" => {
            let mut s = String::from(
                "| prompt_len | prefill_tps | ± | decode_tps | ± |\n|---|---|---|---|---|\n",
            );
            for row in &report.rows {
                s.push_str(&format!(
                    "| {} | {:.2} | {:.2} | {:.2} | {:.2} |\n",
                    row.prompt_len,
                    row.prefill_tps_mean,
                    row.prefill_tps_stdev,
                    row.decode_tps_mean,
                    row.decode_tps_stdev
                ));
            }
            s
        }
        other => return Err(CliError::InvalidData(format!("unknown format `{other}`"))),
    };
    emit(args.out.as_deref(), &content)
}

fn cmd_search(args: &SearchArgs, verbose: bool) -> CliResult<()> {
    let ranking = parse_ranking(&args.ranking, args.rank_len)?;
    let format = report_format(&args.format)?;

    let ranked = if let Some(replay) = &args.replay {
        let reports: Vec<ThroughputReport> = parse_json(&read_input(replay)?, "persisted timings")?;
        if verbose {
            eprintln!("re-ranking {} persisted reports", reports.len());
        }
        rank_reports(&reports, &ranking)?
    } else {
        let space = load_search_space(&args.config)?;
        let plan = args.plan.plan();
        if verbose {
            eprintln!(
                "searching under budget {} ± {}%",
                space.budget,
                space.tolerance * 100.0
            );
        }
        let (ranked, reports) = run_search(&space, &plan, &ranking)?;
        if let Some(path) = &args.timings_out {
            let mut s = serde_json::to_string_pretty(&reports).expect("reports serialize");
            s.push('\n');
            std::fs::write(path, s)
                .map_err(|e| CliError::Other(format!("{}: {e}", path.display())))?;
            if verbose {
                eprintln!("persisted raw timings to {}", path.display());
            }
        }
        ranked
    };
    emit(args.out.as_deref(), &render_report(&ranked, format)?)
}

fn cmd_audit(args: &AuditArgs) -> CliResult<()> {
    let config = load_arch_config(&args.config)?;
    let (content, ok) = match args.kind {
        AuditKind::Rope => {
            let audit = audit_rope(&config)?;
            let mut s = serde_json::to_string_pretty(&audit).expect("audit serializes");
            s.push('\n');
            (s, audit.ok)
        }
        AuditKind::Q4 => {
            let audit = audit_q4(&config, args.seed)?;
            let mut s = serde_json::to_string_pretty(&audit).expect("audit serializes");
            s.push('\n');
            (s, audit.ok)
        }
    };
    emit(args.out.as_deref(), &content)?;
    if !ok {
        return Err(CliError::Other("audit found bound violations".into()));
    }
    Ok(())
}

fn cmd_funcall_eval(args: &FuncallEvalArgs) -> CliResult<()> {
    let samples = load_samples(&read_input(&args.samples)?)?;
    let jsonl = args
        .outputs
        .extension()
        .is_some_and(|ext| ext.eq_ignore_ascii_case("jsonl"));
    let outputs = load_outputs(&read_input(&args.outputs)?, jsonl)?;
    let report = evaluate(&outputs, &samples)?;
    let content = match args.format.as_str() {
        "json" => {
            let mut s = serde_json::to_string_pretty(&report).expect("report serializes");
            s.push('\n');
            s
        }
        "md" | "markdown" => {
            let mut s = format!(
                "accuracy: {:.4}\nsoft_accuracy: {:.4}\nsamples: {}\nskipped_lines: {}\n\n\
                 | sample | matched | call scores | parsed | skipped |\n|---|---|---|---|---|\n",
                report.accuracy,
                report.soft_accuracy,
                report.num_samples,
                report.total_skipped_lines
            );
            for (i, sample) in report.samples.iter().enumerate() {
                let scores: Vec<String> = sample
                    .call_scores
                    .iter()
                    .map(|v| format!("{v:.2}"))
                    .collect();
                s.push_str(&format!(
                    "| {} | {} | {} | {} | {} |\n",
                    i,
                    sample.matched,
                    scores.join(" "),
                    sample.parsed_calls,
                    sample.skipped_lines
                ));
            }
            s
        }
        other => return Err(CliError::InvalidData(format!("unknown format `{other}`"))),
    };
    emit(args.out.as_deref(), &content)
}

fn cmd_weights(command: &WeightsCommand, verbose: bool) -> CliResult<()> {
    match command {
        WeightsCommand::Dump(args) => {
            let config = load_arch_config(&args.config)?;
            let model = init_random_weights(&config, args.seed, args.precision.into())?;
            save_weights(&model, &args.out)?;
            if verbose {
                eprintln!(
                    "wrote {} ({} params) to {}",
                    match args.precision {
                        PrecisionArg::Float => "float",
                        PrecisionArg::Q4 => "q4",
                    },
                    model.param_count(),
                    args.out.display()
                );
            }
            Ok(())
        }
        WeightsCommand::Inspect(args) => {
            require_exists(&args.path)?;
            let manifest = read_manifest(&args.path)?;
            // Decode everything once so a corrupt container fails inspect.
            load_weights(&args.path)?;
            let content = match args.format.as_str() {
                "json" => {
                    let mut s =
                        serde_json::to_string_pretty(&manifest).expect("manifest serializes");
                    s.push('\n');
                    s
                }
                "text" => {
                    let c = &manifest.config;
                    let mut s = format!(
                        "config: hidden {} intermediate {} layers {} heads {}/{} {} vocab {} context {}\nprecision: {}\n",
                        c.hidden_size,
                        c.intermediate_size,
                        c.num_layers,
                        c.q_heads,
                        c.kv_heads,
                        c.activation,
                        c.vocab_size,
                        c.context_len,
                        manifest.precision
                    );
                    for t in &manifest.tensors {
                        s.push_str(&format!(
                            "{:32} {:?} {:>9} bytes at {}\n",
                            t.name, t.shape, t.len, t.offset
                        ));
                    }
                    s
                }
                other => return Err(CliError::InvalidData(format!("unknown format `{other}`"))),
            };
            write_stdout(&content)
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::CountParams(args) => cmd_count_params(args),
        Command::Enumerate(args) => cmd_enumerate(args, cli.verbose),
        Command::Bench(args) => cmd_bench(args, cli.verbose),
        Command::Search(args) => cmd_search(args, cli.verbose),
        Command::Audit(args) => cmd_audit(args),
        Command::FuncallEval(args) => cmd_funcall_eval(args),
        Command::Weights(command) => cmd_weights(command, cli.verbose),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
