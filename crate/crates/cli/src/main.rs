//! `sieve`: ingest a corpus, distill an expensive labeling oracle into a
//! linear scorer, filter with it, and run the simulation suites.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid invocation or
//! missing inputs.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// An error in how the tool was invoked (bad flags, missing inputs,
/// refusing to overwrite). Maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Shorthand for returning a [`UsageError`].
#[macro_export]
macro_rules! usage {
    ($($arg:tt)*) => {
        return Err($crate::UsageError(format!($($arg)*)).into())
    };
}

#[derive(Parser, Debug)]
#[command(name = "sieve", version, about = "Stream-based class-balancing active distillation of a labeling oracle")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Chunk JSONL documents into a snippet store.
    Ingest(IngestArgs),
    /// Label a stream with an oracle and train a scorer.
    Distill(Box<DistillArgs>),
    /// Score a store with a trained model and write the passing ids.
    Filter(FilterArgs),
    /// Run the simulation suites and write CSVs.
    Simulate(SimulateArgs),
    /// Summarize finished runs: queries, accuracy, and cost.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Store directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Tokens per snippet.
    #[arg(long, default_value_t = sieve_core::pipeline::DEFAULT_CHUNK_TOKENS)]
    pub chunk_tokens: usize,
    /// `whitespace` or `chars4`.
    #[arg(long, default_value = "whitespace")]
    pub tokenizer: String,
    /// Add to an existing store instead of refusing.
    #[arg(long, conflicts_with = "force")]
    pub append: bool,
    /// Replace an existing store.
    #[arg(long)]
    pub force: bool,
    /// JSONL files with one `{"text": ..., "id"?: ...}` object per line.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct DistillArgs {
    /// TOML run configuration; flags and environment override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Snippet store to distill over.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Synthetic fixed-score instance (JSON from `simulate --suite instance`).
    #[arg(long)]
    pub instance: Option<PathBuf>,
    /// `sim`, `replay`, or `llm`.
    #[arg(long)]
    pub oracle: Option<String>,
    /// `sieve`, `random`, or `uncertainty`.
    #[arg(long)]
    pub strategy: Option<String>,
    /// Half-width of the uncertainty band around 0.5.
    #[arg(long)]
    pub band: Option<f64>,
    /// Total label budget T.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Labels per round B.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Failure probability of the confidence intervals.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Concurrent oracle calls.
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Intersect each interval update with the previous interval.
    #[arg(long)]
    pub intersect_updates: bool,
    /// Built-in prompt name or `custom:PATH`.
    #[arg(long)]
    pub prompt: Option<String>,
    /// Label file answered by `--oracle replay`.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Comma-separated class-0 keywords of the simulated text oracle.
    #[arg(long, value_delimiter = ',')]
    pub sim_keywords: Option<Vec<String>>,
    /// Probability that the simulated text oracle flips its answer.
    #[arg(long)]
    pub sim_noise: Option<f64>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub hash_seed: Option<u64>,
    #[arg(long)]
    pub focal_gamma: Option<f64>,
    #[arg(long)]
    pub focal_alpha: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Chat-completions endpoint for `--oracle llm`.
    #[arg(long, env = "SIEVE_LLM_ENDPOINT")]
    pub endpoint: Option<String>,
    /// Model name sent to the endpoint.
    #[arg(long, env = "SIEVE_LLM_MODEL")]
    pub model: Option<String>,
    /// Cost of one oracle query in millionths of a dollar.
    #[arg(long)]
    pub rate_micro_usd: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite an existing output directory.
    #[arg(long, conflicts_with = "resume")]
    pub force: bool,
    /// Continue an interrupted run in `--out`.
    #[arg(long)]
    pub resume: bool,
    /// Stop before consuming this stream position (crash drills).
    #[arg(long, hide = true)]
    pub stop_at: Option<u64>,
}

#[derive(Args, Debug)]
pub struct FilterArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Model file written by `distill`.
    #[arg(long)]
    pub model: PathBuf,
    /// Snippets scoring above this pass.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Scoring threads (defaults to the available cores).
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    /// Write the synthetic instance used by the other suites.
    Instance,
    /// Confidence-interval coverage over repeated runs.
    Coverage,
    /// Risk gap of the interval endpoints versus t.
    Shrinkage,
    /// Class balance of queried labels, sieve versus random.
    Balance,
    /// Bound check on random intervals of random instances.
    Certificate,
    /// Accuracy-versus-queries curves on a Gaussian task.
    Compare,
    All,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub suite: Suite,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
    /// Instance JSON to use instead of generating one.
    #[arg(long)]
    pub instance: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0.05)]
    pub prior: f64,
    /// Per-rank slope bound of the generated η curve.
    #[arg(long, default_value_t = 1e-3)]
    pub smoothness: f64,
    #[arg(long, default_value_t = 1)]
    pub instance_seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    /// Repetitions of the coverage suite.
    #[arg(long, default_value_t = 200)]
    pub runs: usize,
    /// Seeds of the balance, shrinkage, and compare suites.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    #[arg(long, default_value_t = 512)]
    pub budget: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    /// Base seed of every suite.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Run directories written by `distill`.
    #[arg(long = "run", required = true)]
    pub runs: Vec<PathBuf>,
    /// `{"id", "label"}` JSONL of held-out labels for accuracy on store runs.
    #[arg(long)]
    pub eval_labels: Option<PathBuf>,
    /// Store holding the held-out snippets (defaults to each run's store).
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Decision threshold for the accuracy column of store runs.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Compute hours spent (training and filtering), for the cost line.
    #[arg(long)]
    pub gpu_hours: Option<f64>,
    #[arg(long, default_value_t = 16.0)]
    pub gpu_usd_per_hour: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(&a),
        Command::Distill(a) => commands::distill(&a),
        Command::Filter(a) => commands::filter(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Report(a) => commands::report(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(u) = e.downcast_ref::<UsageError>() {
                eprintln!("error: {u}");
                ExitCode::from(2)
            } else {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        }
    }
}
