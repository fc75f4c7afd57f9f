//! `tpc` command-line driver. [`run`] parses arguments, executes one
//! subcommand and returns the process exit code.

mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{validate_config, RunConfig};
pub use manifest::RunManifest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "tpc", version, about = "Remaining length-of-stay prediction with TPC networks")]
pub struct Cli {
    /// Worker threads. 1 (the default) runs single-threaded and is fully
    /// deterministic; more threads parallelise evaluation, attribution and
    /// simulation.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort (raw event files plus processed dataset).
    Synth(SynthArgs),
    /// Turn raw event CSVs into a processed dataset directory.
    Preprocess(PreprocessArgs),
    /// Train a model and keep the best validation checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Integrated-gradients feature attribution at hour 24.
    Attribute(AttributeArgs),
    /// MAPE grid by day of stay and predicted remaining stay.
    Reliability(ReliabilityArgs),
    /// Simulate ICU occupancy from frozen predictions.
    Simulate(SimulateArgs),
    /// Score the mean or median constant predictor.
    Baseline(BaselineArgs),
    /// Check a config file and write it with defaults filled in.
    ValidateConfig(ValidateConfigArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub patients: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON generator settings.
    #[arg(long)]
    pub gen_config: Option<PathBuf>,
    /// Seed of the patient split; defaults to `--seed`.
    #[arg(long)]
    pub split_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub raw: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoint.json, history.csv and config.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub multitask: bool,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub feature_subset: Option<String>,
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub source: SourceArgs,
}

#[derive(Debug, Args)]
pub struct AttributeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value_t = tpc_core::analysis::DEFAULT_IG_STEPS)]
    pub steps: usize,
    #[arg(long, default_value_t = tpc_core::analysis::ATTRIBUTION_HOUR)]
    pub hour: usize,
    /// Attribute at most this many stays (in split order).
    #[arg(long)]
    pub max_stays: Option<usize>,
}

/// Either a trained checkpoint or a constant baseline.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct PredictorArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// `mean` or `median`.
    #[arg(long)]
    pub baseline: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReliabilityArgs {
    #[command(flatten)]
    pub predictor: PredictorArgs,
    #[command(flatten)]
    pub source: SourceArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub predictor: PredictorArgs,
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value_t = tpc_core::analysis::DEFAULT_RUNS)]
    pub runs: usize,
    #[arg(long, default_value_t = tpc_core::analysis::DEFAULT_COHORT)]
    pub cohort: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    /// `mean` or `median`.
    #[arg(long)]
    pub kind: String,
    #[command(flatten)]
    pub source: SourceArgs,
}

#[derive(Debug, Args)]
pub struct ValidateConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Where to write the normalized config.
    #[arg(long)]
    pub out: PathBuf,
}

/// A failed command and its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }
}

impl From<tpc_core::Error> for Failure {
    fn from(e: tpc_core::Error) -> Self {
        use tpc_core::Error as E;
        let code = match e {
            E::Config(_)
            | E::UnknownFeature(_)
            | E::Load { .. }
            | E::Dataset(_)
            | E::Split(_)
            | E::HashMismatch { .. }
            | E::Csv(_)
            | E::Json(_) => EXIT_VALIDATION,
            _ => EXIT_RUNTIME,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure {
            code: EXIT_RUNTIME,
            message: e.to_string(),
        }
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("TPC_LOG_LEVEL", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Runs one command line (including the program name) and returns the
/// exit code: 0 on success, 1 on invalid input, 2 on runtime failure.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return EXIT_VALIDATION;
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_RUNTIME;
        }
    };
    let args: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match pool.install(|| commands::dispatch(&cli, &args)) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
