//! Command-line driver: dataset generation, training, evaluation, reporting
//! and gradient checks, each leaving a manifest next to its artifacts.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ddlab::dataset::Split;
use ddlab::models::ModelKind;

pub use error::{CliError, Result};

/// Environment variable naming the default artifact root.
pub const ARTIFACTS_ENV: &str = "DDLAB_ARTIFACTS";

#[derive(Debug, Parser)]
#[command(name = "ddlab", version, about = "Dilated DenseNets vs relation networks on Sort-of-CLEVR")]
pub struct Cli {
    /// Root directory for generated artifacts.
    #[arg(long, global = true, env = ARTIFACTS_ENV, default_value = "artifacts")]
    pub artifacts: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a Sort-of-CLEVR dataset file.
    GenData(GenDataArgs),
    /// Train one model kind for one or more seeds.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a dataset.
    Eval(EvalArgs),
    /// Summarize finished experiments as a mean ± std table.
    Report(ReportArgs),
    /// Finite-difference check of every differentiable operation.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 10_000)]
    pub images: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub questions_per_family: usize,
    /// Output file [default: <artifacts>/data/soc-<images>-<seed>.bin].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// cnn-mlp, cnn-rn, densenet or dilated-densenet.
    #[arg(long)]
    pub model: ModelKind,
    /// Dataset file written by `gen-data`.
    #[arg(long)]
    pub data: PathBuf,
    /// TOML file with training settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated seeds, one run each.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Images per mini-batch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_max: Option<f64>,
    #[arg(long)]
    pub lr_min: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub adam_eps: Option<f64>,
    /// Experiment root [default: <artifacts>/runs].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Suppress per-epoch progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Expected architecture; refused if the checkpoint holds another.
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// Images per forward pass.
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Experiment directories (`<root>/<model>`) or single run directories.
    #[arg(required = true)]
    pub dirs: Vec<PathBuf>,
    /// Also write the table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = ddlab::verify::DEFAULT_INSTANCES)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Only checks whose name contains this string.
    #[arg(long)]
    pub filter: Option<String>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => commands::gen_data(&a, &cli.artifacts),
        Command::Train(a) => commands::train(&a, &cli.artifacts).map(|_| ()),
        Command::Eval(a) => commands::eval(&a).map(|_| ()),
        Command::Report(a) => commands::report(&a),
        Command::GradCheck(a) => commands::grad_check(&a),
    }
}
