//! Command-line driver. Every command writes `manifest.json` into its output
//! directory before doing any work; outputs are CSV and JSON.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use taskhyper::evalkit::{Aggregation, Mode};
use taskhyper::ErrorClass;

mod data;
mod evaluate;
mod gradcheck;
mod manifest;
mod synth;
mod taskembed;
mod train;

pub use manifest::{blob_hash, RunManifest};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] taskhyper::Error),
    #[error("gradient check failed: max relative error {worst:.3e} exceeds {tolerance:e}")]
    GradCheck { worst: f64, tolerance: f64 },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e.class() {
                ErrorClass::Config => EXIT_CONFIG,
                ErrorClass::Data => EXIT_DATA,
                ErrorClass::Numerical => EXIT_NUMERICAL,
            },
            CliError::GradCheck { .. } => EXIT_NUMERICAL,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Parser)]
#[command(
    name = "taskhyper",
    version,
    about = "Task-conditioned hypernetwork multitask learning over chunked notes"
)]
pub struct Cli {
    /// Root for default output directories (`<root>/<command>`).
    #[arg(long, global = true, env = "TASKHYPER_OUT", default_value = "runs")]
    pub out_root: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the planted synthetic corpus.
    Synth(SynthArgs),
    /// Train one model per seed and summarize test metrics.
    Train(TrainArgs),
    /// Score checkpoints on the test split.
    Eval(EvalArgs),
    /// Unseen-class AUC of checkpoints on held-out diagnoses.
    Zeroshot(ZeroshotArgs),
    /// Compare backpropagated gradients of the full model with finite differences.
    Gradcheck(GradcheckArgs),
    /// PCA coordinates of a checkpoint's task embeddings.
    Taskembed(TaskembedArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Generator config (TOML); defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus directory written by `synth` (or any directory with the same files).
    #[arg(long)]
    pub data: PathBuf,
    /// Training config (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated seeds, one run each.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    /// Fixed uniform task weights instead of the weight hypernetwork.
    #[arg(long)]
    pub no_weight_hypernet: bool,
    /// Plain per-task heads with fixed uniform task weights.
    #[arg(long)]
    pub baseline_heads: bool,
    /// Train admission type as a fourth task.
    #[arg(long)]
    pub with_admission_type: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Progressive,
    Ultimate,
    Both,
}

impl ModeArg {
    fn modes(self) -> Vec<Mode> {
        match self {
            ModeArg::Progressive => vec![Mode::Progressive],
            ModeArg::Ultimate => vec![Mode::Ultimate],
            ModeArg::Both => vec![Mode::Progressive, Mode::Ultimate],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregationArg {
    Mean,
    Max,
}

impl From<AggregationArg> for Aggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::Mean => Aggregation::Mean,
            AggregationArg::Max => Aggregation::Max,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub mode: ModeArg,
    /// How chunk predictions combine into an admission prediction.
    #[arg(long, value_enum, default_value = "mean")]
    pub aggregation: AggregationArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ZeroshotArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "mean")]
    pub aggregation: AggregationArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Number of tasks (2-4).
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(2..=4))]
    pub tasks: u8,
    #[arg(long, default_value_t = 4)]
    pub d_h: usize,
    #[arg(long, default_value_t = 2)]
    pub d_b: usize,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corrupt the matmul backward rule (detector sanity check).
    #[arg(long, hide = true)]
    pub inject_fault: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TaskembedArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Also write per-class label coordinates.
    #[arg(long)]
    pub classes: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn out_dir(root: &Path, explicit: &Option<PathBuf>, command: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| root.join(command))
}

/// Runs one parsed command, writing a progress log to stderr.
pub fn run(cli: Cli) -> Result<()> {
    let root = &cli.out_root;
    match &cli.command {
        Command::Synth(a) => synth::run(a, &out_dir(root, &a.out, "synth")),
        Command::Train(a) => train::run(a, &out_dir(root, &a.out, "train")),
        Command::Eval(a) => evaluate::run_eval(a, &out_dir(root, &a.out, "eval")),
        Command::Zeroshot(a) => evaluate::run_zeroshot(a, &out_dir(root, &a.out, "zeroshot")),
        Command::Gradcheck(a) => gradcheck::run(a, &out_dir(root, &a.out, "gradcheck")),
        Command::Taskembed(a) => taskembed::run(a, &out_dir(root, &a.out, "taskembed")),
    }
}
