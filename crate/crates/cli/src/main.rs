//! `mre`: generate planted corpora, build training pairs, train multi-reward
//! report metrics and evaluate them against labels and text-overlap
//! baselines.
//!
//! Exit status is 0 on success, 1 for usage or validation errors and 2 when
//! a file cannot be read or written.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Environment variable naming the default configuration directory.
pub const CONFIG_DIR_ENV: &str = "MRE_CONFIG_DIR";

#[derive(Debug)]
pub enum CliError {
    Core(mre::Error),
    Usage(String),
    Io(PathBuf, std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_io() => 2,
            CliError::Io(..) => 2,
            _ => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Io(p, e) => write!(f, "io error on {}: {e}", p.display()),
        }
    }
}

impl From<mre::Error> for CliError {
    fn from(e: mre::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "mre", version, about = "Multi-reward radiology report metric", arg_required_else_help = true)]
pub struct Cli {
    /// Output format for tables printed to stdout.
    #[arg(long, global = true, value_enum, default_value = "table")]
    pub format: Format,

    /// Directory searched for system definitions and `experiment.toml`.
    #[arg(long, global = true, env = CONFIG_DIR_ENV)]
    pub config_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a tiered synthetic corpus of scored candidate reports.
    Gen(GenArgs),
    /// Build accepted/rejected pairs from a record file.
    Pair(PairArgs),
    /// Train a reward model on a pair file.
    Train(TrainArgs),
    /// Score one candidate report against its reference.
    Score(ScoreArgs),
    /// Correlate a trained model with labels on a test corpus.
    Eval(EvalArgs),
    /// Compare models and text-overlap baselines on one corpus.
    Compare(CompareArgs),
    /// Sweep lambda or the loss terms on a planted corpus.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Preset name, definition file, or a name found in the config directory.
    #[arg(long, default_value = "radcliq6")]
    pub system: String,
    /// Number of references to compose.
    #[arg(long, default_value_t = 200)]
    pub refs: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Use these references (`id<TAB>text` or bare text per line) instead of composing.
    #[arg(long)]
    pub references: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PairArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value = "radcliq6")]
    pub system: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep margins in raw score units.
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TermsArg {
    Both,
    IndividualOnly,
    TotalOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LayoutArg {
    Edit,
    Stacked,
}

/// Overrides applied on top of the experiment config.
#[derive(Debug, Args, Default)]
pub struct TrainOverrides {
    /// Experiment config (TOML); defaults to `experiment.toml` in the config directory.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Training seed (shuffling and initialization).
    #[arg(long)]
    pub train_seed: Option<u64>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_enum)]
    pub terms: Option<TermsArg>,
    #[arg(long, value_enum)]
    pub arch: Option<ArchArg>,
    /// Hidden width for `--arch mlp`.
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    /// Hashed feature dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, value_enum)]
    pub layout: Option<LayoutArg>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, default_value = "radcliq6")]
    pub system: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch log (JSON lines); defaults to `<out>.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Precomputed feature vectors for an external feature spec.
    #[arg(long)]
    pub external: Option<PathBuf>,
    /// Write a resumable checkpoint here after training.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Continue from a checkpoint up to the configured epoch count.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Same as `--train-seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// File holding the reference report.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// File holding the candidate report.
    #[arg(long)]
    pub cand: PathBuf,
    /// Scoring system for criterion names; defaults to the model's.
    #[arg(long)]
    pub system: Option<String>,
    #[arg(long)]
    pub external: Option<PathBuf>,
    /// Record id used to look up external features.
    #[arg(long, default_value = "")]
    pub id: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Record file to evaluate on.
    #[arg(long)]
    pub test: PathBuf,
    /// Label file overriding the sub-scores stored in the test records.
    #[arg(long)]
    pub human: Option<PathBuf>,
    /// Records for fitting accuracy thresholds on binary systems.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    #[arg(long)]
    pub system: Option<String>,
    #[arg(long)]
    pub external: Option<PathBuf>,
    /// Write the report here; `.csv` selects CSV, anything else the text table.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// `name=path` or `path`; repeatable.
    #[arg(long = "model", required = true)]
    pub models: Vec<String>,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub human: Option<PathBuf>,
    #[arg(long)]
    pub system: Option<String>,
    #[arg(long)]
    pub external: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblateWhat {
    Lambda,
    Terms,
    All,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub what: AblateWhat,
    #[arg(long)]
    pub system: Option<String>,
    #[arg(long)]
    pub refs: Option<usize>,
    #[arg(long)]
    pub held_out: Option<usize>,
    /// Corpus seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
