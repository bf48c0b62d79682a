//! Command-line front end for `hmor-core`: scene files, experiment runs and
//! reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod inputs;
pub mod report;
pub mod scene_file;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use error::{CliError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(
    name = "hmor",
    version,
    about = "Multi-person ordinal relation losses, refinement and metrics"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for per-scene work.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,

    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenes (and perturbed predictions).
    Gen(GenArgs),
    /// HMOR and data-term losses of predictions against ground truth.
    Loss(PairArgs),
    /// Refine predictions by gradient descent.
    Refine(RefineArgs),
    /// Evaluation metrics.
    Eval(PairArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Persons per scene.
    #[arg(long)]
    pub persons: Option<usize>,
    /// Number of scenes; scene `i` uses seed `seed + i`.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Output directory; receives `gt/` and, with a perturbation, `pred/`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PairArgs {
    /// Prediction scene file, or a directory of them.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth scene file, or a directory paired by file name.
    #[arg(long)]
    pub gt: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    /// Prediction scene file, or a directory of them.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth scene file, or a directory paired by file name.
    #[arg(long)]
    pub gt: PathBuf,
    /// Output directory for refined scenes and `<name>.trace.csv` files.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configured number of steps.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub cases: Option<usize>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Write the table here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Runs a parsed command line, writing reports to `stdout`. Returns `false`
/// when the command ran but a check it performs failed.
pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<bool> {
    if cli.jobs == 0 {
        return Err(CliError::Validation("--jobs must be at least 1".into()));
    }
    let registry = hmor_core::TermRegistry::builtin();
    let mut config = config::RunConfig::load_or_default(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.reseed(seed);
    }
    let ctx = commands::Context {
        config,
        registry,
        jobs: cli.jobs,
        format: cli.format,
    };
    match &cli.command {
        Command::Gen(a) => commands::gen(ctx, a, stdout).map(|_| true),
        Command::Loss(a) => commands::loss(ctx, a, stdout).map(|_| true),
        Command::Refine(a) => commands::refine(ctx, a, stdout).map(|_| true),
        Command::Eval(a) => commands::eval(ctx, a, stdout).map(|_| true),
        Command::Gradcheck(a) => commands::gradcheck(ctx, a, stdout),
    }
}
