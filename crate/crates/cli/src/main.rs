//! `siamtrack`: data generation, training, evaluation, perturbation sweeps
//! and reports.
//!
//! Exit codes: 0 on success, 2 for usage or configuration errors, 1 for
//! runtime failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use siamtrack::{Error, TargetMode, Variant};

mod commands;
mod report;

/// Environment variable prefixed to relative `--out` paths.
pub const OUT_ROOT_VAR: &str = "SIAMTRACK_OUT_ROOT";

#[derive(Parser)]
#[command(name = "siamtrack", version, about = "Siamese tracker experiments on synthetic video")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset.
    GenData(GenDataArgs),
    /// Train one run into `<out>/<seed>/`.
    Train(TrainArgs),
    /// Supervised evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Perturbation sweep of a checkpoint.
    Sweep(SweepArgs),
    /// Aggregate runs and evaluations into tables and curves.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum VariantArg {
    WithDetector,
    NoDetector,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::WithDetector => Variant::WithDetector,
            VariantArg::NoDetector => Variant::NoDetector,
        }
    }
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Training dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Dataset for the periodic evaluations (default: the training data).
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    /// Overrides `train.variant`.
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    /// Overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run root; the run is written to `<out>/<seed>/`.
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop once this step is reached.
    #[arg(long)]
    pub stop_after: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum TargetModeArg {
    Gt,
    RandomPatch,
}

impl From<TargetModeArg> for TargetMode {
    fn from(t: TargetModeArg) -> Self {
        match t {
            TargetModeArg::Gt => TargetMode::GroundTruth,
            TargetModeArg::RandomPatch => TargetMode::RandomPatch,
        }
    }
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "gt")]
    pub target_mode: TargetModeArg,
    /// Overrides the configuration stored in the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed of the random target patches.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model label in the CSV files (default: the training variant).
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SweepKind {
    Search,
    Target,
    Staleness,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Search => "search",
            SweepKind::Target => "target",
            SweepKind::Staleness => "staleness",
        }
    }
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub kind: SweepKind,
    /// Supplies the `sweep` section and overrides the checkpoint's settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Run roots (`<name>/`, holding seed directories) or single seed
    /// directories holding `metrics.csv`.
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    /// `summary.csv` files written by `eval`, added to the table.
    #[arg(long, num_args = 1..)]
    pub evals: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Resolves `--out` against [`OUT_ROOT_VAR`].
pub fn out_path(p: &Path) -> PathBuf {
    match std::env::var_os(OUT_ROOT_VAR) {
        Some(root) if p.is_relative() => Path::new(&root).join(p),
        _ => p.to_path_buf(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Report(a) => report::report(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
