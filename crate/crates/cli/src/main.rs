use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tempcov::config::Penalty;

mod commands;

#[derive(Parser)]
#[command(name = "tempcov", version, about = "Time-varying covariance estimation with temporally regularized linear CorEx")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic benchmark scenario.
    Synth(SynthArgs),
    /// Fit a model on a scenario directory or a CSV time series.
    Fit(FitArgs),
    /// Grid search over hyperparameters, selecting by validation NLL.
    Grid(GridArgs),
    /// Evaluate a fitted model (or the scenario's ground truth).
    Eval(EvalArgs),
    /// Time optimizer steps for a range of dimensions.
    Bench(BenchArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// sudden or smooth
    #[arg(long)]
    pub kind: tempcov::synthetic::ScenarioKind,
    #[arg(long)]
    pub p: usize,
    #[arg(long)]
    pub m: usize,
    /// Training samples per period.
    #[arg(long)]
    pub s: usize,
    #[arg(long = "T", default_value_t = 10)]
    pub n_periods: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
pub enum PhiArg {
    L1,
    L2,
}

impl From<PhiArg> for Penalty {
    fn from(p: PhiArg) -> Self {
        match p {
            PhiArg::L1 => Penalty::L1,
            PhiArg::L2 => Penalty::L2,
        }
    }
}

/// Training options shared by `fit` and `grid`.
#[derive(Args)]
pub struct TrainArgs {
    /// Optimizer steps per annealing round.
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct FitArgs {
    /// Scenario directory (uses its training split) or a CSV file.
    #[arg(long)]
    pub data: PathBuf,
    /// Rows per period when reading a CSV time series.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long, default_value_t = 8)]
    pub m: usize,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    #[arg(long, value_enum, default_value = "l1")]
    pub phi: PhiArg,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Fit log path; defaults to `<out>.log.json`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Store arrays in a binary `<out>.bin` sidecar.
    #[arg(long)]
    pub sidecar: bool,
}

#[derive(Args)]
pub struct GridArgs {
    /// Scenario directory with train/val/test splits.
    #[arg(long)]
    pub data: PathBuf,
    /// JSON grid `{"lambda": [..], "beta": [..], "m": [..], "phi": [..]}`;
    /// defaults to the preset for the scenario kind.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Latent factors for the preset grid; defaults to the scenario's m.
    #[arg(long)]
    pub m: Option<usize>,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Leaderboard JSON to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Also save the selected model here.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Model file to evaluate.
    #[arg(long, required_unless_present = "truth")]
    pub model: Option<PathBuf>,
    /// Scenario directory (uses its test split) or a CSV file.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub window: Option<usize>,
    /// Evaluate the scenario's ground-truth covariances instead of a model.
    #[arg(long, conflicts_with = "model")]
    pub truth: bool,
    /// Add change-point scores.
    #[arg(long)]
    pub changepoints: bool,
    /// Write thresholded precision matrices (entries below this magnitude
    /// zeroed) as CSV files into `--precision-out`.
    #[arg(long, requires = "precision_out")]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub precision_out: Option<PathBuf>,
    /// Report path; defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct BenchArgs {
    /// Comma-separated dimensions.
    #[arg(long, value_delimiter = ',', default_value = "512,1024,2048,4096")]
    pub p: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    pub m: usize,
    #[arg(long = "T", default_value_t = 10)]
    pub n_periods: usize,
    /// Samples per period.
    #[arg(long, default_value_t = 16)]
    pub s: usize,
    /// Timed optimizer steps per dimension.
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn configure_threads() -> anyhow::Result<()> {
    #[cfg(feature = "parallel")]
    if let Ok(v) = std::env::var("TEMPCOV_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| anyhow::anyhow!("TEMPCOV_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<commands::Usage>().is_some() {
        return 1;
    }
    match err.downcast_ref::<tempcov::Error>() {
        Some(e) if e.is_numerical() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads().and_then(|_| match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Fit(a) => commands::fit(a),
        Command::Grid(a) => commands::grid(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bench(a) => commands::bench(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
