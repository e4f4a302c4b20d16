//! Command-line interface: `qut`, `fit`, `predict` and `simulate`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.

mod commands;
pub mod config;
pub mod ingest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::eval::SimKind;
use crate::network::Task;

pub use commands::{cmd_fit, cmd_predict, cmd_qut, cmd_simulate};
pub use config::RunConfig;
pub use ingest::{load_csv, load_features};

#[derive(Debug, Parser)]
#[command(name = "lasso-ann", version, about = "Sparse-input neural networks with a data-driven l1 penalty")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute the quantile universal threshold for a dataset.
    Qut(QutArgs),
    /// Fit a sparse network, selecting the penalty by QUT unless `--lambda` is given.
    Fit(FitArgs),
    /// Apply a saved model to new inputs.
    Predict(PredictArgs),
    /// Run a seeded support-recovery simulation sweep.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed for every random draw.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Name of the response (or label) column.
    #[arg(long)]
    pub response: Option<String>,
    #[arg(long, value_parser = parse_task)]
    pub task: Option<Task>,
    /// Hidden widths, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct QutOptions {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long = "mc-samples")]
    pub mc_samples: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct QutArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub qut: QutOptions,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub qut: QutOptions,
    /// Fixed penalty; skips the threshold computation.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Saved fit result.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// CSV with the model's input columns.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub qut: QutOptions,
    #[arg(long = "sim-kind", value_parser = parse_sim_kind)]
    pub sim_kind: Option<SimKind>,
    /// Sparsity levels, comma-separated.
    #[arg(long = "s-grid", value_delimiter = ',')]
    pub s_grid: Option<Vec<usize>>,
    /// Repetitions per sparsity level.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Hidden widths, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    match s {
        "regression" => Ok(Task::Regression),
        "classification" => Ok(Task::Classification),
        other => Err(format!("unknown task '{other}' (expected regression or classification)")),
    }
}

fn parse_sim_kind(s: &str) -> std::result::Result<SimKind, String> {
    match s {
        "linear" => Ok(SimKind::Linear),
        "absdiff" => Ok(SimKind::Absdiff),
        other => Err(format!("unknown simulation kind '{other}' (expected linear or absdiff)")),
    }
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Capacity(_) => 2,
        Error::Data(_) | Error::Shape(_) | Error::DegenerateResponse(_) | Error::Csv(_) | Error::Io(_) | Error::Json(_) => 3,
        Error::Domain(_) | Error::NonDifferentiable(_) | Error::DegenerateParameter { .. } | Error::Divergence { .. } => 4,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Qut(a) => cmd_qut(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Simulate(a) => cmd_simulate(&a),
    }
}

/// Parse `args`, run the command and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
