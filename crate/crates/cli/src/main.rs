//! `pbit-nqs` command-line driver.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration or size error,
//! 3 numerical abort.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Thread count for the compute pool; unset means one per core.
pub const THREADS_ENV: &str = "PBIT_NQS_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical abort: {0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<pbit_nqs::Error> for CliError {
    fn from(e: pbit_nqs::Error) -> Self {
        use pbit_nqs::Error as E;
        match e {
            E::NumericalAbort { .. } | E::CollapsedEstimator { .. } | E::IllConditioned(_) => {
                CliError::Numerical(e.to_string())
            }
            E::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "pbit-nqs", version, about = "Neural-quantum-state VMC on an emulated p-bit machine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// TOML run configuration.
    config: PathBuf,
    /// Output directory (overrides run.output; default ./out).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a network; writes metrics.csv, checkpoint.json and manifest.json.
    Train(RunArgs),
    /// Estimate the energy of a checkpoint with a fresh chain.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Draw visible configurations from a checkpoint (or the initial parameters).
    Sample {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of samples; defaults to sampling.ns.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Regenerate exact-diagonalization goldens and brute-force marginals.
    Oracle(RunArgs),
    /// Print the number of trainable parameters.
    ParamCount {
        /// rbm, frbm or dbm.
        arch: String,
        #[arg(value_name = "L")]
        len: usize,
        k1: f64,
        k2: Option<f64>,
    },
    /// Partition the network and scan the staleness bias over partition.tau.
    PartitionScan {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Train(a) => commands::train(&a.config, a.out),
        Command::Evaluate { run, checkpoint } => commands::evaluate(&run.config, run.out, &checkpoint),
        Command::Sample { run, checkpoint, count } => {
            commands::sample(&run.config, run.out, checkpoint.as_deref(), count)
        }
        Command::Oracle(a) => commands::oracle(&a.config, a.out),
        Command::ParamCount { arch, len, k1, k2 } => commands::param_count(&arch, len, k1, k2),
        Command::PartitionScan { run, checkpoint } => commands::partition_scan(&run.config, run.out, &checkpoint),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
