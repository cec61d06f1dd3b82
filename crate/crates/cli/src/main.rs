//! `ngpq`: train the hash-grid oracle, search bit widths, score baselines,
//! simulate traces and export plot data.
//!
//! Exit codes: 0 success, 2 usage or config error, 3 malformed input file,
//! 4 runtime failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use commands::BaselineKind;
use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Malformed(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Malformed(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "ngpq",
    version,
    about = "Mixed-precision search for hash-grid neural fields"
)]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for training and search (overrides both config seeds).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the oracle; writes the checkpoint, training log and access trace.
    TrainOracle,
    /// Run the bit-width search against the trained oracle.
    Search,
    /// Score one uniform-precision baseline.
    Baseline {
        #[arg(long, value_enum)]
        kind: BaselineKind,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=8))]
        bits: u8,
    },
    /// Simulate a trace under a policy file.
    Simulate {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        /// Print per-stage cycles and memory statistics.
        #[arg(long)]
        breakdown: bool,
    },
    /// Turn a search report into `pareto.csv` and `reward_curve.csv`.
    Plotdata {
        #[arg(long)]
        report: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    config.validate()?;
    let out = commands::out_dir(cli.out, &config)?;
    match cli.command {
        Command::TrainOracle => commands::train_oracle(&config, &out),
        Command::Search => commands::search(&config, &out),
        Command::Baseline { kind, bits } => commands::baseline(&config, &out, kind, bits),
        Command::Simulate {
            trace,
            policy,
            breakdown,
        } => commands::simulate_cmd(&config, &out, &trace, &policy, breakdown),
        Command::Plotdata { report } => commands::plotdata(&out, &report),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
