//! Command-line front end: reproducible optimization, backtesting, and the
//! excess-risk experiment, driven by a single declarative JSON config.
//!
//! Exit codes: 0 success, 2 validation error, 3 solver failure, 4 data
//! error. Every output file embeds the resolved config and SHA-256 hashes
//! of the input panels.

mod config;
mod output;
mod run;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "cvaropt",
    about = "CVaR-family portfolio optimization: solve, backtest, verify"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve strategy weights at a single as-of date.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        /// As-of date (YYYY-MM-DD); defaults to the config's `optimize.as_of`.
        #[arg(long)]
        as_of: Option<chrono::NaiveDate>,
        /// Also write the solver iteration trace as line-delimited JSON.
        #[arg(long)]
        trace: bool,
    },
    /// Rolling-rebalance backtest over every configured strategy.
    Backtest {
        #[arg(long)]
        config: PathBuf,
    },
    /// Finite-sample excess-risk scaling experiment.
    Theory {
        #[arg(long)]
        config: PathBuf,
    },
    /// Parse and validate the configured data panels, printing a summary.
    ValidateData {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Solver(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Data(_) => 4,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Optimize {
            config,
            as_of,
            trace,
        } => run::cmd_optimize(&config, as_of, trace),
        Command::Backtest { config } => run::cmd_backtest(&config),
        Command::Theory { config } => run::cmd_theory(&config),
        Command::ValidateData { config } => run::cmd_validate_data(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
