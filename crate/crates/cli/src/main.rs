mod commands;
mod config;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mpemba_core::Execution;

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("output error: {0}")]
    Io(#[from] std::io::Error),
    #[error("output error: {0}")]
    Csv(#[from] csv::Error),
    #[error("numerical failure: {0}")]
    Numerical(#[from] mpemba_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) | CliError::Csv(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Qubit,
    Lambda,
}

/// Relaxation, Fisher information and inversion-based thermometry experiments.
#[derive(Debug, Parser)]
#[command(name = "mpemba", version)]
struct Cli {
    /// Flat TOML run configuration; absent keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory. Without it single-file commands print to stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    model: Option<ModelArg>,
    /// Run sweeps on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Hot, cold and equilibrium relaxation with the inversion record.
    Relax,
    /// Fisher information along the trajectories, or over (p0, t) for the qubit.
    Qfi,
    /// Checks the inversion-to-information theorem and its lemmas.
    Theorem,
    /// Calibration, inversion map, Fisher map and temperature estimates.
    Protocol,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let model = cli.model.map(|m| match m {
        ModelArg::Qubit => "qubit",
        ModelArg::Lambda => "lambda",
    });
    let exp = cfg.validate(model, cli.seed, cli.output)?;
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match cli.command {
        Command::Relax => commands::relax(&exp),
        Command::Qfi => commands::qfi(&exp),
        Command::Theorem => commands::theorem(&exp),
        Command::Protocol => commands::protocol(&exp, exec),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
