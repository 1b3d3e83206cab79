//! `gridrl`: train, evaluate and verify decentralized signal controllers.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gridrl_core::Error;

#[derive(Debug, Parser)]
#[command(
    name = "gridrl",
    version,
    about = "Decentralized Q-learning for grid traffic signals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineKind {
    Static,
    Actuated,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the policies of a scenario and write checkpoints.
    Train {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a saved policy checkpoint.
    Eval {
        scenario: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        episodes: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Evaluate a rule-based controller.
    Baseline {
        scenario: PathBuf,
        #[arg(long, value_enum)]
        controller: BaselineKind,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        episodes: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Check decomposition and convergence on seeded random MDPs.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sample communication delays for the scenario's traffic.
    Comm {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Active vehicles; estimated from a simulation run when absent.
        #[arg(long)]
        vehicles: Option<usize>,
        /// Decision steps to sample.
        #[arg(long, default_value_t = 1000)]
        steps: usize,
    },
}

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;
pub const EXIT_CHECKPOINT: u8 = 4;
pub const EXIT_NUMERIC: u8 = 5;
pub const EXIT_VERIFY: u8 = 6;
pub const EXIT_SIMULATION: u8 = 7;

/// Failure of a subcommand.
#[derive(Debug)]
pub enum Failure {
    Core(Error),
    Verification(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Core(Error::Csv(e))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Core(Error::Json(e))
    }
}

fn exit_code(f: &Failure) -> u8 {
    match f {
        Failure::Verification(_) => EXIT_VERIFY,
        Failure::Core(e) => match e {
            Error::Config { .. } => EXIT_CONFIG,
            Error::Checkpoint(_) => EXIT_CHECKPOINT,
            Error::NumericFault(_) => EXIT_NUMERIC,
            Error::SimulationFault(_) => EXIT_SIMULATION,
            Error::InvalidArgument(_) => EXIT_USAGE,
            _ => 1,
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { scenario, seed } => commands::train(&scenario, seed),
        Command::Eval {
            scenario,
            checkpoint,
            seed,
            episodes,
            steps,
        } => commands::eval(&scenario, &checkpoint, seed, episodes, steps),
        Command::Baseline {
            scenario,
            controller,
            seed,
            episodes,
            steps,
        } => commands::baseline(&scenario, controller, seed, episodes, steps),
        Command::Verify { seed } => commands::verify(seed),
        Command::Comm {
            scenario,
            seed,
            vehicles,
            steps,
        } => commands::comm(&scenario, seed, vehicles, steps),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Core(e) => log::error!("{e}"),
                Failure::Verification(n) => log::error!("{n} verification check(s) failed"),
            }
            ExitCode::from(exit_code(&f))
        }
    }
}
