//! `east`: train, evaluate, grid-search and verify soft-set surrogate classifiers.

mod commands;
mod config;
mod error;
mod manifest;
mod overrides;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::{data::DataCommand, eval::EvalArgs, grid::GridArgs, train::TrainArgs, verify::VerifyArgs};

#[derive(Debug, Parser)]
#[command(name = "east", version, about = "Annealed soft-set surrogate training for classification metrics")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Run configuration (east-config-v1 JSON).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Single seed; overrides the config.
    #[arg(long, global = true, value_name = "N", conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Inclusive seed range, e.g. 0..9.
    #[arg(long, global = true, value_name = "A..B")]
    pub seeds: Option<String>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", env = "EAST_OUT_DIR", default_value = "east-out")]
    pub out: PathBuf,
    /// Worker threads for seeds, grid cells and verification trials.
    #[arg(long, global = true, value_name = "K", default_value_t = 1)]
    pub parallel: usize,
    /// Target metric: macro_f_beta (alias f1), accuracy or mcc.
    #[arg(long, global = true, value_name = "NAME")]
    pub metric: Option<String>,
    /// Per-class betas for macro F-beta, comma separated.
    #[arg(long, global = true, value_name = "CSV-LIST")]
    pub betas: Option<String>,
    /// Training loss.
    #[arg(long, global = true, value_name = "east|ce|dice")]
    pub loss: Option<String>,
    /// Initial annealing temperature.
    #[arg(long = "temperature-0", global = true, value_name = "F")]
    pub temperature_0: Option<f64>,
    /// Annealing decay factor in (0, 1).
    #[arg(long, global = true, value_name = "F")]
    pub decay: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model per seed.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Hyperparameter grid search with validation-loss selection.
    Grid(GridArgs),
    /// Numerical checks of the surrogate's properties.
    Verify(VerifyArgs),
    /// Dataset utilities.
    #[command(subcommand)]
    Data(DataCommand),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(args) => commands::train::run(&cli.global, &args),
        Command::Eval(args) => commands::eval::run(&cli.global, &args),
        Command::Grid(args) => commands::grid::run(&cli.global, &args),
        Command::Verify(args) => commands::verify::run(&cli.global, &args),
        Command::Data(cmd) => commands::data::run(&cli.global, &cmd),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
