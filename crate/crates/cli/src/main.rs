//! `modeconn`: train small ReLU networks, measure dropout and noise
//! stability, and evaluate low-loss paths between pairs of networks.
//!
//! Exit codes: 0 on success, 1 for usage and validation errors, 2 for
//! runtime or numeric failures.

mod commands;
mod inputs;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use modeconn::Error;

#[derive(Debug, Parser)]
#[command(
    name = "modeconn",
    version,
    about = "Mode connectivity experiments for ReLU networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a network with SGD and write it as JSON.
    Train(commands::TrainArgs),
    /// Best-of-N dropout loss for each dropout probability.
    SweepDropout(commands::SweepArgs),
    /// Build a path between two networks and evaluate its loss profile.
    Connect(commands::ConnectArgs),
    /// Cushions, contraction, smoothness and ε for one network.
    Stability(commands::StabilityArgs),
    /// Build the disconnected-minima dataset and check its two minima.
    Counterexample(commands::CounterexampleArgs),
    /// Train widths 1..=W on the same data and report the final losses.
    NarrowSweep(commands::NarrowArgs),
}

fn exit_code(e: &Error) -> u8 {
    if e.is_validation() || matches!(e, Error::Json(_)) {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Train(a) => commands::train(a),
        Command::SweepDropout(a) => commands::sweep_dropout(a),
        Command::Connect(a) => commands::connect(a),
        Command::Stability(a) => commands::stability(a),
        Command::Counterexample(a) => commands::counterexample(a),
        Command::NarrowSweep(a) => commands::narrow_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
