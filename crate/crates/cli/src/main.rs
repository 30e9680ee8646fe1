//! `pmace`: simulate, preprocess, reconstruct and evaluate ptychographic scans.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use pmace::{ErrorClass, PtychoError};

use crate::args::{Cli, Command};

/// Thread count override for the rayon pool.
const THREADS_VAR: &str = "PTYCHO_THREADS";

fn configure_threads() -> pmace::Result<()> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| PtychoError::Config(format!("{THREADS_VAR} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| PtychoError::Config(format!("cannot start {n} threads: {e}")))
}

fn run(cli: Cli) -> pmace::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Info(a) => commands::info(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numerical => 4,
            })
        }
    }
}
