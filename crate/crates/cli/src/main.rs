// SPDX-License-Identifier: MIT OR Apache-2.0

//! `moseg` command-line tool. Exit codes: 0 success, 2 configuration
//! error, 3 data error.

mod cli;
mod commands;

use std::process::ExitCode;

use clap::Parser;
use moseg::MosegError;

use cli::{Cli, Command};

#[derive(Debug)]
pub(crate) enum CliError {
    Config(String),
    Data(String),
}

impl From<MosegError> for CliError {
    fn from(e: MosegError) -> Self {
        if e.is_data_error() {
            CliError::Data(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

fn dispatch(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Segment(a) => commands::segment(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Benchmark(a) => commands::benchmark(a),
        Command::CvGrid(a) => commands::cv_grid(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.threads {
        Some(0) => Err(CliError::Config("--threads must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli.command)),
            Err(e) => Err(CliError::Config(format!("cannot start {n} worker threads: {e}"))),
        },
        None => dispatch(&cli.command),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
