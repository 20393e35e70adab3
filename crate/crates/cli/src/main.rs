//! `aniso-ldp`: calibrate, randomize, evaluate, audit, and check.
//!
//! Exit codes: 0 success, 1 a check or assertion failed, 2 bad input
//! (usage, schema, dimensions, missing files), 3 degenerate public data.

mod args;
mod commands;

use std::process::ExitCode;

use aniso_ldp::Error;
use clap::Parser;

/// Why a command stopped; each kind maps to one exit code.
#[derive(Debug)]
pub enum Failure {
    /// Malformed input, unreadable files, dimension or schema mismatch.
    Input(String),
    /// Calibration fell back to the identity transform.
    Degenerate(String),
    /// The command ran but its assertions did not hold.
    Assertion(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Assertion(_) => 1,
            Failure::Input(_) => 2,
            Failure::Degenerate(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Input(m) => write!(f, "{m}"),
            Failure::Degenerate(m) => write!(f, "degenerate public data: {m}"),
            Failure::Assertion(m) => write!(f, "{m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Divergence { .. } | Error::Calibration(_) => Failure::Assertion(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

pub type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = args::Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
