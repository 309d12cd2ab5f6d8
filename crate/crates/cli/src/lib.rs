//! Command-line driver: scenario ingestion, run orchestration and CSV/JSON emission.
//!
//! Every command resolves a scenario (a JSON path or a bundled preset name), applies
//! command-line overrides to its `analysis` section, and hashes the resulting document.
//! The hash is stamped on every file written, so outputs can be matched to inputs.
//!
//! Exit codes: `0` on success, `2` for input and validation failures, `3` for numerical
//! failures and infeasible scenarios.

pub mod args;
pub mod commands;
pub mod output;

use std::path::PathBuf;

use thiserror::Error;

use mfe_core::MfeError;

pub use args::{Cli, Command};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] MfeError),
    #[error("cannot read scenario {path}: {source}")]
    ScenarioRead {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_input_error() => EXIT_INPUT,
            CliError::Core(_) | CliError::Write { .. } => EXIT_NUMERICAL,
            CliError::ScenarioRead { .. } | CliError::Usage(_) => EXIT_INPUT,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Run a parsed command line, configuring the worker pool first.
pub fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        // A pool that is already initialised (repeated in-process runs) is kept as is.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    commands::dispatch(&cli.command)
}

/// Run and map the outcome to a process exit code, reporting errors on standard error.
pub fn run_to_exit_code(cli: &Cli) -> i32 {
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
