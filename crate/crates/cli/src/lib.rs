//! Experiment orchestration for `adaptimpute`: configuration files, run
//! directories, sweeps, ablations and reports.

pub mod config;
pub mod experiment;
pub mod report;
pub mod sweep;

use thiserror::Error;

pub const RUNS_DIR_ENV: &str = "RUNS_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: unknown keys {unknown:?}; invalid values {invalid:?}")]
    Schema { unknown: Vec<String>, invalid: Vec<String> },
    #[error("{0}")]
    Usage(String),
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
    #[error(transparent)]
    Core(#[from] adaptimpute::Error),
}

impl CliError {
    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema { .. } | CliError::Usage(_) => 2,
            CliError::Core(adaptimpute::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}

/// Flag, then `RUNS_DIR`, then `./runs`.
pub fn resolve_runs_dir(flag: Option<&std::path::Path>) -> std::path::PathBuf {
    flag.map(std::path::Path::to_path_buf)
        .or_else(|| std::env::var_os(RUNS_DIR_ENV).map(Into::into))
        .unwrap_or_else(|| "runs".into())
}
