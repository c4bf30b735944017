//! Command-line front end for the preference-loss laboratory: gradient
//! verification, landscape sweeps, dataset synthesis, training, evaluation,
//! method comparison, and beta sweeps, all file-based and seed-reproducible.

pub mod args;
pub mod config;
pub mod csvout;
pub mod files;
pub mod manifest;
pub mod run;

/// Errors grouped by the exit code they map to: usage problems exit 2,
/// checked failures (verification, assertions, divergence, bad data) exit 1.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Check(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn check(msg: impl Into<String>) -> Self {
        CliError::Check(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}
