//! Command-line driver: β-sweeps of the linear model, deep-model training,
//! dataset generation and the self-check suite.

pub mod args;
pub mod commands;
pub mod config;

use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or configuration; exit code 2.
    #[error("usage: {0}")]
    Usage(String),

    /// Output could not be written or input read; exit code 2.
    #[error("i/o: {0}")]
    Io(String),

    /// One or more checks missed their thresholds; exit code 1.
    #[error("check failed: {0}")]
    CheckFailed(String),

    /// Numerical failure inside a run; exit code 1.
    #[error(transparent)]
    Run(disentangle_core::Error),

    /// A numerical failure with added context; exit code 1.
    #[error("{0}")]
    Failed(String),
}

impl From<disentangle_core::Error> for CliError {
    fn from(e: disentangle_core::Error) -> Self {
        match e {
            disentangle_core::Error::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Run(other),
        }
    }
}

impl CliError {
    /// Prefixes the message with `what`, keeping the exit-code class.
    pub fn context(self, what: impl std::fmt::Display) -> Self {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{what}: {m}")),
            CliError::Io(m) => CliError::Io(format!("{what}: {m}")),
            CliError::CheckFailed(m) => CliError::CheckFailed(format!("{what}: {m}")),
            CliError::Run(e) => CliError::Failed(format!("{what}: {e}")),
            CliError::Failed(m) => CliError::Failed(format!("{what}: {m}")),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) | CliError::Io(_) => ExitCode::from(2),
            CliError::CheckFailed(_) | CliError::Run(_) | CliError::Failed(_) => ExitCode::from(1),
        }
    }
}

/// Creates `dir` (and parents), mapping failures to an I/O error.
pub fn ensure_dir(dir: &std::path::Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}
