use std::path::PathBuf;

use thiserror::Error;

/// Failure of a subcommand, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Missing, unparsable, or invalid input. Exit 2.
    #[error("{0}")]
    Input(String),
    /// Output could not be written. Exit 3.
    #[error("{0}")]
    Io(String),
    /// The optimizer or simulator failed numerically. Exit 4.
    #[error("{message}{}", dump.as_ref().map(|p| format!(" (state dump: {})", p.display())).unwrap_or_default())]
    Numerical { message: String, dump: Option<PathBuf> },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numerical { .. } => 4,
        }
    }

    pub fn input(context: impl std::fmt::Display, err: impl std::fmt::Display) -> Self {
        CliError::Input(format!("{context}: {err}"))
    }
}

impl From<burstlab::Error> for CliError {
    fn from(e: burstlab::Error) -> Self {
        match e {
            burstlab::Error::Io(io) => CliError::Io(io.to_string()),
            burstlab::Error::Numerical { message, .. } => CliError::Numerical { message, dump: None },
            other => CliError::Input(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
