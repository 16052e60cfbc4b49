//! Error type shared by every module.

use thiserror::Error;

/// Failure modes of the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A linear system could not be solved to working precision.
    #[error("singular system: {0}")]
    SingularSystem(String),
    /// An iterative procedure exhausted its iteration budget.
    #[error("no convergence: {0}")]
    NonConvergent(String),
    /// The behavior policy does not cover the target policy.
    #[error("coverage violation: {0}")]
    CoverageViolation(String),
    /// An argument is outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// A table cannot be normalized because all its cells coincide.
    #[error("degenerate table: {0}")]
    DegenerateTable(String),
    /// Reading or writing a file failed.
    #[error("i/o failure: {0}")]
    Io(String),
}

impl Error {
    /// Process exit code used by the command-line interface.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::CoverageViolation(_) => 2,
            Error::SingularSystem(_) | Error::NonConvergent(_) | Error::DegenerateTable(_) => 3,
            Error::Io(_) => 1,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::InvalidParameter(e.to_string())
    }
}

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
