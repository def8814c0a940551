use std::path::{Path, PathBuf};

use thiserror::Error;

/// Exit status for configuration and input validation failures.
pub const EXIT_CONFIG: i32 = 2;
/// Exit status for non-finite values, degenerate weights and failed audits.
pub const EXIT_NUMERIC: i32 = 3;
/// Exit status for IO and malformed files.
pub const EXIT_IO: i32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] fenwarp_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> CliError {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, err: FormatError) -> CliError {
        CliError::Format {
            path: path.to_path_buf(),
            msg: err.0,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use fenwarp_core::Error as E;
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core(E::NonFinite(_) | E::DegenerateWeight(_) | E::ZeroNormQuat(_) | E::InvalidTau(_)) => EXIT_NUMERIC,
            CliError::Core(_) | CliError::Io { .. } | CliError::Format { .. } => EXIT_IO,
        }
    }
}

/// A malformed binary or text payload.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct FormatError(pub String);

impl FormatError {
    pub fn new(msg: impl Into<String>) -> FormatError {
        FormatError(msg.into())
    }
}

impl From<fenwarp_core::Error> for FormatError {
    fn from(e: fenwarp_core::Error) -> Self {
        FormatError(e.to_string())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
