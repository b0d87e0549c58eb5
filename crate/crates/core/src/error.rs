use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("insufficient eligible users: need {needed}, have {available}")]
    InsufficientUsers { needed: usize, available: usize },

    #[error("density target unachievable for behavior {behavior}: {target}")]
    Density { behavior: usize, target: f64 },

    #[error("gradient check failed for block `{block}`: max relative error {error:.3e} exceeds {tolerance:.1e}")]
    GradientCheck {
        block: String,
        error: f64,
        tolerance: f64,
    },

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("corrupt file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("config hash mismatch: checkpoint {found}, current {expected} (use --force to override)")]
    ConfigHash { found: String, expected: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: msg.into(),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::ConfigHash { .. } | Error::InvalidArgument(_) => 2,
            Error::NonFinite(_) | Error::GradientCheck { .. } => 4,
            Error::Parse { .. }
            | Error::Schema(_)
            | Error::Shape(_)
            | Error::InsufficientUsers { .. }
            | Error::Density { .. }
            | Error::Corrupt { .. }
            | Error::Version { .. }
            | Error::Io { .. } => 3,
        }
    }
}
