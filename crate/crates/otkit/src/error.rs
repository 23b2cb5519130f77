use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}:{column}: cannot parse {text:?} as a number")]
    Parse {
        path: PathBuf,
        line: u64,
        column: usize,
        text: String,
    },

    #[error("{path}:{line}: expected {expected} fields, found {found}")]
    RaggedRows {
        path: PathBuf,
        line: u64,
        expected: usize,
        found: usize,
    },

    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error(transparent)]
    Core(#[from] otkit_core::Error),

    #[error("gradient check failed: {target} error {error:.3e} exceeds tolerance {tol:.3e}")]
    Tolerance {
        target: String,
        error: f64,
        tol: f64,
    },
}

impl CliError {
    /// 0 success, 1 gradient-check breach, 2 bad input, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Tolerance { .. } => 1,
            CliError::Core(e) if e.is_numeric() => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
