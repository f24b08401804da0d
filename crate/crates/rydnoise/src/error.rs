//! Crate-wide error type. Variants map onto the CLI exit codes: config
//! problems exit 2, data and shape problems exit 3, numerical aborts exit 4.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum RydError {
    /// Invalid configuration value or unknown key.
    #[error("config error: {0}")]
    Config(String),

    /// Shape, length, or alignment mismatch between arrays or traces.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Malformed, truncated, or inconsistent data (files, splits, traces).
    #[error("data error: {0}")]
    Data(String),

    /// Non-finite values or a diverged computation.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl RydError {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            RydError::Config(_) => 2,
            RydError::Dimension(_) | RydError::Data(_) | RydError::Io(_) => 3,
            RydError::Numerical(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, RydError>;
