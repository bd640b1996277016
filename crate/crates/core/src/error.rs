//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("singular geometry: {0}")]
    Singularity(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("degenerate level selection: {0}")]
    Degeneracy(String),

    #[error("unsupported cluster order {order}; orders 1 through {max} are implemented")]
    UnsupportedOrder { order: usize, max: usize },

    #[error("fit range error: {0}")]
    FitRange(String),

    #[error("branch resolution error: {0}")]
    BranchResolution(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code contract: 1 validation/config, 2 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) | Error::FitRange(_) => 2,
            _ => 1,
        }
    }
}
