use thiserror::Error;

use crate::autodiff::AdError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("autodiff: {0}")]
    Autodiff(#[from] AdError),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A numerical routine produced NaN/Inf or exceeded its blow-up bound.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// True for failures that stem from the numerics rather than from
    /// malformed inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::Autodiff(_))
    }
}
