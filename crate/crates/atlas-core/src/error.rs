//! Crate-wide error type.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("gestational day {day} outside supported range {lo}..={hi}")]
    DayOutOfRange { day: i32, lo: i32, hi: i32 },
    #[error("no images in the median window around day {day}")]
    EmptyWindow { day: i32 },
    #[error("mask is empty")]
    EmptyMask,
    #[error("optimization diverged at iteration {iteration}: {term} is non-finite")]
    Diverged { iteration: usize, term: String },
    #[error("non-finite value in {term}")]
    NonFinite { term: String },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Shorthand for a formatted `InvalidArgument`.
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Shorthand for a formatted `DimensionMismatch`.
    pub fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
