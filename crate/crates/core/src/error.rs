//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A geometry parameter violates its unit-cell bounds.
    #[error("bounds violation: {0}")]
    Bounds(String),

    /// Invalid configuration or argument combination.
    #[error("configuration error: {0}")]
    Config(String),

    /// Grid too coarse to resolve the requested geometry.
    #[error("resolution error: {0}")]
    Resolution(String),

    /// The discrete linear system could not be solved.
    #[error("solver error: {0}")]
    Solver(String),

    /// A numeric operation produced or received a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A dataset or run-state consistency check failed.
    #[error("validation error: {0}")]
    Validation(String),

    /// A configured capacity (node budget, memory cap) was exceeded.
    #[error("capacity error: {0}")]
    Capacity(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
