//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by any pivopt module.
#[derive(Debug, Error)]
pub enum PivError {
    /// A parameter vector violates its type invariants.
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// An input value or series is malformed or out of contract.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A simulated path left the finite range.
    #[error("non-finite value on path {path} at step {step} ({context})")]
    NonFinitePath {
        path: usize,
        step: usize,
        context: String,
    },

    /// A numerical routine failed to converge or lost accuracy.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An observed option price violates static arbitrage bounds.
    #[error("arbitrage violation: price {price} outside [{lower}, {upper}]")]
    ArbitrageViolation { price: f64, lower: f64, upper: f64 },

    /// No risk-free rate available on or before the requested date.
    #[error("no rate available on or before {0}")]
    MissingRate(chrono::NaiveDate),

    /// File I/O failure with path context.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file could not be parsed.
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, PivError>;

impl PivError {
    pub fn invalid_params(msg: impl Into<String>) -> Self {
        PivError::InvalidParams(msg.into())
    }

    pub fn invalid_input(msg: impl Into<String>) -> Self {
        PivError::InvalidInput(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        PivError::Numerical(msg.into())
    }
}
