use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Syntax error in formula text, with the byte offset where it was found.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at position {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("enumerating 2^{n} assignments exceeds the limit of 2^{max}; use Monte Carlo mode")]
    EnumerationOverflow { n: usize, max: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("incompatible model or protocol: {0}")]
    Mismatch(String),

    #[error("teacher sequence exhausted after {steps} steps")]
    TeacherExhausted { steps: usize },

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the numeric engine rather than inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::NoConvergence { .. } | Error::Shape { .. })
    }

    /// True for failures caused by an invalid configuration.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Mismatch(_))
    }
}
