//! Error type shared by every module of the crate.

use thiserror::Error;

/// Failures reported by geometry, simulation, transcription and certificate code.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A constraint function returned a non-finite value.
    #[error("constraint g{index} is not finite at the evaluation point")]
    Evaluation { index: usize },

    /// Regularity constants violate their sign requirements.
    #[error("invalid regularity constants: {0}")]
    InvalidConstants(String),

    /// The projection iteration did not reach its tolerance.
    #[error("projection failed after {iterations} iterations (residual {residual:e})")]
    Projection {
        iterations: usize,
        residual: f64,
        last_iterate: Vec<f64>,
    },

    /// Active gradients are linearly dependent, so multipliers are not unique.
    #[error("active gradients are rank deficient; multipliers are not unique for active set {active:?}")]
    Ambiguous { active: Vec<usize> },

    /// Input data outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Dimensions of the supplied data do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A drift or kernel evaluation produced NaN or infinity.
    #[error("non-finite value in {what} at node {node}")]
    NonFinite { what: &'static str, node: usize },

    /// The transcribed problem could not be built.
    #[error("build failed: {0}")]
    Build(String),

    /// The optimizer stopped without an acceptable step.
    #[error("line search failed: {0}")]
    LineSearch(String),

    /// Reading or writing a file failed.
    #[error("io error: {0}")]
    Io(String),

    /// Malformed problem or trajectory file.
    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
