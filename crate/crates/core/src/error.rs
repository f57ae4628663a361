use thiserror::Error;

/// Errors produced by the compression library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },

    #[error("invalid histogram: {0}")]
    InvalidHistogram(String),

    #[error("invalid ground metric: {0}")]
    InvalidGroundMetric(String),

    #[error("marginals are infeasible: masses {0} and {1} differ")]
    InfeasibleMarginals(f64, f64),

    #[error("empty input")]
    EmptyInput,

    #[error("prototype set is empty")]
    EmptyPrototypeSet,

    #[error("reference set is empty")]
    EmptyReference,

    #[error("too few inputs: need {needed}, have {have}")]
    TooFewInputs { needed: usize, have: usize },

    #[error("too few features: need at least 2, have {0}")]
    TooFewFeatures(usize),

    #[error("correct-classification probability underflowed for input {index} (p = {value:e})")]
    DegeneratePi { index: usize, value: f64 },

    #[error("kernel underflow: lambda * M too large for this ground metric")]
    NumericalUnderflow,

    #[error("sinkhorn did not converge (violation {violation:e} after {iterations} iterations)")]
    NotConverged { iterations: usize, violation: f64 },

    #[error("non-finite input")]
    NonFiniteInput,

    #[error("input reduced set is not training-consistent")]
    InconsistentInput,

    #[error("centroid computation failed: {0}")]
    CentroidFailure(String),

    #[error("self check failed: {0}")]
    CheckFailed(String),

    #[error("bad parameters: {0}")]
    BadParameters(String),

    #[error("descriptor family mismatch: {0}")]
    FamilyMismatch(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("format error: {0}")]
    Format(String),
}

/// Coarse error classes, used by the CLI to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Numerical,
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NotPositiveDefinite { .. }
            | Error::DegeneratePi { .. }
            | Error::NumericalUnderflow
            | Error::NotConverged { .. }
            | Error::CentroidFailure(_)
            | Error::CheckFailed(_) => ErrorClass::Numerical,
            Error::Io(_) => ErrorClass::Io,
            _ => ErrorClass::Validation,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
