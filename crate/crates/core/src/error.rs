use thiserror::Error;

/// Errors raised by the detection library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum StemError {
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("bandwidth {gamma} is smaller than the grid spacing {dt}")]
    BandwidthTooSmall { gamma: f64, dt: f64 },

    #[error("grid spacing mismatch: sequence dt={sequence} but kernel dt={kernel}")]
    GridMismatch { sequence: f64, kernel: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("no local maxima above the threshold (found {count})")]
    NoQualifyingMaxima { count: usize },

    #[error("candidate at index {index} has no p-value")]
    MissingPValue { index: usize },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("invalid design: {0}")]
    Design(String),
}

pub type Result<T> = std::result::Result<T, StemError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> StemError {
    StemError::InvalidArgument {
        name,
        reason: reason.into(),
    }
}
