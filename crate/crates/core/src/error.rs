use thiserror::Error;

use crate::linalg::LinalgError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("unknown one-dimensional target id {0} (expected 1..=5)")]
    UnknownTargetId(u32),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("kernel {0} needs a preconditioner or mirror centre")]
    MissingPreconditioner(&'static str),
    #[error("gradient is not finite at the requested point")]
    NonFiniteGradient,
    #[error("epsilon must be positive, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("series is degenerate (zero variance)")]
    DegenerateSeries,
    #[error("series too short: need at least {needed} values, got {got}")]
    SeriesTooShort { needed: usize, got: usize },
    #[error("covariance estimate is singular: {0}")]
    SingularCovariance(LinalgError),
    #[error("epsilon tuning failed: acceptance {achieved:.4} vs target {target:.4}")]
    TuningFailed { achieved: f64, target: f64 },
    #[error("whitening pattern violation: {0}")]
    PatternViolation(String),
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("bad subject grouping: {0}")]
    BadSubjectGrouping(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
