use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Sampler(#[from] mirror_mcmc::Error),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ExperimentError {
    /// Process exit status: 2 for configuration problems, 3 for unusable
    /// input data, 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        use mirror_mcmc::Error as E;
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Data(_) => 3,
            ExperimentError::Sampler(E::SchemaError(_) | E::BadSubjectGrouping(_) | E::Csv(_) | E::Io(_)) => {
                3
            }
            ExperimentError::Sampler(
                E::InvalidConfig(_) | E::NonPositiveEpsilon(_) | E::UnknownTargetId(_),
            ) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = ExperimentError> = std::result::Result<T, E>;
