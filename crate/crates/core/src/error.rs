use thiserror::Error;

use crate::ctc::CtcError;
use crate::tensor::TensorError;
use crate::trajectory::TrajectoryError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Ctc(#[from] CtcError),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("checkpoint integrity error: {0}")]
    Integrity(String),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the failure came from non-finite arithmetic rather than bad
    /// input or configuration.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Tensor(TensorError::NumericFailure(_)) | Error::NonFiniteGradient(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
