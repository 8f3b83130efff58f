use thiserror::Error;
use twophase_tensor::TensorError;

use crate::engine::StepRecord;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    /// Invalid search space, budget or experiment configuration.
    #[error("configuration: {0}")]
    Config(String),

    #[error("genotype: {0}")]
    Genotype(String),

    /// Malformed or unusable input data (datasets, accuracy tables).
    #[error("data: {0}")]
    Data(String),

    #[error("{phase} diverged at step {step}: loss {loss}")]
    Divergence {
        phase: String,
        step: usize,
        loss: f64,
        trace: Vec<StepRecord>,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse failure class, used for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl CoreError {
    pub fn class(&self) -> ErrorClass {
        match self {
            CoreError::Config(_) | CoreError::Genotype(_) => ErrorClass::Usage,
            CoreError::Data(_) | CoreError::Io(_) | CoreError::Json(_) => ErrorClass::Data,
            CoreError::Divergence { .. } | CoreError::Numerical(_) => ErrorClass::Numerical,
            CoreError::Tensor(TensorError::Shape { .. }) => ErrorClass::Usage,
            CoreError::Tensor(_) => ErrorClass::Numerical,
        }
    }
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(CoreError::Config(msg.into()))
}

pub(crate) fn data<T>(msg: impl Into<String>) -> Result<T> {
    Err(CoreError::Data(msg.into()))
}
