//! Error types shared across the crate.

use crate::nifti::NiftiError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },

    #[error("sampler diverged at step {step}: state contains non-finite values")]
    SamplerDiverged { step: usize },

    #[error("training diverged at iteration {iter}: loss is not finite")]
    TrainingDiverged { iter: usize },

    #[error("backward called without a cached forward pass")]
    MissingForwardCache,

    #[error(transparent)]
    Nifti(#[from] NiftiError),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
