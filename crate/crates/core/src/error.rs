use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e}, tolerance {tolerance:e})")]
    Symmetry { asymmetry: f64, tolerance: f64 },

    #[error("rank deficient input: {0}")]
    Rank(String),

    #[error("singular system (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("unsupported parameter: {0}")]
    Parameter(String),

    #[error("invalid privacy budget: {0}")]
    Budget(String),

    #[error("transform is not positive definite: {0}")]
    Definiteness(String),

    #[error("training diverged at epoch {epoch} (loss {loss}); try a smaller step size")]
    Divergence { epoch: usize, loss: f64 },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

pub(crate) fn input(msg: impl Into<String>) -> Error {
    Error::Input(msg.into())
}

pub(crate) fn dim(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
