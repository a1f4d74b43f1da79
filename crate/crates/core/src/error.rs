use thiserror::Error;

#[derive(Debug, Error)]
pub enum GttaError {
    #[error("format error: {0}")]
    Format(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("training diverged at step {step}")]
    TrainingDiverged { step: usize },
    #[error("weights sum to zero")]
    DegenerateWeight,
    #[error("unsupported task: {0}")]
    UnsupportedTask(String),
    #[error("predictor failed: {0}")]
    Predictor(String),
}

pub type Result<T> = std::result::Result<T, GttaError>;
