use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length error: {0}")]
    Length(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("index {index} out of range for {len} channels")]
    Index { index: usize, len: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("trace was recorded with different parameters (checksum {recorded:#x}, now {current:#x})")]
    StaleTrace { recorded: u64, current: u64 },
    #[error("evaluator failed at iteration {iteration}: {message}")]
    Evaluator { iteration: usize, message: String },
    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
