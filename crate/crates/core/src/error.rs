use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("arm index {index} out of range for instance with {n} arms")]
    ArmOutOfRange { index: usize, n: usize },

    #[error("no arm has been pulled yet")]
    NoPulledArm,

    #[error("quantity undefined: {0}")]
    Undefined(String),

    #[error("enumeration budget exceeded: {0}")]
    Budget(String),

    #[error("malformed input at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
