use thiserror::Error;

#[derive(Error, Debug)]
pub enum NdistError {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid input for {context}: {reason}")]
    InvalidInput { context: &'static str, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("non-finite loss in term `{term}` at step {step}")]
    NonFiniteLoss { term: &'static str, step: usize },

    #[error("audio error: {0}")]
    Audio(String),

    #[error(transparent)]
    Candle(#[from] candle_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NdistError>;

impl NdistError {
    pub fn shape(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Self::ShapeMismatch {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn invalid(context: &'static str, reason: impl ToString) -> Self {
        Self::InvalidInput {
            context,
            reason: reason.to_string(),
        }
    }
}
