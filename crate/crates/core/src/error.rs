use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("non-deterministic loss: {0}")]
    Determinism(String),

    #[error("invalid benchmark spec: {0}")]
    Spec(String),

    #[error("step {step} out of range (1..={max})")]
    StepOutOfRange { step: usize, max: usize },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("unavailable: {0}")]
    Unavailable(String),

    #[error("state error: {0}")]
    State(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}
