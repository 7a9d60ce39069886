use thiserror::Error;

#[derive(Debug, Error)]
pub enum LmlError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("diverged: {0}")]
    Divergence(String),
    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl LmlError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        LmlError::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        LmlError::Config(msg.into())
    }

    /// True for errors caused by bad user input rather than a failed run.
    pub fn is_config(&self) -> bool {
        matches!(self, LmlError::Config(_) | LmlError::Parse { .. } | LmlError::Format(_))
    }
}

pub type Result<T> = std::result::Result<T, LmlError>;

pub(crate) fn ensure_shape(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(LmlError::Shape(msg()))
    }
}
