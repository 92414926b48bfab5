use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported: {0}")]
    Unsupported(&'static str),
    #[error("training diverged at epoch {epoch}, step {step} (loss = {loss})")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Parse(String),
    #[error("corrupt encoding: {0}")]
    Corrupt(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u8, expected: u8 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(context: &'static str, expected: impl ToString, got: impl ToString) -> Error {
    Error::Dimension {
        context,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
