use thiserror::Error;

/// Errors raised by the UEP workbench.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("message index {index} out of range for {count} messages")]
    MessageOutOfRange { index: usize, count: usize },
    #[error("partition kind mismatch: expected {expected}, got {actual}")]
    PartitionKind {
        expected: &'static str,
        actual: &'static str,
    },
    #[error("invalid loss weights: {0}")]
    Weights(String),
    #[error("training diverged at iteration {iteration} (loss = {loss})")]
    Diverged { iteration: usize, loss: f64 },
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
