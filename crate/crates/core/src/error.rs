use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// `line` and `column` are 1-based; 0 means the position is unknown.
    #[error("parse error{}: {message}", location(*line, *column))]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid conversation {index}: {reason}")]
    Validation { index: usize, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("sequence of length {len} exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },

    #[error("unknown strategy: {0}")]
    UnknownStrategy(String),

    #[error("ratio undefined at token {token}: p_full > 0 but p_ctx = 0")]
    UndefinedRatio { token: usize },

    #[error("training diverged at step {step}: loss is {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("session not found: {0}")]
    SessionNotFound(String),

    #[error("missing scores for conversations {0:?}")]
    MissingScores(Vec<usize>),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

fn location(line: usize, column: usize) -> String {
    if line == 0 {
        String::new()
    } else {
        format!(" at line {line}, column {column}")
    }
}
