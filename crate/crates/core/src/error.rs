use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {msg}")]
    Malformed {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("task `{task}`: {msg}")]
    Task { task: String, msg: String },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("tokenizer: {0}")]
    Tokenizer(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn task(task: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Task {
            task: task.into(),
            msg: msg.into(),
        }
    }
}
