use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("parameter `{name}`: {msg}")]
    Param { name: String, msg: String },
    #[error("divergence at step {step}: loss is {loss}")]
    Divergence { step: usize, loss: f64 },
    #[error("principal components: {0}")]
    Rank(String),
    #[error("corrupt checkpoint {path} at byte {offset}: {msg}")]
    Corrupt { path: PathBuf, offset: u64, msg: String },
    #[error("checkpoint {path} has format version {found}, this build reads version {expected}")]
    Version { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
