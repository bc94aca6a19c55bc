use instruct_nmt_model::ModelError;

/// Failure classes with distinct process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("stage `{stage}` has not produced {artifact}; run `instruct-nmt {stage}` first")]
    Prerequisite { stage: String, artifact: String },
    #[error("acceptance thresholds violated: {}", .0.join("; "))]
    Threshold(Vec<String>),
    #[error("stage `{0}`: inputs differ from the recorded run; rerun with --force to replace its artifacts")]
    ResumeMismatch(String),
    #[error(transparent)]
    Core(#[from] instruct_nmt_core::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Prerequisite { .. } => 2,
            CliError::Threshold(_) => 3,
            _ => 1,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
