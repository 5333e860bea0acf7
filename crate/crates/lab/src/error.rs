use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Core(#[from] proud_core::Error),
}

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        LabError::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Configuration problems (including core-side validation) versus runtime failures.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            LabError::Config(_) | LabError::Core(proud_core::Error::Config(_))
        )
    }
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;
