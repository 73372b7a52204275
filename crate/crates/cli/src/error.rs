use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ddlab::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Config {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// Checkpoint, dataset or flags disagree about what is being evaluated.
    #[error("manifest mismatch: {0}")]
    Mismatch(String),

    #[error("invalid arguments: {0}")]
    Usage(String),

    #[error("{failed} of {total} gradient checks failed")]
    GradCheck { failed: usize, total: usize },

    #[error("{failed} of {total} report rows could not be read")]
    Report { failed: usize, total: usize },
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}
