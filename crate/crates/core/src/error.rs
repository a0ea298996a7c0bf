use std::path::PathBuf;

/// Error classes map onto process exit codes: usage -> 1, data -> 2,
/// numeric -> 3.
#[derive(Debug, thiserror::Error)]
pub enum FotsError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("{path}: {msg}")]
    Data { path: PathBuf, msg: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FotsError {
    pub fn data(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        FotsError::Data {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FotsError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            FotsError::Usage(_) => 1,
            FotsError::Data { .. } | FotsError::Invalid(_) | FotsError::Io { .. } => 2,
            FotsError::Numeric(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, FotsError>;
