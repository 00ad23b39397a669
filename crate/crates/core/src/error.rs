use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest {path} line {line}: {reason}")]
    ManifestLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("image decode failed for {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("image encode failed: {0}")]
    Encode(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("splice synthesis failed: {0}")]
    Synthesis(String),

    #[error("degenerate pool: {0}")]
    DegeneratePool(&'static str),

    #[error("config error for key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("head uninitialized: checkpoint holds no trained localization head (stage {stage})")]
    HeadUninitialized { stage: u8 },

    #[error("training aborted: {0}")]
    Training(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }
}
