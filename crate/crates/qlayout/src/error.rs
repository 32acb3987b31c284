use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] qlayout_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),

    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("checkpoint payload is truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch (stored {stored:08x}, computed {computed:08x})")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("schema version {found} of `{kind}` is not supported (expected {expected})")]
    Schema { kind: String, found: u32, expected: u32 },
    #[error("bundles come from different experiments: {0}")]
    ExperimentMismatch(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error.
    pub fn code(&self) -> i32 {
        match self {
            Self::Core(_) => 10,
            Self::Io { .. } => 11,
            Self::Json(_) | Self::Toml(_) | Self::Csv(_) | Self::Format { .. } => 12,
            Self::BadMagic => 20,
            Self::VersionMismatch { .. } => 21,
            Self::Truncated => 22,
            Self::ChecksumMismatch { .. } => 23,
            Self::Config(_) | Self::Schema { .. } => 2,
            Self::ExperimentMismatch(_) => 13,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
