use std::path::PathBuf;

use audit_core::metrics::MetricError;
use thiserror::Error;

pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// An input or prerequisite artifact the command needs is absent or does
    /// not match the data it is used with.
    #[error("missing or stale prerequisite {artifact}: {detail}")]
    Prerequisite { artifact: String, detail: String },
    #[error(transparent)]
    Core(#[from] audit_core::Error),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn missing(artifact: impl Into<String>, detail: impl Into<String>) -> Self {
        CliError::Prerequisite { artifact: artifact.into(), detail: detail.into() }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numeric() => EXIT_NUMERIC,
            _ => EXIT_DATA,
        }
    }
}

// Module errors convert through the core union so `?` works at call sites.
macro_rules! via_core {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        }
    )*};
}

via_core!(
    audit_core::ingest::IngestError,
    audit_core::cluster::ClusterError,
    audit_core::inference::InferenceError,
    audit_core::boost::BoostError,
    audit_core::vision::VisionError
);

pub type Result<T> = std::result::Result<T, CliError>;
