use thiserror::Error;

use crate::boost::BoostError;
use crate::cluster::ClusterError;
use crate::inference::InferenceError;
use crate::ingest::IngestError;
use crate::vision::VisionError;

pub type Result<T> = std::result::Result<T, Error>;

/// Union of the per-module errors, used by callers that drive several levels.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Boost(#[from] BoostError),
    #[error(transparent)]
    Vision(#[from] VisionError),
}

impl Error {
    /// True for failures of a numerical procedure (non-convergence, separation,
    /// singular systems, divergence) as opposed to malformed or missing data.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Ingest(_) => false,
            Error::Cluster(e) => e.is_numeric(),
            Error::Inference(e) => e.is_numeric(),
            Error::Boost(e) => e.is_numeric(),
            Error::Vision(e) => e.is_numeric(),
        }
    }
}
