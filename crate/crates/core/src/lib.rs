//! Three-level representational-bias audit for binary-attribute face datasets.
//!
//! The levels are independent but share the same data model:
//!
//! 1. [`cluster`] and [`inference`]: attribute co-occurrence clustering,
//!    coverage-ratio assignment of images to trait clusters, and
//!    cluster-by-sex label statistics with an interaction logistic model.
//! 2. [`boost`]: a second-order gradient-boosted tree classifier with exact
//!    path-dependent TreeSHAP attributions, summarized per subgroup.
//! 3. [`vision`]: a small convolutional classifier, Grad-CAM saliency from
//!    its final convolutional layer, and subgroup accuracy / AP reporting.
//!
//! [`ingest`] parses CelebA-format annotation files and produces seeded
//! synthetic tables; [`metrics`] holds the ranking and classification
//! metrics shared by the last two levels.

pub mod boost;
pub mod cluster;
mod error;
pub mod inference;
pub mod ingest;
pub(crate) mod linalg;
pub mod metrics;
pub mod vision;

pub use error::{Error, Result};
pub use ingest::AttributeTable;
