//! Desk-scale convolutional classifier with exact-gradient training,
//! Grad-CAM saliency, Top-K subgroup averaging and face composites.

mod checkpoint;
mod gradcam;
pub mod image;
mod net;
mod planted;
mod subgroup;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcam::{average_faces, average_maps, grad_cam, overlay_ppm, quadrant_mass, Quadrant, SaliencyMap};
pub use net::{Backward, CnnModel, Layer, LayerGrad, LayerSpec, Shape, Tensor};
pub use planted::{planted_task, PlantedSpec};
pub use subgroup::{subgroup_metrics, topk_select, Subgroup, SubgroupReport, SubgroupStats};
pub use train::{backprop_check, predict_proba, train_cnn, train_from, GradCheck, TrainReport};

#[derive(Debug, Error)]
pub enum VisionError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("training diverged in epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },
    #[error("layer {0} not found")]
    LayerNotFound(usize),
    #[error("layer {0} is not a convolution")]
    NotConv(usize),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("image decode error: {0}")]
    Image(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl VisionError {
    pub fn is_numeric(&self) -> bool {
        matches!(self, VisionError::Divergence { .. })
    }
}

/// Image with values in [0, 1], stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self, VisionError> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(VisionError::Shape("image dimensions must be positive".into()));
        }
        if data.len() != channels * height * width {
            return Err(VisionError::Shape(format!(
                "{} values for {channels}x{height}x{width}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(VisionError::Shape(format!("pixel {i} = {} outside [0, 1]", data[i])));
        }
        Ok(ImageTensor { channels, height, width, data })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.channels, self.height, self.width)
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn flip_horizontal(&self) -> ImageTensor {
        let t = Tensor::from(self).flip_horizontal();
        ImageTensor { data: t.data, ..self.clone() }
    }

    /// Luminance plane (mean over channels).
    pub fn gray(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        (0..plane)
            .map(|p| (0..self.channels).map(|c| self.data[c * plane + p]).sum::<f64>() / self.channels as f64)
            .collect()
    }
}

/// Network and optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub layers: Vec<LayerSpec>,
    pub epochs: usize,
    pub train_batch: usize,
    pub eval_batch: usize,
    pub learning_rate: f64,
    /// Step decay: the rate is multiplied by `lr_decay` every
    /// `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Number of leading layers whose parameters are never updated.
    pub frozen_prefix: usize,
    pub seed: u64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            layers: vec![
                LayerSpec::Conv { out_channels: 8, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { kernel: 2, stride: 2 },
                LayerSpec::Conv { out_channels: 8, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { out: 1 },
            ],
            epochs: 10,
            train_batch: 64,
            eval_batch: 128,
            learning_rate: 1e-3,
            lr_decay: 0.5,
            lr_decay_every: 3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            frozen_prefix: 0,
            seed: 0,
        }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<(), VisionError> {
        let bad = |m: &str| Err(VisionError::Config(m.into()));
        if self.train_batch == 0 || self.eval_batch == 0 {
            return bad("batch sizes must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.lr_decay_every == 0 {
            return bad("decay factor must be in (0, 1] with a positive period");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return bad("moment coefficients must be in [0, 1) and epsilon positive");
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (0-based).
    pub fn rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }

    /// Index of the last convolution, the default Grad-CAM target.
    pub fn last_conv(&self) -> Option<usize> {
        self.layers.iter().rposition(LayerSpec::is_conv)
    }
}
