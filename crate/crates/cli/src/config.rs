//! Flat key-value run configuration (TOML syntax, no tables).
//!
//! Relative paths are resolved against the directory holding the config
//! file. Every key is optional; see `AuditConfig::default` for the values
//! used when a key is absent.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use audit_core::boost::BoostParams;
use audit_core::inference::{DesignReference, Sex};
use audit_core::ingest::Split;
use audit_core::vision::{CnnConfig, LayerSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitChoice {
    All,
    Train,
    Val,
    Test,
}

impl SplitChoice {
    pub fn split(self) -> Option<Split> {
        match self {
            SplitChoice::All => None,
            SplitChoice::Train => Some(Split::Train),
            SplitChoice::Val => Some(Split::Val),
            SplitChoice::Test => Some(Split::Test),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    /// CelebA-format attribute annotation file.
    pub attributes: Option<PathBuf>,
    /// `row_id split` file; a seeded 80/10/10 split is generated when absent.
    pub partition: Option<PathBuf>,
    /// `row_id,path,Young,Male,Attractive` CSV for the saliency level.
    pub image_manifest: Option<PathBuf>,
    /// Previously emitted assignment CSV; recomputed from attributes when absent.
    pub assignments: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,

    pub label: String,
    pub sex_attribute: String,
    pub young_attribute: String,

    /// Attributes left out of clustering in addition to the label.
    pub cluster_exclude: Vec<String>,
    pub k: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub heatmap_cell: usize,

    pub regress_split: SplitChoice,
    pub reference_cluster: usize,
    pub reference_sex: Sex,
    /// Predictors above this VIF are dropped in the robustness refit.
    pub vif_threshold: f64,

    /// Attributes left out of the boosted model in addition to the label.
    pub boost_exclude: Vec<String>,
    pub boost_learning_rate: f64,
    pub boost_max_depth: usize,
    pub boost_n_rounds: usize,
    pub boost_min_child_weight: f64,
    pub boost_lambda_l2: f64,
    pub boost_subsample: f64,
    pub boost_early_stopping: Option<usize>,
    /// Random-search trials over the default grid; 0 trains the fixed params.
    pub search_trials: usize,
    pub search_folds: usize,

    pub cnn_channels: usize,
    pub cnn_epochs: usize,
    pub cnn_train_batch: usize,
    pub cnn_eval_batch: usize,
    pub cnn_learning_rate: f64,
    pub cnn_lr_decay: f64,
    pub cnn_lr_decay_every: usize,
    pub cnn_frozen_prefix: usize,
    pub top_k: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        let boost = BoostParams::default();
        let cnn = CnnConfig::default();
        AuditConfig {
            attributes: None,
            partition: None,
            image_manifest: None,
            assignments: None,
            out_dir: PathBuf::from("audit_report"),
            seed: 0,
            label: "Attractive".into(),
            sex_attribute: "Male".into(),
            young_attribute: "Young".into(),
            cluster_exclude: Vec::new(),
            k: 7,
            k_min: 2,
            k_max: 12,
            heatmap_cell: 12,
            regress_split: SplitChoice::All,
            reference_cluster: 1,
            reference_sex: Sex::Female,
            vif_threshold: 10.0,
            boost_exclude: Vec::new(),
            boost_learning_rate: boost.learning_rate,
            boost_max_depth: boost.max_depth,
            boost_n_rounds: boost.n_rounds,
            boost_min_child_weight: boost.min_child_weight,
            boost_lambda_l2: boost.lambda_l2,
            boost_subsample: boost.subsample,
            boost_early_stopping: boost.early_stopping_rounds,
            search_trials: 0,
            search_folds: 3,
            cnn_channels: 8,
            cnn_epochs: cnn.epochs,
            cnn_train_batch: cnn.train_batch,
            cnn_eval_batch: cnn.eval_batch,
            cnn_learning_rate: cnn.learning_rate,
            cnn_lr_decay: cnn.lr_decay,
            cnn_lr_decay_every: cnn.lr_decay_every,
            cnn_frozen_prefix: cnn.frozen_prefix,
            top_k: 64,
        }
    }
}

impl AuditConfig {
    pub fn load(path: &Path) -> Result<AuditConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let config: AuditConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config { path: path.to_path_buf(), message: e.to_string() })?;
        config.validate().map_err(|message| CliError::Config { path: path.to_path_buf(), message })?;
        Ok(config)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.k == 0 || self.k_min == 0 || self.k_min > self.k_max {
            return Err(format!("need 1 <= k and 1 <= k_min <= k_max (k = {}, range {}..={})", self.k, self.k_min, self.k_max));
        }
        if self.reference_cluster == 0 || self.reference_cluster > self.k {
            return Err(format!("reference_cluster {} outside 1..={}", self.reference_cluster, self.k));
        }
        if self.heatmap_cell == 0 || self.top_k == 0 || self.cnn_channels == 0 {
            return Err("heatmap_cell, top_k and cnn_channels must be positive".into());
        }
        if self.search_trials > 0 && self.search_folds < 2 {
            return Err("search_folds must be at least 2".into());
        }
        self.boost_params(0).validate().map_err(|e| e.to_string())?;
        self.cnn_config(0).validate().map_err(|e| e.to_string())
    }

    /// Rewrites relative input paths as children of `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.attributes, &mut self.partition, &mut self.image_manifest, &mut self.assignments]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if self.out_dir.is_relative() {
            self.out_dir = base.join(&self.out_dir);
        }
    }

    /// SHA-256 over the canonical JSON rendering of every field that can
    /// influence results. The output directory is excluded.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("out_dir");
        }
        hex(&Sha256::digest(value.to_string().as_bytes()))
    }

    pub fn boost_params(&self, seed: u64) -> BoostParams {
        BoostParams {
            learning_rate: self.boost_learning_rate,
            max_depth: self.boost_max_depth,
            n_rounds: self.boost_n_rounds,
            min_child_weight: self.boost_min_child_weight,
            lambda_l2: self.boost_lambda_l2,
            subsample: self.boost_subsample,
            early_stopping_rounds: self.boost_early_stopping,
            seed,
        }
    }

    pub fn cnn_config(&self, seed: u64) -> CnnConfig {
        let w = self.cnn_channels;
        CnnConfig {
            layers: vec![
                LayerSpec::Conv { out_channels: w, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { kernel: 2, stride: 2 },
                LayerSpec::Conv { out_channels: w, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { out: 1 },
            ],
            epochs: self.cnn_epochs,
            train_batch: self.cnn_train_batch,
            eval_batch: self.cnn_eval_batch,
            learning_rate: self.cnn_learning_rate,
            lr_decay: self.cnn_lr_decay,
            lr_decay_every: self.cnn_lr_decay_every,
            frozen_prefix: self.cnn_frozen_prefix,
            seed,
            ..CnnConfig::default()
        }
    }

    pub fn reference(&self) -> DesignReference {
        DesignReference { cluster: self.reference_cluster, sex: self.reference_sex }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Derives an independent per-module seed from the global one.
pub fn derive_seed(global: u64, stream: &str) -> u64 {
    // FNV-1a of the stream name, then one splitmix64 round.
    let tag = stream.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3));
    let mut z = (global ^ tag).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
