//! Second-order gradient boosting on binary features with logistic loss,
//! exact path-dependent TreeSHAP, per-subgroup attribution summaries and a
//! seeded random hyperparameter search.

mod search;
mod shap;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::AttributeTable;

pub use search::{hyper_search, ParamGrid, SearchReport, SearchSpace, Trial};
pub use shap::{
    expected_margin, shap_summary_by_group, tree_shap, tree_shap_single, Attribution, Attributions, FeatureShapStats, Quantiles,
    ShapSummary,
};
pub use train::{train_gbdt, RoundLog};

/// Split threshold for {0,1} features: rows with `x < 0.5` go left.
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum BoostError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("degenerate labels: {0}")]
    DegenerateLabel(String),
    #[error("feature mismatch: {0}")]
    FeatureMismatch(String),
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("model integrity: {0}")]
    ModelIntegrity(String),
    #[error("model parse error: {0}")]
    Parse(String),
}

impl BoostError {
    pub fn is_numeric(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub learning_rate: f64,
    pub max_depth: usize,
    pub n_rounds: usize,
    pub min_child_weight: f64,
    pub lambda_l2: f64,
    pub subsample: f64,
    pub early_stopping_rounds: Option<usize>,
    pub seed: u64,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            learning_rate: 0.1,
            max_depth: 6,
            n_rounds: 300,
            min_child_weight: 1.0,
            lambda_l2: 1.0,
            subsample: 1.0,
            early_stopping_rounds: None,
            seed: 0,
        }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<(), BoostError> {
        let bad = |m: String| Err(BoostError::InvalidParams(m));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning_rate {} outside (0, 1]", self.learning_rate));
        }
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1".into());
        }
        if self.n_rounds == 0 {
            return bad("n_rounds must be at least 1".into());
        }
        if !(self.min_child_weight >= 0.0) {
            return bad(format!("min_child_weight {} is negative", self.min_child_weight));
        }
        if !(self.lambda_l2 >= 0.0) {
            return bad(format!("lambda_l2 {} is negative", self.lambda_l2));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad(format!("subsample {} outside (0, 1]", self.subsample));
        }
        if self.early_stopping_rounds == Some(0) {
            return bad("early_stopping_rounds must be positive when set".into());
        }
        Ok(())
    }
}

/// Tree node. Internal nodes route `x[feature] < THRESHOLD` to `left`.
/// `cover` is the training hessian mass reaching the node; `value` is the
/// leaf output (already scaled by the learning rate) and, on internal nodes,
/// the output the node would have had as a leaf.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub feature: Option<usize>,
    pub left: usize,
    pub right: usize,
    pub cover: f64,
    pub value: f64,
}

impl Node {
    pub fn leaf(value: f64, cover: f64) -> Node {
        Node {
            feature: None,
            left: 0,
            right: 0,
            cover,
            value,
        }
    }

    pub fn split(feature: usize, left: usize, right: usize, cover: f64, value: f64) -> Node {
        Node {
            feature: Some(feature),
            left,
            right,
            cover,
            value,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.feature.is_none()
    }
}

/// Regression tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[u8]) -> f64 {
        let mut i = 0;
        loop {
            let node = &self.nodes[i];
            match node.feature {
                None => return node.value,
                Some(f) => i = if f64::from(row[f]) < THRESHOLD { node.left } else { node.right },
            }
        }
    }

    /// Cover-weighted mean leaf value.
    pub fn expected_value(&self) -> f64 {
        fn walk(t: &Tree, i: usize) -> f64 {
            let n = &t.nodes[i];
            if n.is_leaf() {
                n.value
            } else {
                let (l, r) = (&t.nodes[n.left], &t.nodes[n.right]);
                (l.cover * walk(t, n.left) + r.cover * walk(t, n.right)) / (l.cover + r.cover)
            }
        }
        walk(self, 0)
    }

    pub fn max_depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            let n = &t.nodes[i];
            if n.is_leaf() {
                0
            } else {
                1 + walk(t, n.left).max(walk(t, n.right))
            }
        }
        walk(self, 0)
    }

    fn validate(&self, n_features: usize) -> Result<(), BoostError> {
        if self.nodes.is_empty() {
            return Err(BoostError::ModelIntegrity("empty tree".into()));
        }
        let mut parents = vec![0usize; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.value.is_finite() {
                return Err(BoostError::ModelIntegrity(format!("node {i} has non-finite value")));
            }
            if let Some(f) = n.feature {
                if f >= n_features {
                    return Err(BoostError::ModelIntegrity(format!(
                        "node {i} splits on feature {f} of {n_features}"
                    )));
                }
                for c in [n.left, n.right] {
                    if c <= i || c >= self.nodes.len() {
                        return Err(BoostError::ModelIntegrity(format!(
                            "node {i} has dangling child {c}"
                        )));
                    }
                    parents[c] += 1;
                }
                let child_cover = self.nodes[n.left].cover + self.nodes[n.right].cover;
                if !(self.nodes[n.left].cover > 0.0 && self.nodes[n.right].cover > 0.0)
                    || (child_cover - n.cover).abs() > 1e-9 * n.cover.max(1.0)
                {
                    return Err(BoostError::ModelIntegrity(format!(
                        "node {i} children covers do not partition its cover"
                    )));
                }
            }
        }
        if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
            return Err(BoostError::ModelIntegrity("nodes do not form a tree".into()));
        }
        Ok(())
    }
}

/// Additive tree ensemble over the logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostModel {
    pub format_version: u32,
    pub feature_names: Vec<String>,
    /// Initial margin: log-odds of the training positive rate.
    pub base_score: f64,
    pub trees: Vec<Tree>,
    pub params: BoostParams,
    pub history: Vec<RoundLog>,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

impl BoostModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn validate(&self) -> Result<(), BoostError> {
        if !self.base_score.is_finite() {
            return Err(BoostError::ModelIntegrity("non-finite base score".into()));
        }
        self.trees
            .iter()
            .enumerate()
            .try_for_each(|(t, tree)| {
                tree.validate(self.n_features()).map_err(|e| match e {
                    BoostError::ModelIntegrity(m) => BoostError::ModelIntegrity(format!("tree {t}: {m}")),
                    other => other,
                })
            })
    }

    pub fn margin_row(&self, row: &[u8]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<BoostModel, BoostError> {
        let model: BoostModel =
            serde_json::from_str(text).map_err(|e| BoostError::Parse(e.to_string()))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(BoostError::Parse(format!(
                "unsupported model format version {}",
                model.format_version
            )));
        }
        model.validate()?;
        Ok(model)
    }

    fn check_features(&self, x: &AttributeTable) -> Result<(), BoostError> {
        if x.attribute_names() != self.feature_names.as_slice() {
            return Err(BoostError::FeatureMismatch(format!(
                "model has {} features, table has {} (names must match in order)",
                self.n_features(),
                x.n_cols()
            )));
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Raw ensemble output `base + sum of tree outputs` per row.
pub fn predict_margin(model: &BoostModel, x: &AttributeTable) -> Result<Vec<f64>, BoostError> {
    model.check_features(x)?;
    Ok((0..x.n_rows()).map(|i| model.margin_row(x.row(i))).collect())
}

pub fn predict_proba(model: &BoostModel, x: &AttributeTable) -> Result<Vec<f64>, BoostError> {
    Ok(predict_margin(model, x)?.into_iter().map(sigmoid).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Provenance;

    fn stump() -> BoostModel {
        BoostModel {
            format_version: MODEL_FORMAT_VERSION,
            feature_names: vec!["a".into(), "b".into()],
            base_score: 0.25,
            trees: vec![Tree {
                nodes: vec![
                    Node::split(1, 1, 2, 4.0, 0.0),
                    Node::leaf(-0.5, 1.0),
                    Node::leaf(0.75, 3.0),
                ],
            }],
            params: BoostParams::default(),
            history: Vec::new(),
        }
    }

    fn table(rows: &[[u8; 2]]) -> AttributeTable {
        let cols = vec![rows.iter().map(|r| r[0]).collect(), rows.iter().map(|r| r[1]).collect()];
        AttributeTable::from_columns(vec!["a".into(), "b".into()], &cols, Provenance::Synthetic).unwrap()
    }

    #[test]
    fn stump_margins_by_hand() {
        let m = stump();
        let margins = predict_margin(&m, &table(&[[0, 0], [1, 1], [1, 0]])).unwrap();
        assert!((margins[0] - (0.25 - 0.5)).abs() < 1e-12);
        assert!((margins[1] - (0.25 + 0.75)).abs() < 1e-12);
        assert!((margins[2] - (0.25 - 0.5)).abs() < 1e-12);
        assert!((m.trees[0].expected_value() - (-0.5 + 3.0 * 0.75) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn empty_ensemble_predicts_base() {
        let mut m = stump();
        m.trees.clear();
        let p = predict_proba(&m, &table(&[[0, 1], [1, 0]])).unwrap();
        assert!(p.iter().all(|&v| v == sigmoid(0.25)));
    }

    #[test]
    fn flipping_positive_delta_feature_never_lowers_margin() {
        let m = stump();
        for a in 0..2u8 {
            assert!(m.margin_row(&[a, 1]) >= m.margin_row(&[a, 0]));
        }
    }

    #[test]
    fn feature_count_mismatch() {
        let m = stump();
        let t = AttributeTable::from_columns(vec!["a".into()], &[vec![1]], Provenance::Synthetic).unwrap();
        assert!(matches!(predict_margin(&m, &t), Err(BoostError::FeatureMismatch(_))));
    }

    #[test]
    fn integrity_checks() {
        let mut m = stump();
        assert!(m.validate().is_ok());
        m.trees[0].nodes[0].right = 7;
        assert!(matches!(m.validate(), Err(BoostError::ModelIntegrity(_))));
        let mut m = stump();
        m.trees[0].nodes[0].feature = Some(5);
        assert!(m.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = stump();
        assert_eq!(BoostModel::from_json(&m.to_json()).unwrap(), m);
        let broken = m.to_json().replace("\"right\":2", "\"right\":9");
        assert!(BoostModel::from_json(&broken).is_err());
    }

    #[test]
    fn param_validation() {
        assert!(BoostParams::default().validate().is_ok());
        for p in [
            BoostParams { n_rounds: 0, ..Default::default() },
            BoostParams { max_depth: 0, ..Default::default() },
            BoostParams { learning_rate: 0.0, ..Default::default() },
            BoostParams { subsample: 1.5, ..Default::default() },
            BoostParams { lambda_l2: -1.0, ..Default::default() },
        ] {
            assert!(p.validate().is_err());
        }
    }
}
