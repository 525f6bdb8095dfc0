//! Exact path-dependent TreeSHAP.
//!
//! The value of a coalition S is the expected tree output when the features
//! in S follow the explained row and every other split is averaged over its
//! children in proportion to training cover. Attributions are the exact
//! Shapley values of that game, computed in polynomial time by tracking the
//! fraction of coalition orderings along each root-to-leaf path.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BoostError, BoostModel, Tree, THRESHOLD};
use crate::ingest::AttributeTable;

/// Attribution of one row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    /// Expected margin over the training cover.
    pub base: f64,
    pub phi: Vec<f64>,
}

impl Attribution {
    /// `base + sum(phi)`, which equals the model margin for the row.
    pub fn reconstructed_margin(&self) -> f64 {
        self.base + self.phi.iter().sum::<f64>()
    }
}

/// Attributions for a batch of rows, row-major N x M.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attributions {
    pub feature_names: Vec<String>,
    pub row_ids: Vec<String>,
    pub base: f64,
    pub phi: Vec<f64>,
    pub margins: Vec<f64>,
}

impl Attributions {
    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.n_features();
        &self.phi[i * m..(i + 1) * m]
    }

    /// Long-format CSV: one line per (row, feature).
    pub fn to_csv(&self, x: &AttributeTable, groups: Option<&[String]>) -> String {
        let mut out = String::from("image_id,feature,value,phi,base,margin,subgroup\n");
        for i in 0..self.n_rows() {
            let g = groups.map_or("all", |g| g[i].as_str());
            for (j, name) in self.feature_names.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    self.row_ids[i],
                    name,
                    x.get(i, j),
                    self.row(i)[j],
                    self.base,
                    self.margins[i],
                    g
                );
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct PathElement {
    feature: Option<usize>,
    zero_fraction: f64,
    one_fraction: f64,
    pweight: f64,
}

fn extend(path: &mut Vec<PathElement>, zero_fraction: f64, one_fraction: f64, feature: Option<usize>) {
    let depth = path.len();
    path.push(PathElement {
        feature,
        zero_fraction,
        one_fraction,
        pweight: if depth == 0 { 1.0 } else { 0.0 },
    });
    let d1 = (depth + 1) as f64;
    for i in (0..depth).rev() {
        path[i + 1].pweight += one_fraction * path[i].pweight * (i + 1) as f64 / d1;
        path[i].pweight = zero_fraction * path[i].pweight * (depth - i) as f64 / d1;
    }
}

/// Removes element `index` from the path, undoing its extension.
fn unwind(path: &mut Vec<PathElement>, index: usize) {
    let depth = path.len() - 1;
    let PathElement { one_fraction: one, zero_fraction: zero, .. } = path[index];
    let d1 = (depth + 1) as f64;
    let mut next_one = path[depth].pweight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].pweight;
            path[i].pweight = next_one * d1 / ((i + 1) as f64 * one);
            next_one = tmp - path[i].pweight * zero * (depth - i) as f64 / d1;
        } else {
            path[i].pweight = path[i].pweight * d1 / (zero * (depth - i) as f64);
        }
    }
    // weights stay in place; only the feature data shifts down
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
    path.pop();
}

/// Total weight the path would have if element `index` were unwound.
fn unwound_sum(path: &[PathElement], index: usize) -> f64 {
    let depth = path.len() - 1;
    let PathElement { one_fraction: one, zero_fraction: zero, .. } = path[index];
    let d1 = (depth + 1) as f64;
    let mut next_one = path[depth].pweight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next_one * d1 / ((i + 1) as f64 * one);
            total += tmp;
            next_one = path[i].pweight - tmp * zero * (depth - i) as f64 / d1;
        } else {
            total += path[i].pweight / (zero * (depth - i) as f64 / d1);
        }
    }
    total
}

fn recurse(
    tree: &Tree,
    row: &[u8],
    phi: &mut [f64],
    node: usize,
    mut path: Vec<PathElement>,
    zero_fraction: f64,
    one_fraction: f64,
    feature: Option<usize>,
) {
    extend(&mut path, zero_fraction, one_fraction, feature);
    let n = &tree.nodes[node];
    let Some(split) = n.feature else {
        for i in 1..path.len() {
            let w = unwound_sum(&path, i);
            let e = path[i];
            if let Some(f) = e.feature {
                phi[f] += w * (e.one_fraction - e.zero_fraction) * n.value;
            }
        }
        return;
    };
    let (hot, cold) = if f64::from(row[split]) < THRESHOLD {
        (n.left, n.right)
    } else {
        (n.right, n.left)
    };
    let cover = tree.nodes[n.left].cover + tree.nodes[n.right].cover;
    let hot_zero = tree.nodes[hot].cover / cover;
    let cold_zero = tree.nodes[cold].cover / cover;
    let (mut incoming_zero, mut incoming_one) = (1.0, 1.0);
    // a feature seen earlier on the path is merged rather than counted twice
    if let Some(k) = path.iter().position(|e| e.feature == Some(split)) {
        incoming_zero = path[k].zero_fraction;
        incoming_one = path[k].one_fraction;
        unwind(&mut path, k);
    }
    recurse(tree, row, phi, hot, path.clone(), hot_zero * incoming_zero, incoming_one, Some(split));
    recurse(tree, row, phi, cold, path, cold_zero * incoming_zero, 0.0, Some(split));
}

fn tree_shap_row(model: &BoostModel, row: &[u8]) -> Vec<f64> {
    let mut phi = vec![0.0; model.n_features()];
    for tree in &model.trees {
        let depth = tree.max_depth();
        recurse(tree, row, &mut phi, 0, Vec::with_capacity(depth + 2), 1.0, 1.0, None);
    }
    phi
}

/// Expected margin under the training cover: base score plus each tree's
/// cover-weighted mean leaf value.
pub fn expected_margin(model: &BoostModel) -> f64 {
    model.base_score + model.trees.iter().map(Tree::expected_value).sum::<f64>()
}

/// Attributions for one row of binary feature values.
pub fn tree_shap_single(model: &BoostModel, row: &[u8]) -> Result<Attribution, BoostError> {
    if row.len() != model.n_features() {
        return Err(BoostError::FeatureMismatch(format!(
            "row has {} features, model has {}",
            row.len(),
            model.n_features()
        )));
    }
    Ok(Attribution {
        base: expected_margin(model),
        phi: tree_shap_row(model, row),
    })
}

/// Attributions for every row of `x`, computed in parallel.
pub fn tree_shap(model: &BoostModel, x: &AttributeTable) -> Result<Attributions, BoostError> {
    model.check_features(x)?;
    let rows: Vec<Vec<f64>> = (0..x.n_rows())
        .into_par_iter()
        .map(|i| tree_shap_row(model, x.row(i)))
        .collect();
    Ok(Attributions {
        feature_names: model.feature_names.clone(),
        row_ids: x.row_ids().to_vec(),
        base: expected_margin(model),
        phi: rows.concat(),
        margins: (0..x.n_rows()).map(|i| model.margin_row(x.row(i))).collect(),
    })
}

/// Five-number summary plus mean, quantiles by linear interpolation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub n: usize,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    pub mean: f64,
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Option<Quantiles> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Quantiles {
            n: v.len(),
            min: v[0],
            q25: q(0.25),
            median: q(0.5),
            q75: q(0.75),
            max: v[v.len() - 1],
            mean: v.iter().sum::<f64>() / v.len() as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureShapStats {
    pub feature: String,
    pub mean_abs: f64,
    pub mean: f64,
    /// Distribution of attributions among rows where the feature is 0 / 1.
    pub when_absent: Option<Quantiles>,
    pub when_present: Option<Quantiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapSummary {
    /// Features ordered by descending global mean |phi|.
    pub ranking: Vec<String>,
    pub global: Vec<FeatureShapStats>,
    pub groups: BTreeMap<String, Vec<FeatureShapStats>>,
}

impl ShapSummary {
    pub fn top(&self, k: usize) -> &[String] {
        &self.ranking[..k.min(self.ranking.len())]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,feature,mean_abs,mean,median_absent,median_present\n");
        let fmt = |q: &Option<Quantiles>| q.map_or_else(|| "NA".to_string(), |q| q.median.to_string());
        let groups = std::iter::once(("all", &self.global))
            .chain(self.groups.iter().map(|(k, v)| (k.as_str(), v)));
        for (g, stats) in groups {
            for s in stats {
                let _ = writeln!(
                    out,
                    "{g},{},{},{},{},{}",
                    s.feature,
                    s.mean_abs,
                    s.mean,
                    fmt(&s.when_absent),
                    fmt(&s.when_present)
                );
            }
        }
        out
    }
}

fn feature_stats(att: &Attributions, x: &AttributeTable, rows: &[usize]) -> Vec<FeatureShapStats> {
    (0..att.n_features())
        .map(|j| {
            let vals: Vec<f64> = rows.iter().map(|&i| att.row(i)[j]).collect();
            let n = vals.len().max(1) as f64;
            let split = |v: u8| -> Vec<f64> {
                rows.iter().filter(|&&i| x.get(i, j) == v).map(|&i| att.row(i)[j]).collect()
            };
            FeatureShapStats {
                feature: att.feature_names[j].clone(),
                mean_abs: vals.iter().map(|v| v.abs()).sum::<f64>() / n,
                mean: vals.iter().sum::<f64>() / n,
                when_absent: Quantiles::of(&split(0)),
                when_present: Quantiles::of(&split(1)),
            }
        })
        .collect()
}

/// Global and per-group attribution statistics. `groups[i]` labels row i.
pub fn shap_summary_by_group(
    att: &Attributions,
    x: &AttributeTable,
    groups: &[String],
) -> Result<ShapSummary, BoostError> {
    if groups.len() != att.n_rows() || x.n_rows() != att.n_rows() {
        return Err(BoostError::Length(format!(
            "{} attribution rows, {} table rows, {} group labels",
            att.n_rows(),
            x.n_rows(),
            groups.len()
        )));
    }
    let all: Vec<usize> = (0..att.n_rows()).collect();
    let global = feature_stats(att, x, &all);
    let mut order: Vec<usize> = (0..global.len()).collect();
    order.sort_by(|&a, &b| global[b].mean_abs.total_cmp(&global[a].mean_abs).then(a.cmp(&b)));
    let mut members: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        members.entry(g.clone()).or_default().push(i);
    }
    Ok(ShapSummary {
        ranking: order.iter().map(|&j| global[j].feature.clone()).collect(),
        groups: members
            .into_iter()
            .map(|(g, rows)| (g, feature_stats(att, x, &rows)))
            .collect(),
        global,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{BoostParams, Node, MODEL_FORMAT_VERSION};
    use super::*;

    fn model(trees: Vec<Tree>, m: usize) -> BoostModel {
        BoostModel {
            format_version: MODEL_FORMAT_VERSION,
            feature_names: (0..m).map(|j| format!("f{j}")).collect(),
            base_score: -0.3,
            trees,
            params: BoostParams::default(),
            history: Vec::new(),
        }
    }

    #[test]
    fn single_stump_by_hand() {
        // f0 split, left cover 1 value -1, right cover 3 value 2: E = 1.25
        let t = Tree {
            nodes: vec![Node::split(0, 1, 2, 4.0, 0.0), Node::leaf(-1.0, 1.0), Node::leaf(2.0, 3.0)],
        };
        let m = model(vec![t], 2);
        let a = tree_shap_single(&m, &[1, 0]).unwrap();
        assert!((a.base - (-0.3 + 1.25)).abs() < 1e-12);
        assert!((a.phi[0] - 0.75).abs() < 1e-12);
        assert_eq!(a.phi[1], 0.0);
        let a = tree_shap_single(&m, &[0, 1]).unwrap();
        assert!((a.phi[0] + 2.25).abs() < 1e-12);
    }

    #[test]
    fn repeated_feature_on_path() {
        // f0, then f1, then f0 again below
        let t = Tree {
            nodes: vec![
                Node::split(0, 1, 4, 10.0, 0.0),
                Node::split(1, 2, 3, 4.0, 0.0),
                Node::leaf(1.0, 1.0),
                Node::split(0, 5, 6, 3.0, 0.0),
                Node::leaf(-2.0, 6.0),
                Node::leaf(0.5, 2.0),
                Node::leaf(3.0, 1.0),
            ],
        };
        let m = model(vec![t], 2);
        for row in [[0u8, 0], [0, 1], [1, 0], [1, 1]] {
            let a = tree_shap_single(&m, &row).unwrap();
            assert!((a.reconstructed_margin() - m.margin_row(&row)).abs() < 1e-12);
        }
    }

    #[test]
    fn quantiles_interpolate() {
        let q = Quantiles::of(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((q.min, q.max), (1.0, 4.0));
        assert!((q.median - 2.5).abs() < 1e-15);
        assert!((q.q25 - 1.75).abs() < 1e-15);
        assert!(Quantiles::of(&[]).is_none());
    }
}
