use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, BoostError, BoostModel, BoostParams, Node, Tree, MODEL_FORMAT_VERSION};
use crate::ingest::AttributeTable;

/// Smallest split gain worth taking; guards against float noise splits.
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub train_logloss: f64,
    pub valid_logloss: Option<f64>,
}

fn logloss(margins: &[f64], y: &[u8]) -> f64 {
    // log(1 + e^m) - y*m, computed stably
    let total: f64 = margins
        .iter()
        .zip(y)
        .map(|(&m, &t)| {
            let softplus = if m > 0.0 { m + (-m).exp().ln_1p() } else { m.exp().ln_1p() };
            softplus - f64::from(t) * m
        })
        .sum();
    total / margins.len() as f64
}

fn check_labels(x: &AttributeTable, y: &[u8], what: &str) -> Result<(), BoostError> {
    if x.n_rows() != y.len() {
        return Err(BoostError::Length(format!(
            "{what}: {} rows but {} labels",
            x.n_rows(),
            y.len()
        )));
    }
    if let Some(i) = y.iter().position(|&v| v > 1) {
        return Err(BoostError::DegenerateLabel(format!("{what}: label at row {i} is not 0/1")));
    }
    Ok(())
}

/// Fits a boosted ensemble of depth-limited trees on logistic loss.
///
/// With a validation set and `early_stopping_rounds`, training stops once
/// validation log-loss has not improved for that many rounds and the
/// ensemble is truncated to the best round.
pub fn train_gbdt(
    x: &AttributeTable,
    y: &[u8],
    params: &BoostParams,
    valid: Option<(&AttributeTable, &[u8])>,
) -> Result<BoostModel, BoostError> {
    params.validate()?;
    check_labels(x, y, "training set")?;
    if let Some((vx, vy)) = valid {
        check_labels(vx, vy, "validation set")?;
        if vx.attribute_names() != x.attribute_names() {
            return Err(BoostError::FeatureMismatch(
                "validation columns differ from training columns".into(),
            ));
        }
    }
    let n = x.n_rows();
    let positives = y.iter().filter(|&&v| v == 1).count();
    if positives == 0 || positives == n {
        return Err(BoostError::DegenerateLabel(format!(
            "training labels are constant ({positives} positives of {n})"
        )));
    }
    let rate = positives as f64 / n as f64;
    let base_score = (rate / (1.0 - rate)).ln();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut margins = vec![base_score; n];
    let mut valid_margins = valid.map(|(vx, _)| vec![base_score; vx.n_rows()]);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut all_rows: Vec<u32> = (0..n as u32).collect();
    let sample_size = ((n as f64 * params.subsample).ceil() as usize).clamp(1, n);

    let mut trees = Vec::with_capacity(params.n_rounds);
    let mut history = Vec::with_capacity(params.n_rounds);
    let mut best: Option<(usize, f64)> = None;

    for round in 0..params.n_rounds {
        for i in 0..n {
            let p = sigmoid(margins[i]);
            grad[i] = p - f64::from(y[i]);
            hess[i] = p * (1.0 - p);
        }
        let rows = if sample_size < n {
            all_rows.shuffle(&mut rng);
            let mut s = all_rows[..sample_size].to_vec();
            s.sort_unstable();
            s
        } else {
            all_rows.clone()
        };
        let tree = TreeBuilder { x, grad: &grad, hess: &hess, params }.build(rows);
        for (i, m) in margins.iter_mut().enumerate() {
            *m += tree.predict_row(x.row(i));
        }
        let valid_loss = match (valid, valid_margins.as_mut()) {
            (Some((vx, vy)), Some(vm)) => {
                for (i, m) in vm.iter_mut().enumerate() {
                    *m += tree.predict_row(vx.row(i));
                }
                Some(logloss(vm, vy))
            }
            _ => None,
        };
        trees.push(tree);
        history.push(RoundLog {
            round,
            train_logloss: logloss(&margins, y),
            valid_logloss: valid_loss,
        });
        if let (Some(loss), Some(patience)) = (valid_loss, params.early_stopping_rounds) {
            match best {
                Some((_, b)) if loss >= b => {}
                _ => best = Some((round, loss)),
            }
            if let Some((best_round, _)) = best {
                if round - best_round >= patience {
                    trees.truncate(best_round + 1);
                    break;
                }
            }
        }
    }

    Ok(BoostModel {
        format_version: MODEL_FORMAT_VERSION,
        feature_names: x.attribute_names().to_vec(),
        base_score,
        trees,
        params: *params,
        history,
    })
}

/// Gradient statistics of one node: totals plus per-feature sums over the
/// rows where the feature is 1.
struct Histogram {
    g: f64,
    h: f64,
    count: usize,
    g1: Vec<f64>,
    h1: Vec<f64>,
    count1: Vec<usize>,
}

struct TreeBuilder<'a> {
    x: &'a AttributeTable,
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a BoostParams,
}

struct Candidate {
    feature: usize,
    gain: f64,
}

impl TreeBuilder<'_> {
    fn build(&self, rows: Vec<u32>) -> Tree {
        let mut nodes = Vec::new();
        let hist = self.histogram(&rows);
        self.grow(&mut nodes, rows, hist, 0);
        Tree { nodes }
    }

    fn histogram(&self, rows: &[u32]) -> Histogram {
        let m = self.x.n_cols();
        let mut h = Histogram {
            g: 0.0,
            h: 0.0,
            count: rows.len(),
            g1: vec![0.0; m],
            h1: vec![0.0; m],
            count1: vec![0; m],
        };
        for &r in rows {
            let r = r as usize;
            let (g, hs) = (self.grad[r], self.hess[r]);
            h.g += g;
            h.h += hs;
            for (f, &v) in self.x.row(r).iter().enumerate() {
                if v == 1 {
                    h.g1[f] += g;
                    h.h1[f] += hs;
                    h.count1[f] += 1;
                }
            }
        }
        h
    }

    fn leaf_weight(&self, g: f64, h: f64) -> f64 {
        -g / (h + self.params.lambda_l2) * self.params.learning_rate
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.params.lambda_l2)
    }

    fn best_split(&self, hist: &Histogram) -> Option<Candidate> {
        let parent = self.score(hist.g, hist.h);
        let mut best: Option<Candidate> = None;
        for f in 0..hist.g1.len() {
            let (gr, hr, nr) = (hist.g1[f], hist.h1[f], hist.count1[f]);
            let (gl, hl, nl) = (hist.g - gr, hist.h - hr, hist.count - nr);
            if nl == 0 || nr == 0 || hl <= 0.0 || hr <= 0.0 {
                continue;
            }
            if hl < self.params.min_child_weight || hr < self.params.min_child_weight {
                continue;
            }
            let gain = 0.5 * (self.score(gl, hl) + self.score(gr, hr) - parent);
            if gain > MIN_GAIN && best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(Candidate { feature: f, gain });
            }
        }
        best
    }

    /// Appends the subtree for `rows` in preorder and returns its root index.
    fn grow(&self, nodes: &mut Vec<Node>, rows: Vec<u32>, hist: Histogram, depth: usize) -> usize {
        let id = nodes.len();
        let value = self.leaf_weight(hist.g, hist.h);
        nodes.push(Node::leaf(value, hist.h));
        if depth >= self.params.max_depth {
            return id;
        }
        let Some(split) = self.best_split(&hist) else {
            return id;
        };
        let f = split.feature;
        let (right, left): (Vec<u32>, Vec<u32>) =
            rows.into_iter().partition(|&r| self.x.get(r as usize, f) == 1);
        // Build the smaller child's histogram directly, derive the sibling.
        let (left_hist, right_hist) = if left.len() <= right.len() {
            let l = self.histogram(&left);
            let r = subtract(&hist, &l);
            (l, r)
        } else {
            let r = self.histogram(&right);
            let l = subtract(&hist, &r);
            (l, r)
        };
        let l = self.grow(nodes, left, left_hist, depth + 1);
        let r = self.grow(nodes, right, right_hist, depth + 1);
        nodes[id] = Node::split(f, l, r, nodes[l].cover + nodes[r].cover, value);
        id
    }
}

fn subtract(parent: &Histogram, child: &Histogram) -> Histogram {
    Histogram {
        g: parent.g - child.g,
        h: parent.h - child.h,
        count: parent.count - child.count,
        g1: parent.g1.iter().zip(&child.g1).map(|(a, b)| a - b).collect(),
        h1: parent.h1.iter().zip(&child.h1).map(|(a, b)| a - b).collect(),
        count1: parent.count1.iter().zip(&child.count1).map(|(a, b)| a - b).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Provenance;
    use crate::metrics::{roc_auc, RankedPredictions};

    fn xor_table() -> (AttributeTable, Vec<u8>) {
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut y = Vec::new();
        // unbalanced cells so the first greedy split has positive gain
        let cells = [(0, 0), (0, 0), (0, 1), (1, 0), (1, 0), (1, 0), (1, 1), (1, 1)];
        for i in 0..400usize {
            let (va, vb): (u8, u8) = cells[i % cells.len()];
            a.push(va);
            b.push(vb);
            y.push(va ^ vb);
        }
        let t = AttributeTable::from_columns(vec!["a".into(), "b".into()], &[a, b], Provenance::Synthetic).unwrap();
        (t, y)
    }

    #[test]
    fn learns_interaction_with_depth_two() {
        let (x, y) = xor_table();
        let p = BoostParams { max_depth: 2, n_rounds: 50, learning_rate: 0.3, ..Default::default() };
        let model = train_gbdt(&x, &y, &p, None).unwrap();
        model.validate().unwrap();
        let margins: Vec<f64> = (0..x.n_rows()).map(|i| model.margin_row(x.row(i))).collect();
        let auc = roc_auc(&RankedPredictions::new(margins, y.clone()).unwrap()).unwrap();
        assert_eq!(auc, 1.0);
        let losses: Vec<f64> = model.history.iter().map(|r| r.train_logloss).collect();
        assert!(losses.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn base_score_is_log_odds() {
        let (x, _) = xor_table();
        let y: Vec<u8> = (0..x.n_rows()).map(|i| u8::from(i % 4 == 0)).collect();
        let model = train_gbdt(&x, &y, &BoostParams { n_rounds: 1, ..Default::default() }, None).unwrap();
        assert!((model.base_score - (0.25f64 / 0.75).ln()).abs() < 1e-12);
    }

    #[test]
    fn constant_labels_rejected() {
        let (x, _) = xor_table();
        let y = vec![1u8; x.n_rows()];
        assert!(matches!(
            train_gbdt(&x, &y, &BoostParams::default(), None),
            Err(BoostError::DegenerateLabel(_))
        ));
    }

    #[test]
    fn seeded_subsampling_is_deterministic() {
        let (x, y) = xor_table();
        let p = BoostParams { subsample: 0.5, n_rounds: 10, seed: 9, ..Default::default() };
        let a = train_gbdt(&x, &y, &p, None).unwrap();
        let b = train_gbdt(&x, &y, &p, None).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn depth_limit_respected() {
        let (x, y) = xor_table();
        let p = BoostParams { max_depth: 1, n_rounds: 5, ..Default::default() };
        let model = train_gbdt(&x, &y, &p, None).unwrap();
        assert!(model.trees.iter().all(|t| t.max_depth() <= 1));
    }

    #[test]
    fn early_stopping_truncates() {
        let (x, y) = xor_table();
        // validation labels are the complement, so validation loss rises
        let vy: Vec<u8> = y.iter().map(|v| 1 - v).collect();
        let p = BoostParams { n_rounds: 100, early_stopping_rounds: Some(3), max_depth: 2, ..Default::default() };
        let model = train_gbdt(&x, &y, &p, Some((&x, &vy))).unwrap();
        assert!(model.trees.len() < 100);
        assert!(model.history.len() <= model.trees.len() + 3);
    }
}
