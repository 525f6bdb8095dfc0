use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{predict_margin, train_gbdt, BoostError, BoostParams};
use crate::ingest::AttributeTable;
use crate::metrics::{roc_auc, RankedPredictions};

/// Axis values for a cartesian parameter grid. Fields not listed keep the
/// value from `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGrid {
    pub base: BoostParams,
    pub learning_rate: Vec<f64>,
    pub max_depth: Vec<usize>,
    pub n_rounds: Vec<usize>,
    pub min_child_weight: Vec<f64>,
    pub lambda_l2: Vec<f64>,
    pub subsample: Vec<f64>,
}

impl Default for ParamGrid {
    fn default() -> Self {
        ParamGrid {
            base: BoostParams::default(),
            learning_rate: vec![0.05, 0.1, 0.3],
            max_depth: vec![3, 4, 6],
            n_rounds: vec![100, 200],
            min_child_weight: vec![1.0, 5.0],
            lambda_l2: vec![1.0],
            subsample: vec![0.8, 1.0],
        }
    }
}

impl ParamGrid {
    pub fn expand(&self) -> Vec<BoostParams> {
        let mut out = Vec::new();
        for &learning_rate in &self.learning_rate {
            for &max_depth in &self.max_depth {
                for &n_rounds in &self.n_rounds {
                    for &min_child_weight in &self.min_child_weight {
                        for &lambda_l2 in &self.lambda_l2 {
                            for &subsample in &self.subsample {
                                out.push(BoostParams {
                                    learning_rate,
                                    max_depth,
                                    n_rounds,
                                    min_child_weight,
                                    lambda_l2,
                                    subsample,
                                    ..self.base
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SearchSpace {
    Grid(ParamGrid),
    Candidates(Vec<BoostParams>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub params: BoostParams,
    /// `None` for folds whose held-out labels are single-class.
    pub fold_auc: Vec<Option<f64>>,
    pub mean_auc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub k_folds: usize,
    pub seed: u64,
    pub trials: Vec<Trial>,
    pub best: usize,
}

impl SearchReport {
    pub fn best_params(&self) -> BoostParams {
        self.trials[self.best].params
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "trial,learning_rate,max_depth,n_rounds,min_child_weight,lambda_l2,subsample,mean_auc,error\n",
        );
        for t in &self.trials {
            let p = &t.params;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                t.index,
                p.learning_rate,
                p.max_depth,
                p.n_rounds,
                p.min_child_weight,
                p.lambda_l2,
                p.subsample,
                t.mean_auc.map_or_else(|| "NA".into(), |a| a.to_string()),
                t.error.as_deref().unwrap_or("")
            );
        }
        out
    }
}

/// Seeded random search: candidates are visited in a seeded random order
/// (cycling if `n_trials` exceeds the space) and each is scored by mean
/// held-out ROC-AUC over `k_folds` folds. Ties keep the earliest trial.
pub fn hyper_search(
    x: &AttributeTable,
    y: &[u8],
    space: &SearchSpace,
    n_trials: usize,
    k_folds: usize,
    seed: u64,
) -> Result<(BoostParams, SearchReport), BoostError> {
    if n_trials == 0 {
        return Err(BoostError::InvalidParams("n_trials must be positive".into()));
    }
    if k_folds < 2 || k_folds > x.n_rows() {
        return Err(BoostError::InvalidParams(format!(
            "k_folds {k_folds} must be in [2, {}]",
            x.n_rows()
        )));
    }
    if y.len() != x.n_rows() {
        return Err(BoostError::Length(format!("{} rows, {} labels", x.n_rows(), y.len())));
    }
    let mut candidates = match space {
        SearchSpace::Grid(g) => g.expand(),
        SearchSpace::Candidates(c) => c.clone(),
    };
    if candidates.is_empty() {
        return Err(BoostError::InvalidParams("empty search space".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);
    let mut order: Vec<usize> = (0..x.n_rows()).collect();
    order.shuffle(&mut rng);
    let folds: Vec<Vec<usize>> = (0..k_folds)
        .map(|f| order.iter().copied().skip(f).step_by(k_folds).collect())
        .collect();

    let trials: Vec<Trial> = (0..n_trials)
        .map(|index| {
            let params = candidates[index % candidates.len()];
            match cross_validate(x, y, &params, &folds) {
                Ok(fold_auc) => {
                    let defined: Vec<f64> = fold_auc.iter().flatten().copied().collect();
                    let mean_auc = (!defined.is_empty())
                        .then(|| defined.iter().sum::<f64>() / defined.len() as f64);
                    Trial { index, params, fold_auc, mean_auc, error: None }
                }
                Err(e) => Trial {
                    index,
                    params,
                    fold_auc: Vec::new(),
                    mean_auc: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    let best = trials
        .iter()
        .filter_map(|t| t.mean_auc.map(|a| (t.index, a)))
        .fold(None, |acc: Option<(usize, f64)>, (i, a)| match acc {
            Some((_, b)) if a <= b => acc,
            _ => Some((i, a)),
        })
        .map(|(i, _)| i)
        .ok_or_else(|| BoostError::DegenerateLabel("no trial produced a defined AUC".into()))?;
    let report = SearchReport { k_folds, seed, trials, best };
    Ok((report.best_params(), report))
}

fn cross_validate(
    x: &AttributeTable,
    y: &[u8],
    params: &BoostParams,
    folds: &[Vec<usize>],
) -> Result<Vec<Option<f64>>, BoostError> {
    folds
        .iter()
        .enumerate()
        .map(|(f, held_out)| {
            let train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .flat_map(|(_, rows)| rows.iter().copied())
                .collect();
            let tx = x.select_rows(&train);
            let ty: Vec<u8> = train.iter().map(|&i| y[i]).collect();
            let model = train_gbdt(&tx, &ty, params, None)?;
            let vx = x.select_rows(held_out);
            let vy: Vec<u8> = held_out.iter().map(|&i| y[i]).collect();
            let margins = predict_margin(&model, &vx)?;
            Ok(RankedPredictions::new(margins, vy).ok().and_then(|r| roc_auc(&r)))
        })
        .collect()
}
