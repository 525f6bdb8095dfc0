//! Binary classification and ranking metrics.
//!
//! Conventions:
//! - ROC-AUC is the normalized Mann-Whitney U statistic; a tied
//!   positive/negative pair counts one half.
//! - Average precision is the area under the stepwise precision-recall
//!   curve, with one curve point per distinct score (rows with tied scores
//!   enter the ranking together). Without ties this is the usual
//!   `sum_k P@k * 1[y_k = 1] / n_pos` over the descending ranking.
//! - A metric that is undefined for the input (a single class present) is
//!   reported as `None`, never as zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const AP_TIE_CONVENTION: &str = "tied scores form a single precision-recall point";

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no rows")]
    Empty,
    #[error("score at row {0} is not finite")]
    NonFinite(usize),
    #[error("label at row {0} is not 0/1")]
    BadLabel(usize),
    #[error("length mismatch: {0} scores, {1} labels")]
    Length(usize, usize),
}

/// Parallel score / label columns; row index is the stable identity.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedPredictions {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl RankedPredictions {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self, MetricError> {
        if scores.len() != labels.len() {
            return Err(MetricError::Length(scores.len(), labels.len()));
        }
        if scores.is_empty() {
            return Err(MetricError::Empty);
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(MetricError::NonFinite(i));
        }
        if let Some(i) = labels.iter().position(|&l| l > 1) {
            return Err(MetricError::BadLabel(i));
        }
        Ok(RankedPredictions { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// Row indices by descending score, ties by ascending index.
    fn descending(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        idx
    }
}

/// Area under the ROC curve; `None` unless both classes are present.
pub fn roc_auc(ranked: &RankedPredictions) -> Option<f64> {
    let n_pos = ranked.positives();
    let n_neg = ranked.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let order = ranked.descending();
    // Walk tie groups from the top: each positive beats every negative below
    // its group and ties half of the negatives inside it. Counts are kept
    // doubled so the sum stays an exact integer.
    let mut doubled_u: u128 = 0;
    let mut negatives_seen = 0usize;
    let mut start = 0;
    while start < order.len() {
        let s = ranked.scores[order[start]];
        let mut end = start;
        let (mut gp, mut gn) = (0usize, 0usize);
        while end < order.len() && ranked.scores[order[end]] == s {
            if ranked.labels[order[end]] == 1 {
                gp += 1;
            } else {
                gn += 1;
            }
            end += 1;
        }
        negatives_seen += gn;
        let below = n_neg - negatives_seen;
        doubled_u += gp as u128 * (2 * below + gn) as u128;
        start = end;
    }
    Some(doubled_u as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Average precision; `None` when there are no positives.
pub fn average_precision(ranked: &RankedPredictions) -> Option<f64> {
    let n_pos = ranked.positives();
    if n_pos == 0 {
        return None;
    }
    let order = ranked.descending();
    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut start = 0;
    while start < order.len() {
        let s = ranked.scores[order[start]];
        let prev_tp = tp;
        while seen < order.len() && ranked.scores[order[seen]] == s {
            tp += usize::from(ranked.labels[order[seen]] == 1);
            seen += 1;
        }
        if tp > prev_tp {
            let recall_step = (tp - prev_tp) as f64 / n_pos as f64;
            let precision = tp as f64 / seen as f64;
            ap += recall_step * precision;
        }
        start = seen;
    }
    Some(ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    /// Set when any of the three rates had a zero denominator (reported as 0).
    pub zero_division: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageStats {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Per-class precision / recall / F1 plus accuracy and macro / weighted
/// averages, for binary labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub negative: ClassStats,
    pub positive: ClassStats,
    pub accuracy: f64,
    pub macro_avg: AverageStats,
    pub weighted_avg: AverageStats,
}

pub fn class_report(predicted: &[u8], truth: &[u8]) -> Result<ClassReport, MetricError> {
    if predicted.len() != truth.len() {
        return Err(MetricError::Length(predicted.len(), truth.len()));
    }
    if truth.is_empty() {
        return Err(MetricError::Empty);
    }
    if let Some(i) = predicted.iter().chain(truth).position(|&v| v > 1) {
        return Err(MetricError::BadLabel(i % truth.len()));
    }
    let mut cm = [[0usize; 2]; 2]; // [truth][pred]
    for (&p, &t) in predicted.iter().zip(truth) {
        cm[usize::from(t)][usize::from(p)] += 1;
    }
    let n = truth.len();
    let stats = |c: usize| {
        let tp = cm[c][c];
        let predicted_c = cm[0][c] + cm[1][c];
        let support = cm[c][0] + cm[c][1];
        let mut zero_division = false;
        let mut ratio = |num: f64, den: f64| {
            if den == 0.0 {
                zero_division = true;
                0.0
            } else {
                num / den
            }
        };
        let precision = ratio(tp as f64, predicted_c as f64);
        let recall = ratio(tp as f64, support as f64);
        let f1 = ratio(2.0 * precision * recall, precision + recall);
        ClassStats {
            precision,
            recall,
            f1,
            support,
            zero_division,
        }
    };
    let (neg, pos) = (stats(0), stats(1));
    let macro_avg = AverageStats {
        precision: (neg.precision + pos.precision) / 2.0,
        recall: (neg.recall + pos.recall) / 2.0,
        f1: (neg.f1 + pos.f1) / 2.0,
        support: n,
    };
    let w = |a: f64, b: f64| (a * neg.support as f64 + b * pos.support as f64) / n as f64;
    let weighted_avg = AverageStats {
        precision: w(neg.precision, pos.precision),
        recall: w(neg.recall, pos.recall),
        f1: w(neg.f1, pos.f1),
        support: n,
    };
    Ok(ClassReport {
        negative: neg,
        positive: pos,
        accuracy: (cm[0][0] + cm[1][1]) as f64 / n as f64,
        macro_avg,
        weighted_avg,
    })
}

/// Fraction of rows whose thresholded score (`>= threshold`) equals the label.
pub fn accuracy_at(scores: &[f64], labels: &[u8], threshold: f64) -> f64 {
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| u8::from(s >= threshold) == l)
        .count();
    correct as f64 / scores.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rp(s: &[f64], l: &[u8]) -> RankedPredictions {
        RankedPredictions::new(s.to_vec(), l.to_vec()).unwrap()
    }

    #[test]
    fn perfect_ranking() {
        let r = rp(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]);
        assert_eq!(roc_auc(&r), Some(1.0));
        assert_eq!(average_precision(&r), Some(1.0));
    }

    #[test]
    fn single_positive_last() {
        let r = rp(&[0.9, 0.8, 0.7, 0.1], &[0, 0, 0, 1]);
        assert_eq!(average_precision(&r), Some(0.25));
        assert_eq!(roc_auc(&r), Some(0.0));
    }

    #[test]
    fn constant_scores_give_prevalence() {
        let r = rp(&[0.3; 5], &[1, 0, 0, 1, 0]);
        assert_eq!(average_precision(&r), Some(0.4));
        assert_eq!(roc_auc(&r), Some(0.5));
    }

    #[test]
    fn undefined_markers() {
        let r = rp(&[0.1, 0.2], &[0, 0]);
        assert_eq!(average_precision(&r), None);
        assert_eq!(roc_auc(&r), None);
        assert_eq!(roc_auc(&rp(&[0.1], &[1])), None);
    }

    #[test]
    fn invalid_inputs() {
        assert_eq!(RankedPredictions::new(vec![], vec![]), Err(MetricError::Empty));
        assert_eq!(
            RankedPredictions::new(vec![f64::NAN], vec![1]),
            Err(MetricError::NonFinite(0))
        );
        assert_eq!(RankedPredictions::new(vec![0.1], vec![2]), Err(MetricError::BadLabel(0)));
    }

    #[test]
    fn report_perfect_and_all_positive() {
        let r = class_report(&[1, 0, 1, 0], &[1, 0, 1, 0]).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.positive.precision, 1.0);
        assert_eq!(r.negative.f1, 1.0);
        let r = class_report(&[1, 1, 1, 1], &[1, 0, 1, 0]).unwrap();
        assert_eq!(r.positive.recall, 1.0);
        assert_eq!(r.positive.precision, 0.5);
        assert_eq!(r.negative.precision, 0.0);
        assert!(r.negative.zero_division);
        assert_eq!(r.negative.support + r.positive.support, 4);
    }

    #[test]
    fn accuracy_threshold() {
        assert_eq!(accuracy_at(&[0.2, 0.5, 0.7], &[0, 1, 0], 0.5), 2.0 / 3.0);
    }
}
