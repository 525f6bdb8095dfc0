use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize, Serializer};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{fit_logit, DesignMatrix, InferenceError, LogitFit};
use crate::linalg::{gram_residual, spd_inverse, weighted_gram};

/// Relative residual below which a predictor counts as an exact linear
/// combination of the others.
const DEPENDENCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(from = "Option<f64>")]
pub enum Vif {
    Finite(f64),
    /// The predictor is (numerically) an exact linear combination of others.
    Infinite,
}

impl Vif {
    pub fn value(self) -> f64 {
        match self {
            Vif::Finite(v) => v,
            Vif::Infinite => f64::INFINITY,
        }
    }
}

impl From<Option<f64>> for Vif {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Vif::Infinite, Vif::Finite)
    }
}

// JSON has no infinity; the marker serializes as null.
impl Serialize for Vif {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Vif::Finite(v) => s.serialize_some(v),
            Vif::Infinite => s.serialize_none(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VifEntry {
    pub predictor: String,
    pub vif: Vif,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollinearityReport {
    pub vif: Vec<VifEntry>,
    /// `b' V^-1 b` over all non-intercept coefficients.
    pub wald_statistic: f64,
    pub wald_df: usize,
    pub wald_p_value: f64,
}

impl CollinearityReport {
    pub fn vif_of(&self, predictor: &str) -> Option<Vif> {
        self.vif.iter().find(|e| e.predictor == predictor).map(|e| e.vif)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("predictor,vif\n");
        for e in &self.vif {
            match e.vif {
                Vif::Finite(v) => {
                    let _ = writeln!(out, "{},{v}", e.predictor);
                }
                Vif::Infinite => {
                    let _ = writeln!(out, "{},inf", e.predictor);
                }
            }
        }
        out
    }
}

/// Variance inflation factor of every non-intercept column,
/// `1 / (1 - R²_j)` with `R²_j` from least squares of column j on all other
/// columns (intercept included).
pub fn vif_values(design: &DesignMatrix) -> Result<Vec<VifEntry>, InferenceError> {
    if !design.has_intercept() {
        return Err(InferenceError::Schema("VIF requires an intercept column".into()));
    }
    let (n, p) = (design.n(), design.p());
    if p < 3 {
        return Err(InferenceError::Schema(
            "VIF needs at least two non-intercept predictors".into(),
        ));
    }
    let gram = weighted_gram(design.x(), n, p, None);
    let nf = n as f64;
    Ok((1..p)
        .map(|j| {
            let sum = gram[(0, j)];
            let tss = gram[(j, j)] - sum * sum / nf;
            let rss = gram_residual(&gram, j, 1e-12);
            let vif = if tss <= DEPENDENCE_TOL * gram[(j, j)] || rss <= DEPENDENCE_TOL * tss {
                Vif::Infinite
            } else {
                Vif::Finite(tss / rss)
            };
            VifEntry {
                predictor: design.names()[j].clone(),
                vif,
            }
        })
        .collect())
}

/// VIFs of `design` plus the joint Wald test of all non-intercept terms of
/// `fit` (which must have been fitted on `design`).
pub fn vif(design: &DesignMatrix, fit: &LogitFit) -> Result<CollinearityReport, InferenceError> {
    if fit.names != design.names() {
        return Err(InferenceError::Schema("fit does not belong to this design".into()));
    }
    let entries = vif_values(design)?;
    let p = fit.p();
    let q = p - 1;
    let sub = DMatrix::from_fn(q, q, |a, b| fit.cov(a + 1, b + 1));
    let b = DVector::from_iterator(q, fit.coef[1..].iter().copied());
    let inv = spd_inverse(&sub).ok_or_else(|| {
        InferenceError::RankDeficient("coefficient covariance is singular".into())
    })?;
    let stat = b.dot(&(inv * &b));
    let p_value = ChiSquared::new(q as f64).map_or(f64::NAN, |d| d.sf(stat));
    Ok(CollinearityReport {
        vif: entries,
        wald_statistic: stat,
        wald_df: q,
        wald_p_value: p_value,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub predictor: String,
    pub full_coef: f64,
    pub reduced_coef: f64,
    pub full_p: f64,
    pub reduced_p: f64,
    pub sign_agrees: bool,
    pub significance_agrees: bool,
}

/// Retained-coefficient agreement between a full and a reduced fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitComparison {
    pub dropped: Vec<String>,
    pub alpha: f64,
    pub rows: Vec<ComparisonRow>,
    pub all_signs_agree: bool,
    pub all_significance_agrees: bool,
}

/// Refits without the named predictors and compares retained coefficients
/// (sign, and significance at the 5% level) against the full fit.
pub fn refit_excluding<S: AsRef<str>>(
    design: &DesignMatrix,
    drop: &[S],
) -> Result<(LogitFit, FitComparison), InferenceError> {
    let full = fit_logit(design)?;
    let reduced_design = design.drop_columns(drop)?;
    let reduced = fit_logit(&reduced_design)?;
    Ok((reduced.clone(), compare(&full, &reduced, drop)))
}

fn compare<S: AsRef<str>>(full: &LogitFit, reduced: &LogitFit, drop: &[S]) -> FitComparison {
    let alpha = 0.05;
    let rows: Vec<ComparisonRow> = reduced
        .names
        .iter()
        .enumerate()
        .filter_map(|(r, name)| {
            let f = full.index_of(name)?;
            Some(ComparisonRow {
                predictor: name.clone(),
                full_coef: full.coef[f],
                reduced_coef: reduced.coef[r],
                full_p: full.p_value[f],
                reduced_p: reduced.p_value[r],
                sign_agrees: full.coef[f].signum() == reduced.coef[r].signum(),
                significance_agrees: (full.p_value[f] < alpha) == (reduced.p_value[r] < alpha),
            })
        })
        .collect();
    FitComparison {
        dropped: drop.iter().map(|s| s.as_ref().to_owned()).collect(),
        alpha,
        all_signs_agree: rows.iter().all(|r| r.sign_agrees),
        all_significance_agrees: rows.iter().all(|r| r.significance_agrees),
        rows,
    }
}
