//! Cluster-by-sex label statistics and the interaction logistic model
//!
//! `logit P(y = 1) = b0 + b_cluster + b_sex + b_cluster:sex`
//!
//! with Wald inference, McFadden pseudo-R², likelihood-ratio test, variance
//! inflation factors and exclusion refits.

mod collinearity;
mod logit;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::AssignmentResult;

pub use collinearity::{
    refit_excluding, vif, vif_values, CollinearityReport, ComparisonRow, FitComparison, Vif, VifEntry,
};
pub use logit::{fit_logit, fit_logit_with, FitOptions, LogitFit, LL_RELATIVE_SLACK};

/// Two-sided 95% normal quantile used for every Wald interval.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("perfect separation: coefficient of {predictor} diverged ({value:.3})")]
    Separation { predictor: String, value: f64 },
    #[error("rank deficiency: {0}")]
    RankDeficient(String),
}

impl InferenceError {
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            InferenceError::Separation { .. } | InferenceError::RankDeficient(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
}

impl Sex {
    /// CelebA `Male` column: 0 = female, 1 = male.
    pub fn from_indicator(v: u8) -> Sex {
        if v == 1 {
            Sex::Male
        } else {
            Sex::Female
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Sex::Female => "Female",
            Sex::Male => "Male",
        }
    }
}

/// One cluster x sex cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub cluster: usize,
    pub sex: Sex,
    pub n: usize,
    pub positives: usize,
    /// `None` for an empty cell.
    pub proportion: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStatTable {
    pub rows: Vec<GroupStat>,
}

impl GroupStatTable {
    pub fn get(&self, cluster: usize, sex: Sex) -> Option<&GroupStat> {
        self.rows.iter().find(|r| r.cluster == cluster && r.sex == sex)
    }

    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        let mut out = String::from("cluster,sex,n,positives,proportion,ci_low,ci_high\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.cluster,
                r.sex.label().to_lowercase(),
                r.n,
                r.positives,
                fmt(r.proportion),
                fmt(r.ci_low),
                fmt(r.ci_high)
            );
        }
        out
    }
}

/// Proportion of positive labels per cluster x sex cell with a normal
/// approximation 95% interval `p ± 1.96 sqrt(p (1 - p) / n)` clipped to [0, 1].
/// Empty cells are kept with `n = 0` and undefined proportion.
pub fn group_proportions(
    assignments: &AssignmentResult,
    sex: &[u8],
    label: &[u8],
) -> Result<GroupStatTable, InferenceError> {
    let n = assignments.len();
    if sex.len() != n || label.len() != n {
        return Err(InferenceError::Length(format!(
            "{n} assignments, {} sex values, {} labels",
            sex.len(),
            label.len()
        )));
    }
    let k = assignments.k;
    let mut counts = vec![[0usize; 2]; k * 2];
    for i in 0..n {
        let cell = (assignments.cluster[i] - 1) * 2 + usize::from(sex[i] == 1);
        counts[cell][0] += 1;
        counts[cell][1] += usize::from(label[i] == 1);
    }
    let rows = counts
        .iter()
        .enumerate()
        .map(|(cell, &[total, pos])| {
            let (proportion, ci_low, ci_high) = if total == 0 {
                (None, None, None)
            } else {
                let p = pos as f64 / total as f64;
                let half = Z_95 * (p * (1.0 - p) / total as f64).sqrt();
                (Some(p), Some((p - half).max(0.0)), Some((p + half).min(1.0)))
            };
            GroupStat {
                cluster: cell / 2 + 1,
                sex: if cell % 2 == 1 { Sex::Male } else { Sex::Female },
                n: total,
                positives: pos,
                proportion,
                ci_low,
                ci_high,
            }
        })
        .collect();
    Ok(GroupStatTable { rows })
}

/// Row-major regression design with a binary response.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    names: Vec<String>,
    n: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

pub const INTERCEPT: &str = "Intercept";

impl DesignMatrix {
    pub fn new(names: Vec<String>, x: Vec<f64>, y: Vec<f64>) -> Result<DesignMatrix, InferenceError> {
        let p = names.len();
        let n = y.len();
        if p == 0 || x.len() != n * p {
            return Err(InferenceError::Length(format!(
                "{} cells for {n} rows x {p} columns",
                x.len()
            )));
        }
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(InferenceError::Schema("response must be 0/1".into()));
        }
        Ok(DesignMatrix { names, n, x, y })
    }

    /// Prepends an intercept column to the given predictor columns.
    pub fn with_intercept(
        names: Vec<String>,
        columns: &[Vec<f64>],
        y: Vec<f64>,
    ) -> Result<DesignMatrix, InferenceError> {
        let n = y.len();
        if names.len() != columns.len() || columns.iter().any(|c| c.len() != n) {
            return Err(InferenceError::Length("predictor columns misaligned".into()));
        }
        let p = columns.len() + 1;
        let mut x = Vec::with_capacity(n * p);
        for i in 0..n {
            x.push(1.0);
            x.extend(columns.iter().map(|c| c[i]));
        }
        let mut all = vec![INTERCEPT.to_string()];
        all.extend(names);
        DesignMatrix::new(all, x, y)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.names.len()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.x[i * p..(i + 1) * p]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.x[i * self.p() + j]).collect()
    }

    pub fn has_intercept(&self) -> bool {
        self.names.first().map(String::as_str) == Some(INTERCEPT)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Copy without the named predictor columns.
    pub fn drop_columns<S: AsRef<str>>(&self, drop: &[S]) -> Result<DesignMatrix, InferenceError> {
        let mut keep = vec![true; self.p()];
        for name in drop {
            let name = name.as_ref();
            if name == INTERCEPT {
                return Err(InferenceError::Schema("the intercept cannot be dropped".into()));
            }
            let j = self
                .column_index(name)
                .ok_or_else(|| InferenceError::Schema(format!("unknown predictor {name:?}")))?;
            keep[j] = false;
        }
        let cols: Vec<usize> = (0..self.p()).filter(|&j| keep[j]).collect();
        let mut x = Vec::with_capacity(self.n * cols.len());
        for i in 0..self.n {
            let row = self.row(i);
            x.extend(cols.iter().map(|&j| row[j]));
        }
        DesignMatrix::new(
            cols.iter().map(|&j| self.names[j].clone()).collect(),
            x,
            self.y.clone(),
        )
    }
}

/// Reference levels for the cluster x sex design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignReference {
    pub cluster: usize,
    pub sex: Sex,
}

impl Default for DesignReference {
    fn default() -> Self {
        DesignReference {
            cluster: 1,
            sex: Sex::Female,
        }
    }
}

/// Builds the 2K-column interaction design: `Intercept`, one dummy per
/// non-reference cluster, the non-reference sex indicator, and one
/// `ClusterC:Sex` interaction per non-reference cluster.
pub fn build_design(
    assignments: &AssignmentResult,
    sex: &[u8],
    label: &[u8],
    reference: DesignReference,
) -> Result<DesignMatrix, InferenceError> {
    let n = assignments.len();
    let k = assignments.k;
    if sex.len() != n || label.len() != n {
        return Err(InferenceError::Length(format!(
            "{n} assignments, {} sex values, {} labels",
            sex.len(),
            label.len()
        )));
    }
    if reference.cluster == 0 || reference.cluster > k {
        return Err(InferenceError::Schema(format!(
            "reference cluster {} outside 1..={k}",
            reference.cluster
        )));
    }
    let others: Vec<usize> = (1..=k).filter(|&c| c != reference.cluster).collect();
    let indicator = match reference.sex {
        Sex::Female => Sex::Male,
        Sex::Male => Sex::Female,
    };
    let mut names = vec![INTERCEPT.to_string()];
    names.extend(others.iter().map(|c| format!("Cluster{c}")));
    names.push(indicator.label().to_string());
    names.extend(others.iter().map(|c| format!("Cluster{c}:{}", indicator.label())));
    let p = names.len();
    debug_assert_eq!(p, 2 * k);

    let mut x = vec![0.0; n * p];
    for i in 0..n {
        let row = &mut x[i * p..(i + 1) * p];
        row[0] = 1.0;
        let s = f64::from(u8::from(Sex::from_indicator(sex[i]) == indicator));
        row[k] = s;
        if let Some(pos) = others.iter().position(|&c| c == assignments.cluster[i]) {
            row[1 + pos] = 1.0;
            row[k + 1 + pos] = s;
        }
    }
    let y = label.iter().map(|&v| f64::from(v)).collect();
    DesignMatrix::new(names, x, y)
}
