use std::fmt::Write as _;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc;

use super::{DesignMatrix, InferenceError, Z_95};
use crate::linalg::{gram_residual, spd_inverse, weighted_gram, xt_vec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Converged once every score component is below this in magnitude.
    pub score_tol: f64,
    pub max_iter: usize,
    /// Any |coefficient| above this is reported as separation.
    pub divergence_bound: f64,
    pub max_halvings: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            score_tol: 1e-8,
            max_iter: 100,
            divergence_bound: 30.0,
            max_halvings: 40,
        }
    }
}

/// Relative log-likelihood drop tolerated as rounding noise when accepting a
/// Newton step.
pub const LL_RELATIVE_SLACK: f64 = 1e-12;

/// Maximum-likelihood logistic fit with Wald inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitFit {
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    pub std_err: Vec<f64>,
    pub z: Vec<f64>,
    pub p_value: Vec<f64>,
    pub odds_ratio: Vec<f64>,
    pub or_ci_low: Vec<f64>,
    pub or_ci_high: Vec<f64>,
    /// Row-major P x P inverse observed information.
    pub covariance: Vec<f64>,
    pub n: usize,
    pub log_likelihood: f64,
    pub null_log_likelihood: f64,
    pub pseudo_r2: f64,
    pub llr: f64,
    pub llr_df: usize,
    pub llr_p_value: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Log-likelihood at the start and after every accepted step;
    /// non-decreasing up to [`LL_RELATIVE_SLACK`].
    pub ll_trace: Vec<f64>,
    /// Score vector `X'(y - mu)` at the returned coefficients.
    pub score: Vec<f64>,
}

impl LogitFit {
    pub fn p(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn coef_of(&self, name: &str) -> Option<f64> {
        self.index_of(name).map(|j| self.coef[j])
    }

    pub fn cov(&self, a: usize, b: usize) -> f64 {
        self.covariance[a * self.p() + b]
    }

    /// Table-style CSV: `predictor,coef,se,z,p,odds_ratio,or_ci_low,or_ci_high`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("predictor,coef,se,z,p,odds_ratio,or_ci_low,or_ci_high\n");
        for j in 0..self.p() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                self.names[j],
                self.coef[j],
                self.std_err[j],
                self.z[j],
                self.p_value[j],
                self.odds_ratio[j],
                self.or_ci_low[j],
                self.or_ci_high[j]
            );
        }
        out
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn linear_predictor(design: &DesignMatrix, beta: &[f64]) -> Vec<f64> {
    (0..design.n())
        .map(|i| design.row(i).iter().zip(beta).map(|(x, b)| x * b).sum())
        .collect()
}

fn log_likelihood(design: &DesignMatrix, eta: &[f64]) -> f64 {
    design
        .y()
        .iter()
        .zip(eta)
        .map(|(&y, &e)| y * e - softplus(e))
        .sum()
}

pub fn fit_logit(design: &DesignMatrix) -> Result<LogitFit, InferenceError> {
    fit_logit_with(design, FitOptions::default())
}

/// Newton-Raphson (equivalently IRLS) from a zero start, with step halving
/// whenever a full step lowers the log-likelihood.
pub fn fit_logit_with(design: &DesignMatrix, opts: FitOptions) -> Result<LogitFit, InferenceError> {
    let (n, p) = (design.n(), design.p());
    if n <= p {
        return Err(InferenceError::RankDeficient(format!(
            "{n} observations for {p} predictors"
        )));
    }
    for j in 0..p {
        if (0..n).all(|i| design.row(i)[j] == 0.0) {
            return Err(InferenceError::RankDeficient(format!(
                "predictor {} is identically zero",
                design.names()[j]
            )));
        }
    }

    let gram = weighted_gram(design.x(), n, p, None);
    for j in 0..p {
        if gram_residual(&gram, j, 1e-12) <= 1e-10 * gram[(j, j)] {
            return Err(InferenceError::RankDeficient(format!(
                "predictor {} is a linear combination of the others",
                design.names()[j]
            )));
        }
    }

    let mut beta = vec![0.0; p];
    let mut eta = linear_predictor(design, &beta);
    let mut ll = log_likelihood(design, &eta);
    let mut ll_trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let mut score;
    loop {
        let mu: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let resid: Vec<f64> = design.y().iter().zip(&mu).map(|(y, m)| y - m).collect();
        score = xt_vec(design.x(), n, p, &resid);
        if score.amax() < opts.score_tol {
            converged = true;
            break;
        }
        if iterations == opts.max_iter {
            break;
        }
        let w: Vec<f64> = mu.iter().map(|m| m * (1.0 - m)).collect();
        let info = weighted_gram(design.x(), n, p, Some(&w));
        let chol = info.cholesky().ok_or_else(|| {
            InferenceError::RankDeficient("information matrix is not positive definite".into())
        })?;
        let step: DVector<f64> = chol.solve(&score);

        // Near the optimum the true gain of a Newton step is below the
        // rounding noise of an N-term log-likelihood sum; drops within that
        // noise do not trigger halving.
        let slack = LL_RELATIVE_SLACK * (1.0 + ll.abs());
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let trial_eta = linear_predictor(design, &trial);
            let trial_ll = log_likelihood(design, &trial_eta);
            if trial_ll.is_finite() && trial_ll >= ll - slack {
                accepted = Some((trial, trial_eta, trial_ll));
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        let Some((b, e, l)) = accepted else {
            // no ascent along the Newton direction
            break;
        };
        beta = b;
        eta = e;
        ll = l;
        ll_trace.push(ll);
        if let Some(j) = (0..p).find(|&j| beta[j].abs() > opts.divergence_bound) {
            return Err(InferenceError::Separation {
                predictor: design.names()[j].clone(),
                value: beta[j],
            });
        }
    }

    let mu: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
    let w: Vec<f64> = mu.iter().map(|m| m * (1.0 - m)).collect();
    let info = weighted_gram(design.x(), n, p, Some(&w));
    let cov = spd_inverse(&info).ok_or_else(|| {
        InferenceError::RankDeficient("information matrix is singular at the optimum".into())
    })?;

    let std_err: Vec<f64> = (0..p).map(|j| cov[(j, j)].sqrt()).collect();
    let z: Vec<f64> = beta.iter().zip(&std_err).map(|(b, s)| b / s).collect();
    let p_value = z
        .iter()
        .map(|z| erfc(z.abs() / std::f64::consts::SQRT_2))
        .collect();

    let n1: f64 = design.y().iter().sum();
    let ybar = n1 / n as f64;
    let null_ll = if ybar > 0.0 && ybar < 1.0 {
        n1 * ybar.ln() + (n as f64 - n1) * (1.0 - ybar).ln()
    } else {
        0.0
    };
    let llr = (2.0 * (ll - null_ll)).max(0.0);
    let llr_df = p.saturating_sub(1);
    let llr_p_value = if llr_df == 0 {
        1.0
    } else {
        ChiSquared::new(llr_df as f64).map_or(f64::NAN, |d| d.sf(llr))
    };

    Ok(LogitFit {
        names: design.names().to_vec(),
        odds_ratio: beta.iter().map(|b| b.exp()).collect(),
        or_ci_low: beta.iter().zip(&std_err).map(|(b, s)| (b - Z_95 * s).exp()).collect(),
        or_ci_high: beta.iter().zip(&std_err).map(|(b, s)| (b + Z_95 * s).exp()).collect(),
        coef: beta,
        std_err,
        z,
        p_value,
        covariance: (0..p * p).map(|k| cov[(k / p, k % p)]).collect(),
        n,
        log_likelihood: ll,
        null_log_likelihood: null_ll,
        pseudo_r2: if null_ll != 0.0 { 1.0 - ll / null_ll } else { 0.0 },
        llr,
        llr_df,
        llr_p_value,
        converged,
        iterations,
        ll_trace,
        score: score.iter().copied().collect(),
    })
}
