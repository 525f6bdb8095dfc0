use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AttributeTable, IngestError, Provenance};

/// A block of attributes that co-occur through a shared latent indicator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleSpec {
    pub size: usize,
    /// Marginal probability of every attribute in the bundle.
    pub prevalence: f64,
    /// Pairwise Pearson correlation between attributes of the bundle.
    pub correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    /// Independent columns, one probability per column.
    IndependentBernoulli { probs: Vec<f64> },
    /// Columns grouped into correlated bundles; bundles are independent.
    LatentBundle { bundles: Vec<BundleSpec> },
    /// Independent columns plus a label drawn from
    /// `sigmoid(coefficients[0] + sum_j coefficients[j + 1] * x_j)`.
    LogitGroundTruth {
        probs: Vec<f64>,
        coefficients: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_rows: usize,
    pub generator: Generator,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.n_rows == 0 {
            return Err(IngestError::Spec("n_rows must be positive".into()));
        }
        let check_p = |p: f64, what: &str| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(IngestError::Spec(format!("{what} {p} outside [0, 1]")))
            }
        };
        match &self.generator {
            Generator::IndependentBernoulli { probs } => {
                if probs.is_empty() {
                    return Err(IngestError::Spec("no columns".into()));
                }
                probs.iter().try_for_each(|&p| check_p(p, "probability"))
            }
            Generator::LatentBundle { bundles } => {
                if bundles.is_empty() || bundles.iter().any(|b| b.size == 0) {
                    return Err(IngestError::Spec("bundles must be non-empty".into()));
                }
                bundles.iter().try_for_each(|b| {
                    check_p(b.prevalence, "prevalence")?;
                    check_p(b.correlation, "within-bundle correlation")
                })
            }
            Generator::LogitGroundTruth {
                probs,
                coefficients,
            } => {
                if probs.is_empty() {
                    return Err(IngestError::Spec("no columns".into()));
                }
                if coefficients.len() != probs.len() + 1 {
                    return Err(IngestError::Spec(format!(
                        "{} coefficients for {} columns (intercept first)",
                        coefficients.len(),
                        probs.len()
                    )));
                }
                if coefficients.iter().any(|c| !c.is_finite()) {
                    return Err(IngestError::Spec("non-finite coefficient".into()));
                }
                probs.iter().try_for_each(|&p| check_p(p, "probability"))
            }
        }
    }
}

fn bernoulli(rng: &mut ChaCha8Rng, p: f64) -> u8 {
    u8::from(rng.random::<f64>() < p)
}

/// Generates a synthetic table (and a label column for
/// [`Generator::LogitGroundTruth`]). Output is a pure function of `spec`.
pub fn synth_generate(spec: &SynthSpec) -> Result<(AttributeTable, Option<Vec<u8>>), IngestError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_rows;
    let row_ids: Vec<String> = (0..n).map(|i| format!("synth_{i:06}")).collect();

    let (names, values, labels) = match &spec.generator {
        Generator::IndependentBernoulli { probs } => {
            let mut values = Vec::with_capacity(n * probs.len());
            for _ in 0..n {
                values.extend(probs.iter().map(|&p| bernoulli(&mut rng, p)));
            }
            (attr_names(probs.len()), values, None)
        }
        Generator::LatentBundle { bundles } => {
            let m: usize = bundles.iter().map(|b| b.size).sum();
            let names = bundles
                .iter()
                .enumerate()
                .flat_map(|(k, b)| (0..b.size).map(move |j| format!("bundle{}_{}", k + 1, j + 1)))
                .collect();
            // Each attribute copies the bundle's latent draw with probability
            // sqrt(rho), otherwise draws independently: marginals stay at the
            // prevalence and pairwise correlation is exactly rho.
            let mut values = Vec::with_capacity(n * m);
            for _ in 0..n {
                for b in bundles {
                    let latent = bernoulli(&mut rng, b.prevalence);
                    let copy_p = b.correlation.sqrt();
                    for _ in 0..b.size {
                        let v = if rng.random::<f64>() < copy_p {
                            latent
                        } else {
                            bernoulli(&mut rng, b.prevalence)
                        };
                        values.push(v);
                    }
                }
            }
            (names, values, None)
        }
        Generator::LogitGroundTruth {
            probs,
            coefficients,
        } => {
            let mut values = Vec::with_capacity(n * probs.len());
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let start = values.len();
                values.extend(probs.iter().map(|&p| bernoulli(&mut rng, p)));
                let eta = coefficients[0]
                    + values[start..]
                        .iter()
                        .zip(&coefficients[1..])
                        .map(|(&x, &b)| f64::from(x) * b)
                        .sum::<f64>();
                labels.push(bernoulli(&mut rng, 1.0 / (1.0 + (-eta).exp())));
            }
            (attr_names(probs.len()), values, Some(labels))
        }
    };
    let table = AttributeTable::new(row_ids, names, values, Provenance::Synthetic)?;
    Ok((table, labels))
}

fn attr_names(m: usize) -> Vec<String> {
    (0..m).map(|j| format!("attr{}", j + 1)).collect()
}
