//! Attribute co-occurrence structure: Pearson correlations, the
//! `d = (1 - r) / 2` dissimilarity, average-linkage clustering of attributes,
//! and coverage-ratio assignment of images to attribute clusters.

mod assign;
mod hac;

use std::fmt::Write as _;

use thiserror::Error;

use crate::ingest::AttributeTable;

pub use assign::{adjusted_rand_index, assign_clusters, elbow, AssignmentResult, ElbowCurve};
pub use hac::{cut_k, hac_average, leaf_order, ClusterModel, Dendrogram, Merge};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("cluster count {k} outside [1, {m}]")]
    KOutOfRange { k: usize, m: usize },
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("parse error: {0}")]
    Parse(String),
}

impl ClusterError {
    pub fn is_numeric(&self) -> bool {
        false
    }
}

/// Symmetric square matrix with named rows/columns, stored row-major.
#[derive(Debug, Clone, PartialEq)]
struct NamedMatrix {
    names: Vec<String>,
    data: Vec<f64>,
}

impl NamedMatrix {
    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.names.len() + j]
    }

    fn to_csv(&self) -> String {
        let m = self.names.len();
        let mut out = String::new();
        for name in &self.names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for i in 0..m {
            out.push_str(&self.names[i]);
            for j in 0..m {
                let _ = write!(out, ",{}", self.get(i, j));
            }
            out.push('\n');
        }
        out
    }

    fn from_csv(text: &str) -> Result<NamedMatrix, ClusterError> {
        let mut lines = text.lines().filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| ClusterError::Parse("empty matrix file".into()))?;
        let names: Vec<String> = header.split(',').skip(1).map(str::to_owned).collect();
        let m = names.len();
        let mut data = Vec::with_capacity(m * m);
        for (i, line) in lines.enumerate() {
            let mut fields = line.split(',');
            let name = fields.next().unwrap_or_default();
            if names.get(i).map(String::as_str) != Some(name) {
                return Err(ClusterError::Parse(format!(
                    "row {i} labelled {name:?} does not match header"
                )));
            }
            for f in fields {
                data.push(
                    f.parse::<f64>()
                        .map_err(|e| ClusterError::Parse(format!("bad cell {f:?}: {e}")))?,
                );
            }
        }
        if data.len() != m * m {
            return Err(ClusterError::Parse(format!(
                "expected {m}x{m} cells, found {}",
                data.len()
            )));
        }
        Ok(NamedMatrix { names, data })
    }

    fn check_symmetric(&self, diag: f64, lo: f64, hi: f64) -> Result<(), ClusterError> {
        let m = self.names.len();
        for i in 0..m {
            if self.get(i, i) != diag {
                return Err(ClusterError::InvalidMatrix(format!(
                    "diagonal entry {i} is {} (expected {diag})",
                    self.get(i, i)
                )));
            }
            for j in 0..m {
                let v = self.get(i, j);
                if !(lo..=hi).contains(&v) || v != self.get(j, i) {
                    return Err(ClusterError::InvalidMatrix(format!(
                        "entry ({i},{j}) = {v} out of range or asymmetric"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Pearson correlation matrix over attribute columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    inner: NamedMatrix,
    /// Columns with zero variance; they correlate 0 with every other column.
    pub zero_variance: Vec<String>,
}

impl CorrelationMatrix {
    pub fn names(&self) -> &[String] {
        &self.inner.names
    }

    pub fn len(&self) -> usize {
        self.inner.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.names.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner.get(i, j)
    }

    pub fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    /// Re-loads an exported matrix and re-checks its invariants.
    pub fn from_csv(text: &str) -> Result<CorrelationMatrix, ClusterError> {
        let inner = NamedMatrix::from_csv(text)?;
        inner.check_symmetric(1.0, -1.0, 1.0)?;
        Ok(CorrelationMatrix {
            inner,
            zero_variance: Vec::new(),
        })
    }

    /// Copy with rows and columns permuted into `order` (indices into names).
    pub fn reordered(&self, order: &[usize]) -> CorrelationMatrix {
        let m = order.len();
        let mut data = Vec::with_capacity(m * m);
        for &i in order {
            for &j in order {
                data.push(self.get(i, j));
            }
        }
        CorrelationMatrix {
            inner: NamedMatrix {
                names: order.iter().map(|&i| self.inner.names[i].clone()).collect(),
                data,
            },
            zero_variance: self.zero_variance.clone(),
        }
    }
}

/// Attribute dissimilarities `d_ij = (1 - r_ij) / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix {
    inner: NamedMatrix,
}

impl DissimilarityMatrix {
    /// Wraps a raw matrix after checking zero diagonal, symmetry and range.
    pub fn new(names: Vec<String>, data: Vec<f64>) -> Result<DissimilarityMatrix, ClusterError> {
        if data.len() != names.len() * names.len() {
            return Err(ClusterError::InvalidMatrix(format!(
                "{} cells for {} names",
                data.len(),
                names.len()
            )));
        }
        let inner = NamedMatrix { names, data };
        inner.check_symmetric(0.0, 0.0, 1.0)?;
        Ok(DissimilarityMatrix { inner })
    }

    pub fn names(&self) -> &[String] {
        &self.inner.names
    }

    pub fn len(&self) -> usize {
        self.inner.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.names.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner.get(i, j)
    }

    pub fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    pub fn from_csv(text: &str) -> Result<DissimilarityMatrix, ClusterError> {
        let inner = NamedMatrix::from_csv(text)?;
        inner.check_symmetric(0.0, 0.0, 1.0)?;
        Ok(DissimilarityMatrix { inner })
    }
}

/// Pearson correlation of every column pair of a binary table.
///
/// On {0,1} data the coefficient reduces to integer counts:
/// `r = (N n11 - n1 n2) / sqrt(n1 (N - n1) n2 (N - n2))`, evaluated here from
/// packed column bitsets.
pub fn pearson_matrix(table: &AttributeTable) -> Result<CorrelationMatrix, ClusterError> {
    let n = table.n_rows();
    let m = table.n_cols();
    if n < 2 {
        return Err(ClusterError::InsufficientData(format!(
            "Pearson correlation needs at least 2 rows, got {n}"
        )));
    }
    let words = n.div_ceil(64);
    let mut bits = vec![0u64; m * words];
    for i in 0..n {
        let row = table.row(i);
        for (j, &v) in row.iter().enumerate() {
            if v == 1 {
                bits[j * words + i / 64] |= 1u64 << (i % 64);
            }
        }
    }
    let col = |j: usize| &bits[j * words..(j + 1) * words];
    let ones: Vec<u64> = (0..m)
        .map(|j| col(j).iter().map(|w| u64::from(w.count_ones())).sum())
        .collect();
    let n64 = n as u64;
    let zero_var: Vec<bool> = ones.iter().map(|&c| c == 0 || c == n64).collect();

    let mut data = vec![0.0; m * m];
    for a in 0..m {
        data[a * m + a] = 1.0;
        for b in (a + 1)..m {
            if zero_var[a] || zero_var[b] {
                continue;
            }
            let n11: u64 = col(a)
                .iter()
                .zip(col(b))
                .map(|(x, y)| u64::from((x & y).count_ones()))
                .sum();
            let num = i128::from(n64) * i128::from(n11) - i128::from(ones[a]) * i128::from(ones[b]);
            let va = (ones[a] * (n64 - ones[a])) as f64;
            let vb = (ones[b] * (n64 - ones[b])) as f64;
            let r = (num as f64 / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0);
            data[a * m + b] = r;
            data[b * m + a] = r;
        }
    }
    let zero_variance = (0..m)
        .filter(|&j| zero_var[j])
        .map(|j| table.attribute_names()[j].clone())
        .collect();
    Ok(CorrelationMatrix {
        inner: NamedMatrix {
            names: table.attribute_names().to_vec(),
            data,
        },
        zero_variance,
    })
}

/// Elementwise `(1 - r) / 2` with an exact zero diagonal.
pub fn dissimilarity(c: &CorrelationMatrix) -> DissimilarityMatrix {
    let m = c.len();
    let mut data: Vec<f64> = c.inner.data.iter().map(|&r| correlation_to_distance(r)).collect();
    for i in 0..m {
        data[i * m + i] = 0.0;
    }
    DissimilarityMatrix {
        inner: NamedMatrix {
            names: c.inner.names.clone(),
            data,
        },
    }
}

#[inline]
pub fn correlation_to_distance(r: f64) -> f64 {
    (1.0 - r) / 2.0
}

/// Blue-white-red rendering of a correlation matrix over [-1, 1] as binary
/// PPM, `cell` pixels per matrix entry.
pub fn heatmap_ppm(c: &CorrelationMatrix, cell: usize) -> Vec<u8> {
    let m = c.len();
    let side = m * cell;
    let mut rgb = Vec::with_capacity(side * side * 3);
    for y in 0..side {
        for x in 0..side {
            rgb.extend_from_slice(&diverging_color(c.get(y / cell, x / cell)));
        }
    }
    crate::vision::image::encode_ppm(side, side, &rgb)
}

fn diverging_color(r: f64) -> [u8; 3] {
    let t = r.clamp(-1.0, 1.0);
    let fade = |s: f64| (255.0 * (1.0 - s)).round() as u8;
    if t < 0.0 {
        [fade(-t), fade(-t), 255]
    } else {
        [255, fade(t), fade(t)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Provenance;

    fn direct_pearson(a: &[u8], b: &[u8]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let mb = b.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (&x, &y) in a.iter().zip(b) {
            let (dx, dy) = (f64::from(x) - ma, f64::from(y) - mb);
            sab += dx * dy;
            saa += dx * dx;
            sbb += dy * dy;
        }
        sab / (saa * sbb).sqrt()
    }

    fn table(cols: &[Vec<u8>]) -> AttributeTable {
        let names = (0..cols.len()).map(|j| format!("c{j}")).collect();
        AttributeTable::from_columns(names, cols, Provenance::Synthetic).unwrap()
    }

    #[test]
    fn self_and_complement() {
        let x = vec![1, 0, 1, 1, 0, 0, 1];
        let nx: Vec<u8> = x.iter().map(|v| 1 - v).collect();
        let c = pearson_matrix(&table(&[x.clone(), x, nx])).unwrap();
        assert_eq!(c.get(0, 0), 1.0);
        assert!((c.get(0, 1) - 1.0).abs() < 1e-15);
        assert!((c.get(0, 2) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn six_row_toy_matches_direct_formula() {
        let a = vec![1, 1, 0, 1, 0, 0];
        let b = vec![1, 0, 0, 1, 1, 0];
        let c = pearson_matrix(&table(&[a.clone(), b.clone()])).unwrap();
        let expect = direct_pearson(&a, &b);
        // n11=2, n1=3, n2=3, N=6: (12 - 9) / 9 = 1/3
        assert!((expect - 1.0 / 3.0).abs() < 1e-12);
        assert!((c.get(0, 1) - expect).abs() < 1e-12);
    }

    #[test]
    fn random_columns_match_direct_formula() {
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            u8::from((state >> 33) % 3 == 0)
        };
        let cols: Vec<Vec<u8>> = (0..5).map(|_| (0..257).map(|_| next()).collect()).collect();
        let c = pearson_matrix(&table(&cols)).unwrap();
        for a in 0..5 {
            for b in 0..5 {
                if a != b {
                    assert!((c.get(a, b) - direct_pearson(&cols[a], &cols[b])).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_variance_flagged() {
        let c = pearson_matrix(&table(&[vec![1, 1, 1], vec![0, 1, 0]])).unwrap();
        assert_eq!(c.get(0, 1), 0.0);
        assert_eq!(c.get(0, 0), 1.0);
        assert_eq!(c.zero_variance, vec!["c0".to_string()]);
    }

    #[test]
    fn too_few_rows() {
        assert!(matches!(
            pearson_matrix(&table(&[vec![1]])),
            Err(ClusterError::InsufficientData(_))
        ));
    }

    #[test]
    fn distance_transform_fixed_points() {
        assert_eq!(correlation_to_distance(1.0), 0.0);
        assert_eq!(correlation_to_distance(0.0), 0.5);
        assert_eq!(correlation_to_distance(-1.0), 1.0);
    }

    #[test]
    fn csv_round_trip_revalidates() {
        let c = pearson_matrix(&table(&[vec![1, 0, 1, 0], vec![1, 1, 0, 0], vec![0, 0, 1, 1]])).unwrap();
        let back = CorrelationMatrix::from_csv(&c.to_csv()).unwrap();
        assert_eq!(back.inner, c.inner);
        let d = dissimilarity(&c);
        assert_eq!(DissimilarityMatrix::from_csv(&d.to_csv()).unwrap(), d);
        assert!(DissimilarityMatrix::from_csv(&c.to_csv()).is_err());
    }

    #[test]
    fn heatmap_colors() {
        assert_eq!(diverging_color(1.0), [255, 0, 0]);
        assert_eq!(diverging_color(-1.0), [0, 0, 255]);
        assert_eq!(diverging_color(0.0), [255, 255, 255]);
    }
}
