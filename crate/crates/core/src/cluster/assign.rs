use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{cut_k, ClusterError, ClusterModel, Dendrogram, DissimilarityMatrix};
use crate::ingest::AttributeTable;

/// Per-image cluster assignment by coverage ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentResult {
    pub k: usize,
    pub row_ids: Vec<String>,
    /// 1-based cluster id per image.
    pub cluster: Vec<usize>,
    /// Row-major N x K coverage ratios.
    pub ratios: Vec<f64>,
    /// Set when the maximum ratio is shared, or when every ratio is zero.
    pub tie: Vec<bool>,
}

impl AssignmentResult {
    pub fn len(&self) -> usize {
        self.cluster.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cluster.is_empty()
    }

    pub fn ratios_of(&self, i: usize) -> &[f64] {
        &self.ratios[i * self.k..(i + 1) * self.k]
    }

    /// `image_id,cluster,tie,ratio_1..ratio_K`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image_id,cluster,tie");
        for c in 1..=self.k {
            let _ = write!(out, ",ratio_{c}");
        }
        out.push('\n');
        for i in 0..self.len() {
            let _ = write!(out, "{},{},{}", self.row_ids[i], self.cluster[i], u8::from(self.tie[i]));
            for r in self.ratios_of(i) {
                let _ = write!(out, ",{r}");
            }
            out.push('\n');
        }
        out
    }

    /// Re-loads an assignment CSV, checking that each assigned cluster attains
    /// the maximum ratio.
    pub fn from_csv(text: &str) -> Result<AssignmentResult, ClusterError> {
        let mut lines = text.lines().filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| ClusterError::Parse("empty assignment file".into()))?;
        let k = header.split(',').count().saturating_sub(3);
        if k == 0 || !header.starts_with("image_id,cluster,tie") {
            return Err(ClusterError::Parse(format!("unexpected header {header:?}")));
        }
        let bad = |what: &str, line: &str| ClusterError::Parse(format!("bad {what} in {line:?}"));
        let mut out = AssignmentResult {
            k,
            row_ids: Vec::new(),
            cluster: Vec::new(),
            ratios: Vec::new(),
            tie: Vec::new(),
        };
        for line in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != k + 3 {
                return Err(bad("field count", line));
            }
            let c: usize = fields[1].parse().map_err(|_| bad("cluster", line))?;
            if c == 0 || c > k {
                return Err(bad("cluster", line));
            }
            let ratios = fields[3..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| bad("ratio", line)))
                .collect::<Result<Vec<_>, _>>()?;
            let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if ratios[c - 1] != max || ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return Err(bad("ratios", line));
            }
            out.row_ids.push(fields[0].to_owned());
            out.cluster.push(c);
            out.tie.push(fields[2] == "1");
            out.ratios.extend(ratios);
        }
        Ok(out)
    }

    /// Image counts per cluster id (index 0 is cluster 1).
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &c in &self.cluster {
            sizes[c - 1] += 1;
        }
        sizes
    }
}

/// Assigns every image to the cluster whose attributes it covers best:
/// `ratio_ik = |{a in S_k : x_ia = 1}| / |S_k|`. Exact ties go to the lowest
/// cluster id.
pub fn assign_clusters(
    table: &AttributeTable,
    model: &ClusterModel,
) -> Result<AssignmentResult, ClusterError> {
    let columns: Vec<Vec<usize>> = model
        .members
        .iter()
        .map(|set| {
            set.iter()
                .map(|name| {
                    table.column_index(name).ok_or_else(|| {
                        ClusterError::Schema(format!("cluster attribute {name:?} not in table"))
                    })
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    let k = model.k();
    let n = table.n_rows();
    let mut cluster = Vec::with_capacity(n);
    let mut ratios = Vec::with_capacity(n * k);
    let mut tie = Vec::with_capacity(n);
    let mut counts = vec![0usize; k];
    for i in 0..n {
        let row = table.row(i);
        for (c, cols) in columns.iter().enumerate() {
            counts[c] = cols.iter().filter(|&&j| row[j] == 1).count();
        }
        // Compare count_a / size_a against count_b / size_b by cross-multiplying.
        let mut best = 0;
        let mut tied = false;
        for c in 1..k {
            let lhs = counts[c] * columns[best].len();
            let rhs = counts[best] * columns[c].len();
            if lhs > rhs {
                best = c;
                tied = false;
            } else if lhs == rhs {
                tied = true;
            }
        }
        if counts[best] == 0 {
            tied = true;
        }
        cluster.push(best + 1);
        tie.push(tied);
        ratios.extend(
            counts
                .iter()
                .zip(&columns)
                .map(|(&cnt, cols)| cnt as f64 / cols.len() as f64),
        );
    }
    Ok(AssignmentResult {
        k,
        row_ids: table.row_ids().to_vec(),
        cluster,
        ratios,
        tie,
    })
}

/// Mean intra-cluster distance for each K of a range of dendrogram cuts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowCurve {
    pub points: Vec<(usize, f64)>,
}

impl ElbowCurve {
    pub fn value(&self, k: usize) -> Option<f64> {
        self.points.iter().find(|p| p.0 == k).map(|p| p.1)
    }

    /// K with the largest discrete curvature `v(K-1) - 2 v(K) + v(K+1)`;
    /// only interior points of the range are candidates.
    pub fn suggest_k(&self) -> Option<usize> {
        self.points
            .windows(3)
            .map(|w| (w[1].0, w[0].1 - 2.0 * w[1].1 + w[2].1))
            .fold(None, |best: Option<(usize, f64)>, (k, c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((k, c)),
            })
            .map(|(k, _)| k)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,mean_intra_cluster_distance\n");
        for (k, v) in &self.points {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }
}

pub fn elbow(
    d: &DissimilarityMatrix,
    dend: &Dendrogram,
    k_range: std::ops::RangeInclusive<usize>,
) -> Result<ElbowCurve, ClusterError> {
    let index: HashMap<&str, usize> = d
        .names()
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut points = Vec::new();
    for k in k_range {
        let model = cut_k(dend, k)?;
        let mut total = 0.0;
        for set in &model.members {
            let idx = set
                .iter()
                .map(|n| {
                    index.get(n.as_str()).copied().ok_or_else(|| {
                        ClusterError::Schema(format!("dendrogram leaf {n:?} not in matrix"))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            if idx.len() > 1 {
                let mut sum = 0.0;
                let mut pairs = 0usize;
                for (a, &i) in idx.iter().enumerate() {
                    for &j in &idx[a + 1..] {
                        sum += d.get(i, j);
                        pairs += 1;
                    }
                }
                total += sum / pairs as f64;
            }
        }
        points.push((k, total / model.k() as f64));
    }
    Ok(ElbowCurve { points })
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index<A: Ord, B: Ord>(a: &[A], b: &[B]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must have equal length");
    let n = a.len();
    let choose2 = |x: usize| (x * x.saturating_sub(1) / 2) as f64;
    let mut table: BTreeMap<(&A, &B), usize> = BTreeMap::new();
    let mut rows: BTreeMap<&A, usize> = BTreeMap::new();
    let mut cols: BTreeMap<&B, usize> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = sum_a * sum_b / choose2(n);
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Provenance;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn table(cols: Vec<Vec<u8>>, n: &[&str]) -> AttributeTable {
        AttributeTable::from_columns(names(n), &cols, Provenance::Synthetic).unwrap()
    }

    #[test]
    fn ratio_and_argmax() {
        let t = table(
            vec![vec![1, 0, 0, 0], vec![0, 0, 1, 0], vec![0, 0, 1, 0], vec![0, 1, 0, 0]],
            &["a", "b", "c", "d"],
        );
        let model = ClusterModel::new(vec![names(&["a", "b"]), names(&["c"]), names(&["d"])]).unwrap();
        let r = assign_clusters(&t, &model).unwrap();
        assert_eq!(r.ratios_of(0), &[0.5, 0.0, 0.0]);
        assert_eq!(r.cluster[0], 1);
        assert!(!r.tie[0]);
        // row 1: a=0 b=0 c=0 d=1 -> cluster 3 with full coverage
        assert_eq!(r.cluster[1], 3);
        assert_eq!(r.ratios_of(1)[2], 1.0);
        // row 2: b=1, c=1 -> cluster 2 ratio 1 beats 0.5
        assert_eq!(r.cluster[2], 2);
        // row 3: all zero
        assert_eq!(r.cluster[3], 1);
        assert!(r.tie[3]);
    }

    #[test]
    fn exact_tie_goes_low() {
        let t = table(vec![vec![1], vec![0], vec![1], vec![1]], &["a", "b", "c", "d"]);
        let model = ClusterModel::new(vec![names(&["a", "b"]), names(&["c", "d"])]).unwrap();
        let r = assign_clusters(&t, &model).unwrap();
        assert_eq!(r.cluster, vec![2]);
        assert!(!r.tie[0]);
        let t = table(vec![vec![1], vec![0], vec![1], vec![0]], &["a", "b", "c", "d"]);
        let r = assign_clusters(&t, &model).unwrap();
        assert_eq!(r.cluster, vec![1]);
        assert!(r.tie[0]);
    }

    #[test]
    fn unknown_attribute_rejected() {
        let t = table(vec![vec![1]], &["a"]);
        let model = ClusterModel::new(vec![names(&["zzz"])]).unwrap();
        assert!(matches!(assign_clusters(&t, &model), Err(ClusterError::Schema(_))));
    }

    #[test]
    fn csv_round_trip() {
        let t = table(vec![vec![1, 0, 1], vec![0, 1, 1], vec![1, 1, 0]], &["a", "b", "c"]);
        let model = ClusterModel::new(vec![names(&["a", "b"]), names(&["c"])]).unwrap();
        let r = assign_clusters(&t, &model).unwrap();
        assert_eq!(AssignmentResult::from_csv(&r.to_csv()).unwrap(), r);
    }

    #[test]
    fn ari_basics() {
        assert_eq!(adjusted_rand_index(&[1, 1, 2, 2], &[5, 5, 9, 9]), 1.0);
        let v = adjusted_rand_index(&[1, 1, 2, 2], &[1, 2, 1, 2]);
        assert!(v < 0.0);
        // textbook value: sklearn adjusted_rand_score([0,0,1,1],[0,0,1,2]) = 0.5714...
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 1, 2]);
        assert!((v - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn suggest_k_picks_sharpest_bend() {
        let curve = ElbowCurve {
            points: vec![(1, 0.5), (2, 0.1), (3, 0.09), (4, 0.08)],
        };
        assert_eq!(curve.suggest_k(), Some(2));
    }
}
