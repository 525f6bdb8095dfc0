use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ClusterError, DissimilarityMatrix};

/// One agglomeration step. Node ids follow linkage-matrix conventions:
/// leaves are `0..M`, the cluster created by merge `t` is `M + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(usize, usize, f64, usize)", into = "(usize, usize, f64, usize)")]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

impl From<(usize, usize, f64, usize)> for Merge {
    fn from((left, right, height, size): (usize, usize, f64, usize)) -> Self {
        Merge {
            left,
            right,
            height,
            size,
        }
    }
}

impl From<Merge> for (usize, usize, f64, usize) {
    fn from(m: Merge) -> Self {
        (m.left, m.right, m.height, m.size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaves: Vec<String>,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    /// Checks merge count, node references, sizes and height monotonicity.
    pub fn validate(&self) -> Result<(), ClusterError> {
        let m = self.leaves.len();
        if m == 0 || self.merges.len() != m - 1 {
            return Err(ClusterError::InvalidMatrix(format!(
                "{} merges for {m} leaves",
                self.merges.len()
            )));
        }
        let mut sizes = vec![1usize; m];
        let mut used = vec![false; 2 * m - 1];
        let mut prev = f64::NEG_INFINITY;
        for (t, mg) in self.merges.iter().enumerate() {
            let id = m + t;
            for child in [mg.left, mg.right] {
                if child >= id || used[child] {
                    return Err(ClusterError::InvalidMatrix(format!(
                        "merge {t} references invalid or reused node {child}"
                    )));
                }
                used[child] = true;
            }
            if mg.left >= mg.right || mg.size != sizes[mg.left] + sizes[mg.right] {
                return Err(ClusterError::InvalidMatrix(format!("merge {t} is malformed")));
            }
            if mg.height < prev - 1e-12 {
                return Err(ClusterError::InvalidMatrix(format!(
                    "merge {t} height {} below previous {prev}",
                    mg.height
                )));
            }
            prev = mg.height;
            sizes.push(mg.size);
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dendrogram serializes")
    }

    pub fn from_json(text: &str) -> Result<Dendrogram, ClusterError> {
        let d: Dendrogram =
            serde_json::from_str(text).map_err(|e| ClusterError::Parse(e.to_string()))?;
        d.validate()?;
        Ok(d)
    }
}

/// UPGMA: repeatedly merges the two active clusters with the smallest mean
/// cross-pair dissimilarity. Ties go to the lexicographically smallest pair
/// of node ids.
pub fn hac_average(d: &DissimilarityMatrix) -> Result<Dendrogram, ClusterError> {
    let m = d.len();
    if m < 2 {
        return Err(ClusterError::InsufficientData(format!(
            "clustering needs at least 2 attributes, got {m}"
        )));
    }
    // Slot-indexed state; a merged cluster reuses the slot of its left child.
    // `sums` holds the total dissimilarity over all cross pairs of two slots.
    let mut node_of: Vec<usize> = (0..m).collect();
    let mut size = vec![1usize; m];
    let mut active = vec![true; m];
    let mut sums: Vec<f64> = (0..m * m).map(|k| d.get(k / m, k % m)).collect();
    let mut merges = Vec::with_capacity(m - 1);

    for t in 0..m - 1 {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for a in (0..m).filter(|&s| active[s]) {
            for b in (0..m).filter(|&s| active[s] && s != a) {
                let (na, nb) = (node_of[a], node_of[b]);
                if na > nb {
                    continue;
                }
                let avg = sums[a * m + b] / (size[a] * size[b]) as f64;
                let better = match best {
                    None => true,
                    Some((bd, bna, bnb, _, _)) => avg < bd || (avg == bd && (na, nb) < (bna, bnb)),
                };
                if better {
                    best = Some((avg, na, nb, a, b));
                }
            }
        }
        let (height, left, right, sa, sb) = best.expect("at least two active clusters");
        for k in (0..m).filter(|&s| active[s] && s != sa && s != sb) {
            let s = sums[sa * m + k] + sums[sb * m + k];
            sums[sa * m + k] = s;
            sums[k * m + sa] = s;
        }
        size[sa] += size[sb];
        active[sb] = false;
        node_of[sa] = m + t;
        merges.push(Merge {
            left,
            right,
            height,
            size: size[sa],
        });
    }
    let dend = Dendrogram {
        leaves: d.names().to_vec(),
        merges,
    };
    debug_assert!(dend.validate().is_ok(), "UPGMA heights must be monotone");
    Ok(dend)
}

/// In-order traversal of the merge tree, left child first.
pub fn leaf_order(dend: &Dendrogram) -> Vec<usize> {
    let m = dend.n_leaves();
    if m == 0 {
        return Vec::new();
    }
    let mut order = Vec::with_capacity(m);
    let mut stack = vec![2 * m - 2];
    if m == 1 {
        stack = vec![0];
    }
    while let Some(node) = stack.pop() {
        if node < m {
            order.push(node);
        } else {
            let mg = dend.merges[node - m];
            stack.push(mg.right);
            stack.push(mg.left);
        }
    }
    order
}

/// Partition of the attributes into K disjoint, non-empty clusters.
/// `members[c]` lists the names of cluster `c + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub members: Vec<Vec<String>>,
}

impl ClusterModel {
    pub fn new(members: Vec<Vec<String>>) -> Result<ClusterModel, ClusterError> {
        let mut seen = std::collections::HashSet::new();
        for (c, set) in members.iter().enumerate() {
            if set.is_empty() {
                return Err(ClusterError::Schema(format!("cluster {} is empty", c + 1)));
            }
            for name in set {
                if !seen.insert(name.as_str()) {
                    return Err(ClusterError::Schema(format!(
                        "attribute {name:?} appears in more than one cluster"
                    )));
                }
            }
        }
        Ok(ClusterModel { members })
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    /// Cluster id (1-based) per attribute of `names`; `None` if absent.
    pub fn labels_for(&self, names: &[String]) -> Vec<Option<usize>> {
        names
            .iter()
            .map(|n| self.members.iter().position(|s| s.contains(n)).map(|c| c + 1))
            .collect()
    }

    /// `cluster,attribute` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cluster,attribute\n");
        for (c, set) in self.members.iter().enumerate() {
            for name in set {
                out.push_str(&format!("{},{name}\n", c + 1));
            }
        }
        out
    }
}

/// Cuts the dendrogram into `k` clusters by undoing its last `k - 1` merges.
///
/// Clusters are numbered by descending size; equal sizes are ordered by the
/// position of their first member in the dendrogram leaf order. Members are
/// listed in leaf order.
pub fn cut_k(dend: &Dendrogram, k: usize) -> Result<ClusterModel, ClusterError> {
    let m = dend.n_leaves();
    if k == 0 || k > m {
        return Err(ClusterError::KOutOfRange { k, m });
    }
    let mut parent: Vec<usize> = (0..2 * m - 1).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (t, mg) in dend.merges.iter().take(m - k).enumerate() {
        let id = m + t;
        let (l, r) = (find(&mut parent, mg.left), find(&mut parent, mg.right));
        parent[l] = id;
        parent[r] = id;
    }
    let order = leaf_order(dend);
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &leaf in &order {
        let root = find(&mut parent, leaf);
        groups.entry(root).or_default().push(leaf);
    }
    let rank: Vec<usize> = {
        let mut r = vec![0; m];
        for (pos, &leaf) in order.iter().enumerate() {
            r[leaf] = pos;
        }
        r
    };
    let mut clusters: Vec<Vec<usize>> = groups.into_values().collect();
    clusters.sort_by(|a, b| b.len().cmp(&a.len()).then(rank[a[0]].cmp(&rank[b[0]])));
    Ok(ClusterModel {
        members: clusters
            .into_iter()
            .map(|c| c.into_iter().map(|leaf| dend.leaves[leaf].clone()).collect())
            .collect(),
    })
}
