//! Brute-force oracles shared by the integration tests. None of these reuse
//! library internals; each recomputes its quantity from the definition.
#![allow(dead_code)]

use std::collections::BTreeMap;

use audit_core::boost::{BoostModel, BoostParams, Node, Tree, MODEL_FORMAT_VERSION};
use nalgebra::DMatrix;
use rand::Rng;

/// Naive UPGMA: cluster distances are recomputed from member pairs at every
/// step. Ties go to the lexicographically smallest (id, id) pair.
pub fn upgma_oracle(d: &[Vec<f64>]) -> Vec<(usize, usize, f64, usize)> {
    let m = d.len();
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..m).map(|i| (i, vec![i])).collect();
    let mut out = Vec::new();
    for t in 0..m - 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in 0..clusters.len() {
                let (ia, ib) = (clusters[a].0, clusters[b].0);
                if ia >= ib {
                    continue;
                }
                let mut sum = 0.0;
                for &i in &clusters[a].1 {
                    for &j in &clusters[b].1 {
                        sum += d[i][j];
                    }
                }
                let avg = sum / (clusters[a].1.len() * clusters[b].1.len()) as f64;
                let take = match best {
                    None => true,
                    Some((bd, ba, bb)) => avg < bd || (avg == bd && (ia, ib) < (ba, bb)),
                };
                if take {
                    best = Some((avg, ia, ib));
                }
            }
        }
        let (h, ia, ib) = best.unwrap();
        let pa = clusters.iter().position(|c| c.0 == ia).unwrap();
        let mut members = clusters[pa].1.clone();
        clusters.remove(pa);
        let pb = clusters.iter().position(|c| c.0 == ib).unwrap();
        members.extend(clusters[pb].1.clone());
        clusters.remove(pb);
        out.push((ia, ib, h, members.len()));
        clusters.push((m + t, members));
    }
    out
}

/// Random symmetric dissimilarity with zero diagonal. With `levels`, entries
/// are drawn from {1/4, 2/4, ..., levels/4} so that exact ties are common
/// and every average is computed exactly.
pub fn random_dissimilarity<R: Rng>(rng: &mut R, m: usize, levels: Option<u32>) -> Vec<Vec<f64>> {
    let mut d = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i + 1..m {
            let v = match levels {
                Some(l) => f64::from(rng.random_range(1..=l)) / 4.0,
                None => rng.random::<f64>(),
            };
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

/// Expected ensemble margin when features in `mask` follow `row` and the
/// rest are integrated out by cover.
pub fn coalition_value(model: &BoostModel, row: &[u8], mask: u32) -> f64 {
    fn walk(t: &Tree, i: usize, row: &[u8], mask: u32) -> f64 {
        let n = &t.nodes[i];
        match n.feature {
            None => n.value,
            Some(f) if mask & (1 << f) != 0 => {
                walk(t, if row[f] == 0 { n.left } else { n.right }, row, mask)
            }
            Some(_) => {
                let (l, r) = (&t.nodes[n.left], &t.nodes[n.right]);
                (l.cover * walk(t, n.left, row, mask) + r.cover * walk(t, n.right, row, mask))
                    / (l.cover + r.cover)
            }
        }
    }
    model.base_score + model.trees.iter().map(|t| walk(t, 0, row, mask)).sum::<f64>()
}

/// Exact Shapley values by enumerating all 2^M coalitions.
pub fn shapley_oracle(model: &BoostModel, row: &[u8]) -> (f64, Vec<f64>) {
    let m = model.feature_names.len();
    let v: Vec<f64> = (0..1u32 << m).map(|s| coalition_value(model, row, s)).collect();
    let fact: Vec<f64> = (0..=m).scan(1.0, |acc, k| {
        if k > 0 {
            *acc *= k as f64;
        }
        Some(*acc)
    }).collect();
    let mut phi = vec![0.0; m];
    for (i, p) in phi.iter_mut().enumerate() {
        for s in 0..1u32 << m {
            if s & (1 << i) != 0 {
                continue;
            }
            let k = s.count_ones() as usize;
            let w = fact[k] * fact[m - k - 1] / fact[m];
            *p += w * (v[(s | (1 << i)) as usize] - v[s as usize]);
        }
    }
    (v[0], phi)
}

/// Random ensemble over `m` features with depth at most `depth`; features
/// listed in `unused` never appear in a split. Features may repeat along a
/// path.
pub fn random_ensemble<R: Rng>(rng: &mut R, m: usize, depth: usize, n_trees: usize, unused: &[usize]) -> BoostModel {
    let usable: Vec<usize> = (0..m).filter(|f| !unused.contains(f)).collect();
    fn grow<R: Rng>(rng: &mut R, nodes: &mut Vec<Node>, usable: &[usize], depth: usize) -> usize {
        let id = nodes.len();
        if depth == 0 || rng.random::<f64>() < 0.2 {
            nodes.push(Node::leaf(rng.random_range(-2.0..2.0), rng.random_range(0.5..20.0)));
            return id;
        }
        nodes.push(Node::leaf(0.0, 0.0));
        let f = usable[rng.random_range(0..usable.len())];
        let l = grow(rng, nodes, usable, depth - 1);
        let r = grow(rng, nodes, usable, depth - 1);
        let cover = nodes[l].cover + nodes[r].cover;
        nodes[id] = Node::split(f, l, r, cover, 0.0);
        id
    }
    let trees = (0..n_trees)
        .map(|_| {
            let mut nodes = Vec::new();
            grow(rng, &mut nodes, &usable, depth);
            Tree { nodes }
        })
        .collect();
    let model = BoostModel {
        format_version: MODEL_FORMAT_VERSION,
        feature_names: (0..m).map(|j| format!("f{j}")).collect(),
        base_score: rng.random_range(-1.0..1.0),
        trees,
        params: BoostParams::default(),
        history: Vec::new(),
    };
    model.validate().expect("oracle ensemble is well-formed");
    model
}

/// Average precision from its definition as an exact rational:
/// for each distinct threshold t (descending), predict positive iff
/// score >= t and add (recall gain) x precision.
pub fn ap_oracle(scores: &[f64], labels: &[u8]) -> Option<(u128, u128)> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as u128;
    if n_pos == 0 {
        return None;
    }
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut num, mut den) = (0u128, 1u128);
    let mut prev_tp = 0u128;
    for t in thresholds {
        let predicted = scores.iter().filter(|&&s| s >= t).count() as u128;
        let tp = scores.iter().zip(labels).filter(|(&s, &l)| s >= t && l == 1).count() as u128;
        // term = (tp - prev_tp) / n_pos * tp / predicted
        let (tn, td) = ((tp - prev_tp) * tp, n_pos * predicted);
        num = num * td + tn * den;
        den *= td;
        let g = gcd(num, den);
        num /= g;
        den /= g;
        prev_tp = tp;
    }
    Some((num, den))
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a.max(1)
    } else {
        gcd(b, a % b)
    }
}

/// ROC-AUC by counting every positive/negative pair (ties count one half).
pub fn auc_oracle(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let mut doubled = 0u64;
    let (mut np, mut nn) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li == 1 {
            np += 1;
        } else {
            nn += 1;
        }
        if li != 1 {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj == 0 {
                doubled += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    (np > 0 && nn > 0).then(|| doubled as f64 / (2.0 * np as f64 * nn as f64))
}

/// VIFs as the diagonal of the inverse predictor correlation matrix.
pub fn vif_oracle(columns: &[Vec<f64>]) -> Vec<f64> {
    let p = columns.len();
    let n = columns[0].len() as f64;
    let centered: Vec<Vec<f64>> = columns
        .iter()
        .map(|c| {
            let mean = c.iter().sum::<f64>() / n;
            c.iter().map(|v| v - mean).collect()
        })
        .collect();
    let r = DMatrix::from_fn(p, p, |a, b| {
        let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, v)| u * v).sum::<f64>();
        dot(&centered[a], &centered[b]) / (dot(&centered[a], &centered[a]) * dot(&centered[b], &centered[b])).sqrt()
    });
    let inv = r.try_inverse().expect("full-rank design");
    (0..p).map(|j| inv[(j, j)]).collect()
}

/// Cluster choice by explicit f64 ratios: first maximum wins; the row is
/// flagged when another cluster attains the maximum or every ratio is 0.
pub fn assignment_oracle(rows: &[Vec<u8>], clusters: &[Vec<usize>]) -> Vec<(usize, bool)> {
    rows.iter()
        .map(|row| {
            let ratios: Vec<f64> = clusters
                .iter()
                .map(|c| c.iter().filter(|&&j| row[j] == 1).count() as f64 / c.len() as f64)
                .collect();
            let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let first = ratios.iter().position(|&r| r == max).unwrap();
            let ties = ratios.iter().filter(|&&r| r == max).count();
            (first + 1, ties > 1 || max == 0.0)
        })
        .collect()
}

/// Top-k per group via a full stable sort of (score desc, index asc).
pub fn topk_oracle(scores: &[f64], groups: &[u8], k: usize) -> BTreeMap<u8, Vec<usize>> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut out: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for i in idx {
        let e = out.entry(groups[i]).or_default();
        if e.len() < k {
            e.push(i);
        }
    }
    out
}
