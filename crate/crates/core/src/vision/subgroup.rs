use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::VisionError;
use crate::metrics::{accuracy_at, average_precision, roc_auc, RankedPredictions, AP_TIE_CONVENTION};

/// Age x gender intersection defined by the Young and Male columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subgroup {
    YoungFemale,
    YoungMale,
    OldFemale,
    OldMale,
}

impl Subgroup {
    pub const ALL: [Subgroup; 4] =
        [Subgroup::YoungFemale, Subgroup::YoungMale, Subgroup::OldFemale, Subgroup::OldMale];

    pub fn from_flags(young: u8, male: u8) -> Subgroup {
        match (young == 1, male == 1) {
            (true, false) => Subgroup::YoungFemale,
            (true, true) => Subgroup::YoungMale,
            (false, false) => Subgroup::OldFemale,
            (false, true) => Subgroup::OldMale,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Subgroup::YoungFemale => "young_female",
            Subgroup::YoungMale => "young_male",
            Subgroup::OldFemale => "old_female",
            Subgroup::OldMale => "old_male",
        }
    }
}

/// Per subgroup, indices of the `k` highest scores (stable: ties keep row
/// order). Subgroups smaller than `k` are returned whole.
pub fn topk_select<G: Ord + Copy>(scores: &[f64], groups: &[G], k: usize) -> BTreeMap<G, Vec<usize>> {
    let mut by_group: BTreeMap<G, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate().take(scores.len()) {
        by_group.entry(*g).or_default().push(i);
    }
    for rows in by_group.values_mut() {
        rows.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        rows.truncate(k);
    }
    by_group
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupStats {
    pub subgroup: Subgroup,
    pub n: usize,
    pub positives: usize,
    /// `None` for an empty subgroup.
    pub accuracy: Option<f64>,
    /// `None` when the subgroup has no positives.
    pub average_precision: Option<f64>,
    pub roc_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupReport {
    pub threshold: f64,
    pub ap_tie_convention: String,
    pub map_normalization: String,
    pub groups: Vec<SubgroupStats>,
}

pub const MAP_NORMALIZATION: &str = "each map max-normalized before averaging; mean re-normalized";

impl SubgroupReport {
    pub fn get(&self, g: Subgroup) -> &SubgroupStats {
        self.groups.iter().find(|s| s.subgroup == g).expect("all subgroups present")
    }

    pub fn to_csv(&self) -> String {
        let na = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        let mut out = String::from("subgroup,n,positives,accuracy,average_precision,roc_auc\n");
        for s in &self.groups {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s.subgroup.label(),
                s.n,
                s.positives,
                na(s.accuracy),
                na(s.average_precision),
                na(s.roc_auc)
            );
        }
        out
    }
}

/// Accuracy at 0.5 and average precision for each of the four subgroups.
pub fn subgroup_metrics(probs: &[f64], labels: &[u8], groups: &[Subgroup]) -> Result<SubgroupReport, VisionError> {
    if probs.len() != labels.len() || probs.len() != groups.len() {
        return Err(VisionError::Length(format!(
            "{} scores, {} labels, {} groups",
            probs.len(),
            labels.len(),
            groups.len()
        )));
    }
    let threshold = 0.5;
    let stats = Subgroup::ALL
        .iter()
        .map(|&g| {
            let rows: Vec<usize> = (0..probs.len()).filter(|&i| groups[i] == g).collect();
            let s: Vec<f64> = rows.iter().map(|&i| probs[i]).collect();
            let l: Vec<u8> = rows.iter().map(|&i| labels[i]).collect();
            let ranked = RankedPredictions::new(s.clone(), l.clone()).ok();
            Ok(SubgroupStats {
                subgroup: g,
                n: rows.len(),
                positives: l.iter().filter(|&&v| v == 1).count(),
                accuracy: (!rows.is_empty()).then(|| accuracy_at(&s, &l, threshold)),
                average_precision: ranked.as_ref().and_then(average_precision),
                roc_auc: ranked.as_ref().and_then(roc_auc),
            })
        })
        .collect::<Result<Vec<_>, VisionError>>()?;
    Ok(SubgroupReport {
        threshold,
        ap_tie_convention: AP_TIE_CONVENTION.into(),
        map_normalization: MAP_NORMALIZATION.into(),
        groups: stats,
    })
}
