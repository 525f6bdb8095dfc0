use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AttributeTable, IngestError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn digit(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn from_digit(d: &str) -> Option<Split> {
        match d {
            "0" => Some(Split::Train),
            "1" => Some(Split::Val),
            "2" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Assignment of every row of a table to train / val / test, kept in table
/// row order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionMap {
    row_ids: Vec<String>,
    splits: Vec<Split>,
}

impl PartitionMap {
    /// Parses `list_eval_partition.txt` (`row_id digit` per line) and aligns
    /// it to `table`. Every table row must appear exactly once; extra rows
    /// not in the table are ignored.
    pub fn parse(text: &str, table: &AttributeTable) -> Result<PartitionMap, IngestError> {
        let mut by_id: HashMap<&str, Split> = HashMap::with_capacity(table.n_rows());
        for (lineno, line) in text.lines().enumerate() {
            let mut fields = line.split_whitespace();
            let (Some(id), Some(digit)) = (fields.next(), fields.next()) else {
                if line.trim().is_empty() {
                    continue;
                }
                return Err(IngestError::Structural(format!(
                    "partition line {} is not `row_id split`",
                    lineno + 1
                )));
            };
            let split = Split::from_digit(digit).ok_or_else(|| IngestError::Value {
                row: lineno,
                row_id: id.to_owned(),
                column: "split".into(),
                value: digit.to_owned(),
            })?;
            if by_id.insert(id, split).is_some() {
                return Err(IngestError::Structural(format!(
                    "row {id} appears more than once in the partition file"
                )));
            }
        }
        let splits = table
            .row_ids()
            .iter()
            .map(|id| {
                by_id.get(id.as_str()).copied().ok_or_else(|| {
                    IngestError::Structural(format!("row {id} missing from the partition file"))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PartitionMap {
            row_ids: table.row_ids().to_vec(),
            splits,
        })
    }

    /// Seeded 80/10/10 train/val/test split.
    pub fn random(table: &AttributeTable, seed: u64) -> PartitionMap {
        let n = table.n_rows();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = n * 8 / 10;
        let n_val = n / 10;
        let mut splits = vec![Split::Test; n];
        for (rank, &i) in order.iter().enumerate() {
            splits[i] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
        PartitionMap {
            row_ids: table.row_ids().to_vec(),
            splits,
        }
    }

    pub fn split_of(&self, row: usize) -> Split {
        self.splits[row]
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    /// Row indices (into the parent table) belonging to `split`.
    pub fn rows(&self, split: Split) -> Vec<usize> {
        (0..self.splits.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, s) in self.row_ids.iter().zip(&self.splits) {
            let _ = writeln!(out, "{id} {}", s.digit());
        }
        out
    }
}
