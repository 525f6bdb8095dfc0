//! Attribute annotations: parsing, column selection, export, and synthetic
//! generation.
//!
//! The CelebA attribute layout is
//!
//! ```text
//! 202599
//! 5_o_Clock_Shadow Arched_Eyebrows ... Young
//! 000001.jpg -1  1  1 -1 ...
//! ```
//!
//! Cells are `+1` / `-1` and are remapped to `1` / `0`. Fields are separated
//! by arbitrary runs of whitespace.

mod partition;
mod synth;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use partition::{PartitionMap, Split};
pub use synth::{synth_generate, BundleSpec, Generator, SynthSpec};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("structural error: {0}")]
    Structural(String),
    #[error("value error at row {row} ({row_id}), column {column}: unexpected value {value:?}")]
    Value {
        row: usize,
        row_id: String,
        column: String,
        value: String,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl IngestError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Parsed,
    Synthetic,
}

/// Immutable N x M binary attribute matrix, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeTable {
    row_ids: Vec<String>,
    attribute_names: Vec<String>,
    values: Vec<u8>,
    provenance: Provenance,
}

impl AttributeTable {
    /// Builds a table, checking shape, cell range and name uniqueness.
    pub fn new(
        row_ids: Vec<String>,
        attribute_names: Vec<String>,
        values: Vec<u8>,
        provenance: Provenance,
    ) -> Result<Self, IngestError> {
        check_names(&attribute_names)?;
        if values.len() != row_ids.len() * attribute_names.len() {
            return Err(IngestError::Structural(format!(
                "{} cells for {} rows x {} columns",
                values.len(),
                row_ids.len(),
                attribute_names.len()
            )));
        }
        if let Some(pos) = values.iter().position(|&v| v > 1) {
            let m = attribute_names.len();
            return Err(IngestError::Value {
                row: pos / m,
                row_id: row_ids[pos / m].clone(),
                column: attribute_names[pos % m].clone(),
                value: values[pos].to_string(),
            });
        }
        Ok(AttributeTable {
            row_ids,
            attribute_names,
            values,
            provenance,
        })
    }

    /// Builds a table from columns; row ids default to `row_000000` style.
    pub fn from_columns(
        names: Vec<String>,
        columns: &[Vec<u8>],
        provenance: Provenance,
    ) -> Result<Self, IngestError> {
        if names.len() != columns.len() {
            return Err(IngestError::Structural(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(IngestError::Structural("columns differ in length".into()));
        }
        let m = columns.len();
        let mut values = vec![0u8; n * m];
        for (j, col) in columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                values[i * m + j] = v;
            }
        }
        let row_ids = (0..n).map(|i| format!("row_{i:06}")).collect();
        AttributeTable::new(row_ids, names, values, provenance)
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.attribute_names.len()
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Row-major cell storage.
    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[u8] {
        let m = self.n_cols();
        &self.values[i * m..(i + 1) * m]
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.values[i * self.n_cols() + j]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.attribute_names.iter().position(|n| n == name)
    }

    pub fn column(&self, j: usize) -> Vec<u8> {
        let m = self.n_cols();
        self.values.iter().skip(j).step_by(m.max(1)).copied().collect()
    }

    pub fn column_by_name(&self, name: &str) -> Result<Vec<u8>, IngestError> {
        self.column_index(name)
            .map(|j| self.column(j))
            .ok_or_else(|| IngestError::Schema(format!("unknown attribute {name:?}")))
    }

    /// Copy restricted to the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> AttributeTable {
        let mut values = Vec::with_capacity(rows.len() * self.n_cols());
        for &i in rows {
            values.extend_from_slice(self.row(i));
        }
        AttributeTable {
            row_ids: rows.iter().map(|&i| self.row_ids[i].clone()).collect(),
            attribute_names: self.attribute_names.clone(),
            values,
            provenance: self.provenance,
        }
    }

    /// Copy without the named columns; row order is preserved.
    pub fn drop_columns<S: AsRef<str>>(&self, names: &[S]) -> Result<AttributeTable, IngestError> {
        let mut drop = vec![false; self.n_cols()];
        for name in names {
            let name = name.as_ref();
            let j = self
                .column_index(name)
                .ok_or_else(|| IngestError::Schema(format!("cannot drop unknown attribute {name:?}")))?;
            drop[j] = true;
        }
        let keep: Vec<usize> = (0..self.n_cols()).filter(|&j| !drop[j]).collect();
        let mut values = Vec::with_capacity(self.n_rows() * keep.len());
        for i in 0..self.n_rows() {
            let row = self.row(i);
            values.extend(keep.iter().map(|&j| row[j]));
        }
        Ok(AttributeTable {
            row_ids: self.row_ids.clone(),
            attribute_names: keep.iter().map(|&j| self.attribute_names[j].clone()).collect(),
            values,
            provenance: self.provenance,
        })
    }

    /// Serializes in the CelebA annotation layout (+1 / -1 cells).
    pub fn to_celeba_format(&self) -> String {
        let mut out = String::with_capacity(self.n_rows() * (self.n_cols() * 3 + 12));
        let _ = writeln!(out, "{}", self.n_rows());
        out.push_str(&self.attribute_names.join(" "));
        out.push('\n');
        for (i, id) in self.row_ids.iter().enumerate() {
            out.push_str(id);
            for &v in self.row(i) {
                out.push_str(if v == 1 { "  1" } else { " -1" });
            }
            out.push('\n');
        }
        out
    }

    /// Canonical CSV export: `image_id` followed by one 0/1 column per attribute.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("image_id");
        for name in &self.attribute_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (i, id) in self.row_ids.iter().enumerate() {
            out.push_str(id);
            for &v in self.row(i) {
                out.push(',');
                out.push(if v == 1 { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }
}

fn check_names(names: &[String]) -> Result<(), IngestError> {
    let mut seen = HashSet::with_capacity(names.len());
    for name in names {
        if name.is_empty() {
            return Err(IngestError::Schema("empty attribute name".into()));
        }
        if !seen.insert(name.as_str()) {
            return Err(IngestError::Schema(format!("duplicate attribute name {name:?}")));
        }
    }
    Ok(())
}

/// Parses a CelebA `list_attr_celeba.txt` stream.
pub fn parse_attribute_file<R: Read>(mut reader: R) -> Result<AttributeTable, IngestError> {
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| IngestError::io("<attribute stream>", e))?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| IngestError::Structural(format!("attribute file is not UTF-8: {e}")))?;
    parse_attribute_str(text)
}

pub fn parse_attribute_str(text: &str) -> Result<AttributeTable, IngestError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let count_line = lines
        .next()
        .ok_or_else(|| IngestError::Structural("empty attribute file".into()))?;
    let declared: usize = count_line.trim().parse().map_err(|_| {
        IngestError::Structural(format!("first line must be the row count, got {count_line:?}"))
    })?;
    let header = lines
        .next()
        .ok_or_else(|| IngestError::Structural("missing attribute-name line".into()))?;
    let names: Vec<String> = header.split_whitespace().map(str::to_owned).collect();
    check_names(&names)?;
    let m = names.len();

    let mut row_ids = Vec::with_capacity(declared);
    let mut values = Vec::with_capacity(declared * m);
    for line in lines {
        let row = row_ids.len();
        let mut fields = line.split_whitespace();
        let id = fields.next().unwrap_or_default().to_owned();
        let mut count = 0;
        for field in fields {
            if count == m {
                return Err(IngestError::Structural(format!(
                    "row {row} ({id}) has more than {m} values"
                )));
            }
            let v = match field {
                "1" | "+1" => 1,
                "-1" => 0,
                other => {
                    return Err(IngestError::Value {
                        row,
                        row_id: id,
                        column: names[count].clone(),
                        value: other.to_owned(),
                    })
                }
            };
            values.push(v);
            count += 1;
        }
        if count != m {
            return Err(IngestError::Structural(format!(
                "row {row} ({id}) has {count} values, expected {m}"
            )));
        }
        row_ids.push(id);
    }
    if row_ids.len() != declared {
        return Err(IngestError::Structural(format!(
            "header declares {declared} rows but file contains {}",
            row_ids.len()
        )));
    }
    AttributeTable::new(row_ids, names, values, Provenance::Parsed)
}
