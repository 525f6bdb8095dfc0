use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileEntry {
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config_hash: &'a str,
    seed: u64,
    started_unix: u64,
    finished_unix: u64,
    /// Per-module seeds derived from `seed`.
    seeds: &'a BTreeMap<String, u64>,
    files: &'a BTreeMap<String, FileEntry>,
}

/// Output directory plus the digest of every file written through it.
pub struct Bundle {
    root: PathBuf,
    files: BTreeMap<String, FileEntry>,
    seeds: BTreeMap<String, u64>,
    started: u64,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl Bundle {
    pub fn create(root: &Path) -> Result<Bundle> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Bundle { root: root.to_path_buf(), files: BTreeMap::new(), seeds: BTreeMap::new(), started: unix_now() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn record_seed(&mut self, stream: &str, seed: u64) {
        self.seeds.insert(stream.to_owned(), seed);
    }

    /// Writes `bytes` to `rel` (a `/`-separated path under the root).
    pub fn write(&mut self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let bytes = bytes.as_ref();
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.files.insert(
            rel.to_owned(),
            FileEntry { sha256: hex(&Sha256::digest(bytes)), bytes: bytes.len() as u64 },
        );
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
        text.push('\n');
        self.write(rel, text)
    }

    /// A CSV table and its JSON twin, `{stem}.csv` and `{stem}.json`.
    pub fn write_table<T: Serialize + ?Sized>(&mut self, stem: &str, csv: String, value: &T) -> Result<()> {
        self.write(&format!("{stem}.csv"), csv)?;
        self.write_json(&format!("{stem}.json"), value)
    }

    pub fn finish(self, command: &str, config_hash: &str, seed: u64) -> Result<BTreeMap<String, FileEntry>> {
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_hash,
            seed,
            started_unix: self.started,
            finished_unix: unix_now(),
            seeds: &self.seeds,
            files: &self.files,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        let path = self.root.join(MANIFEST);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(self.files)
    }
}
