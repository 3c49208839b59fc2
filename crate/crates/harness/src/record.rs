//! Run records: CSV rows plus a JSON sidecar.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

/// Bumped whenever a column is added, removed or reinterpreted.
pub const CSV_SCHEMA: &str = "v1";

pub fn artifact_version() -> String {
    format!("needle-harness {} csv-{CSV_SCHEMA}", env!("CARGO_PKG_VERSION"))
}

/// First 16 hex digits of SHA-256 over the canonical JSON of the config.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let canonical = serde_json::to_vec(cfg).expect("config serializes");
    Sha256::digest(&canonical)
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub name: String,
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
    /// Experiment columns; `config_hash` and `seed` are prepended in CSV.
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub wall_clock_ms: u128,
    /// Notable sampler events, e.g. rejected `k` draws.
    pub events: Vec<String>,
    /// Whether every row met the calibrated criterion, when one applies.
    pub verdict: Option<bool>,
}

impl RunRecord {
    pub fn new(cfg: &ExperimentConfig, columns: &[&str]) -> Self {
        Self {
            name: cfg.name.clone(),
            config_hash: config_hash(cfg),
            version: artifact_version(),
            seed: cfg.seed,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            wall_clock_ms: 0,
            events: Vec::new(),
            verdict: None,
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["config_hash".to_string(), "seed".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![self.config_hash.clone(), self.seed.to_string()];
            rec.extend(row.iter().cloned());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `path` and `path.json`; returns the sidecar path.
    pub fn write_files(&self, path: &Path) -> Result<PathBuf> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        self.write_csv(file)?;
        let mut sidecar = path.as_os_str().to_owned();
        sidecar.push(".json");
        let sidecar = PathBuf::from(sidecar);
        std::fs::write(&sidecar, serde_json::to_string_pretty(self)?)?;
        Ok(sidecar)
    }
}

/// Float formatting shared by all rows: shortest round-trip representation.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}
