//! Run artifacts that accompany checkpoints: a JSONL training trace
//! (one record per iteration, appendable across resumed runs) and the
//! run manifest that ties config digest, checkpoints, and final metrics
//! together. The manifest is written atomically and only after the
//! files it references exist.

use crate::error::{CliError, Result};
use attwarp_core::train::TraceRecord;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// One line of the JSONL trace.
#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct TraceLine {
    pub iteration: usize,
    pub phase: String,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_same: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_diff: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<f64>,
}

impl From<&TraceRecord> for TraceLine {
    fn from(r: &TraceRecord) -> Self {
        TraceLine {
            iteration: r.iteration,
            phase: r.phase.tag().to_string(),
            loss: r.loss,
            loss_same: r.loss_same,
            loss_diff: r.loss_diff,
            validation: r.validation,
        }
    }
}

/// Number of records already in a trace file (0 when absent). Used by
/// resumed runs to append only the continuation.
pub fn existing_records(path: &Path) -> Result<usize> {
    if !path.exists() {
        return Ok(0);
    }
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).count())
}

/// Appends every record after the first `skip` to the trace file.
pub fn append_records(path: &Path, records: &[TraceRecord], skip: usize) -> Result<usize> {
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut written = 0;
    for r in records.iter().skip(skip) {
        let line = serde_json::to_string(&TraceLine::from(r))
            .map_err(|e| CliError::data(e.to_string()))?;
        writeln!(file, "{line}")
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        written += 1;
    }
    Ok(written)
}

/// Reads a trace file back into lines.
#[cfg(test)]
pub fn read_trace(path: &Path) -> Result<Vec<TraceLine>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::data(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Everything needed to trace a finished run back to its inputs.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub code_version: String,
    pub rng_algorithm: String,
    pub seed: u64,
    pub config_digest: String,
    /// Input data files by role.
    pub data: BTreeMap<String, PathBuf>,
    /// Checkpoint files by phase.
    pub checkpoints: BTreeMap<String, PathBuf>,
    /// Final metric summary, mirrored on stdout as key=value lines.
    pub metrics: BTreeMap<String, f64>,
}

impl Manifest {
    pub fn new(name: &str, seed: u64, config_digest: String) -> Self {
        Manifest {
            name: name.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            rng_algorithm: attwarp_core::rng::RNG_ALGORITHM.to_string(),
            seed,
            config_digest,
            data: BTreeMap::new(),
            checkpoints: BTreeMap::new(),
            metrics: BTreeMap::new(),
        }
    }

    /// Atomic write: the manifest appears complete or not at all. Every
    /// referenced file must already exist.
    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        for (role, p) in self.checkpoints.iter().chain(&self.data) {
            if !p.exists() {
                return Err(CliError::data(format!(
                    "manifest references missing {role} file {}",
                    p.display()
                )));
            }
        }
        let path = out_dir.join("manifest.json");
        let tmp = out_dir.join("manifest.json.tmp");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::data(e.to_string()))?;
        fs::write(&tmp, text).map_err(|e| CliError::data(format!("{}: {e}", tmp.display())))?;
        fs::rename(&tmp, &path)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

/// Prints the machine-readable metric summary: one `key=value` line per
/// metric, in sorted key order.
pub fn print_metrics(metrics: &BTreeMap<String, f64>) {
    for (k, v) in metrics {
        println!("{k}={v}");
    }
}
