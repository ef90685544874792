use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

pub const CASE_FILES: [&str; 7] = [
    "buses.csv",
    "branches.csv",
    "machines.csv",
    "exciters.csv",
    "turbines.csv",
    "res_plants.csv",
    "scenario.cfg",
];

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub case: String,
    pub case_sha256: String,
    pub parameters: BTreeMap<String, String>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outputs: Vec<String>,
}

pub fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Digest of every case file that exists, in a fixed order, keyed by name.
pub fn case_checksum(dir: &Path) -> Result<String> {
    let mut h = Sha256::new();
    for name in CASE_FILES {
        let path = dir.join(name);
        if path.is_file() {
            let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            h.update(name.as_bytes());
            h.update([0u8]);
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    /// Write `manifest.json` through a temporary file and a rename.
    pub fn write_atomic(&self, out: &Path) -> Result<()> {
        let tmp = out.join(".manifest.json.tmp");
        let body = serde_json::to_string_pretty(self)?;
        std::fs::write(&tmp, body + "\n").with_context(|| format!("writing {}", tmp.display()))?;
        std::fs::rename(&tmp, out.join("manifest.json")).context("renaming manifest")?;
        Ok(())
    }
}
