//! `manifest.json`: what produced a report directory.
//!
//! The manifest id hashes the command, configuration, seeds and dataset
//! hashes, so it is stable across reruns; the timestamps are the only
//! run-dependent content and live in this file alone.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_id: String,
    pub tool_version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    /// Dataset name → SHA-256 of its contents.
    pub dataset_hashes: BTreeMap<String, String>,
    /// Output path (relative to the report directory) → SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: serde_json::Value,
        seeds: Vec<u64>,
        dataset_hashes: BTreeMap<String, String>,
        started_unix: u64,
    ) -> Self {
        let mut id_src = format!("{command}\n{config}\n{seeds:?}\n");
        for (k, v) in &dataset_hashes {
            id_src.push_str(&format!("{k}={v}\n"));
        }
        Self {
            manifest_id: sha256_hex(id_src.as_bytes())[..16].to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.into(),
            config,
            seeds,
            dataset_hashes,
            outputs: BTreeMap::new(),
            started_unix,
            finished_unix: started_unix,
        }
    }

    /// Hash every listed output under `dir` and write `manifest.json`.
    pub fn finish(mut self, dir: &Path, outputs: &[String]) -> anyhow::Result<Self> {
        for rel in outputs {
            let p = dir.join(rel);
            let bytes = std::fs::read(&p).with_context(|| format!("hashing {}", p.display()))?;
            self.outputs.insert(rel.clone(), sha256_hex(&bytes));
        }
        self.finished_unix = unix_now();
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(self)
    }
}
