use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use east_core::data::DatasetManifest;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{runtime, CliResult};

/// One record per command invocation, written as `manifest.json` in the output directory.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool_version: &'static str,
    pub command: Vec<String>,
    pub config: Value,
    pub seeds: Vec<u64>,
    /// SHA-256 over the length-prefixed input documents (config, dataset).
    pub input_hash: String,
    pub outputs: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetManifest>,
    pub started_unix: f64,
    pub finished_unix: f64,
}

pub fn now_unix() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn content_hash(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

impl RunManifest {
    pub fn new(config: Value, seeds: Vec<u64>, inputs: &[&[u8]]) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION"),
            command: std::env::args().collect(),
            config,
            seeds,
            input_hash: content_hash(inputs),
            outputs: Vec::new(),
            dataset: None,
            started_unix: now_unix(),
            finished_unix: 0.0,
        }
    }

    pub fn write(mut self, dir: &Path) -> CliResult<PathBuf> {
        self.finished_unix = now_unix();
        let path = dir.join("manifest.json");
        write_json(&path, &self)?;
        Ok(path)
    }
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let bytes = serde_json::to_vec_pretty(value).map_err(runtime)?;
    std::fs::write(path, bytes).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}
