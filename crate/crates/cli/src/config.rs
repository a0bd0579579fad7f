//! The `east-config-v1` run configuration and dataset loading.

use std::path::{Path, PathBuf};

use east_core::data::{gen_synthetic, load_csv, split, standardize_fit_apply, Dataset, DatasetManifest, SplitData, Standardizer};
use east_core::trainer::{GridSpec, CONFIG_VERSION};
use east_core::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{usage, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: String,
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
}

/// Exactly one of `path` (CSV) and `synthetic` must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default = "default_label_column")]
    pub label_column: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    pub split_seed: u64,
}

fn default_label_column() -> String {
    "label".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub d: usize,
    pub n: usize,
    /// Class probabilities; balanced when omitted.
    #[serde(default)]
    pub weights: Vec<f64>,
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default)]
    pub seed: u64,
}

pub fn default_separation() -> f64 {
    2.0
}

impl SyntheticSpec {
    pub fn weights(&self) -> Vec<f64> {
        if self.weights.is_empty() {
            vec![1.0 / self.d as f64; self.d]
        } else {
            self.weights.clone()
        }
    }

    pub fn generate(&self) -> CliResult<Dataset> {
        gen_synthetic(self.d, self.n, &self.weights(), self.separation, self.seed).map_err(usage)
    }
}

/// Parsed config plus the raw bytes it came from.
pub struct LoadedConfig {
    pub config: RunConfig,
    pub raw: Vec<u8>,
}

pub fn load_config(path: &Path) -> CliResult<LoadedConfig> {
    let raw = std::fs::read(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut config: RunConfig =
        serde_json::from_slice(&raw).map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?;
    if config.version != CONFIG_VERSION {
        return Err(usage(format!("config version {:?} is not {CONFIG_VERSION:?}", config.version)));
    }
    if config.data.path.is_some() == config.data.synthetic.is_some() {
        return Err(usage("config data section needs exactly one of \"path\" and \"synthetic\""));
    }
    if let Some(p) = &config.data.path {
        if p.is_relative() {
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            config.data.path = Some(base.join(p));
        }
    }
    Ok(LoadedConfig { config, raw })
}

/// A dataset with its standardised stratified split.
pub struct LoadedData {
    pub full: Dataset,
    pub split: SplitData,
    pub standardizer: Standardizer,
    pub manifest: DatasetManifest,
    /// Raw CSV bytes, for hashing; empty for synthetic data.
    pub raw: Vec<u8>,
}

pub fn load_dataset(cfg: &DataConfig) -> CliResult<(Dataset, DatasetManifest, Vec<u8>)> {
    if let Some(path) = &cfg.path {
        let raw = std::fs::read(path).map_err(|e| usage(format!("cannot read dataset {}: {e}", path.display())))?;
        let ds = load_csv(path, &cfg.label_column).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let manifest = DatasetManifest::describe(&ds, path.display().to_string(), &cfg.label_column, Some(cfg.split_seed));
        Ok((ds, manifest, raw))
    } else {
        let spec = cfg.synthetic.as_ref().expect("validated data section");
        let ds = spec.generate()?;
        let mut manifest = DatasetManifest::describe(&ds, "synthetic", "label", Some(cfg.split_seed));
        manifest.generator = Some(json!(spec));
        Ok((ds, manifest, Vec::new()))
    }
}

pub fn load_data(cfg: &DataConfig) -> CliResult<LoadedData> {
    let (full, manifest, raw) = load_dataset(cfg)?;
    let parts = split(&full, cfg.split_seed).map_err(usage)?;
    let (split, standardizer) = standardize_fit_apply(&parts);
    Ok(LoadedData { full, split, standardizer, manifest, raw })
}
