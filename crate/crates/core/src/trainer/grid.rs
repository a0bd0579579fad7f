use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{fit, StopReason};
use super::TrainConfig;
use crate::data::SplitData;
use crate::error::{Error, Result};

/// Axes of the Cartesian hyperparameter grid. Cells enumerate batch size slowest and decay fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub batch_size: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub dropout: Vec<f64>,
    pub decay: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            batch_size: vec![128, 256, 512, 1024, 2048],
            learning_rate: vec![0.01, 0.001, 0.0001],
            dropout: vec![0.25, 0.5],
            decay: vec![0.8, 0.9],
        }
    }
}

impl GridSpec {
    pub fn len(&self) -> usize {
        self.batch_size.len() * self.learning_rate.len() * self.dropout.len() * self.decay.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One config per cell; cell `i` trains with seed `base.seed + i`.
    pub fn cells(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let mut out = Vec::with_capacity(self.len());
        for &batch_size in &self.batch_size {
            for &learning_rate in &self.learning_rate {
                for &dropout in &self.dropout {
                    for &decay in &self.decay {
                        let seed = base.seed.wrapping_add(out.len() as u64);
                        out.push(TrainConfig { batch_size, learning_rate, dropout, decay, seed, ..base.clone() });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub index: usize,
    pub config: TrainConfig,
    pub best_val_loss: Option<f64>,
    pub epochs: usize,
    pub stop_reason: Option<StopReason>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub best_index: usize,
    pub best_config: TrainConfig,
    /// In grid order.
    pub results: Vec<GridCell>,
}

impl GridOutcome {
    /// Successful cells by ascending validation loss, grid order breaking ties; failed cells last.
    pub fn ranked(&self) -> Vec<&GridCell> {
        let mut cells: Vec<&GridCell> = self.results.iter().collect();
        cells.sort_by(|a, b| {
            let key = |c: &GridCell| c.best_val_loss.unwrap_or(f64::INFINITY);
            key(a).total_cmp(&key(b)).then(a.index.cmp(&b.index))
        });
        cells
    }
}

/// Fits every cell on a pool of `parallel` threads and picks the lowest best validation loss.
/// Failed cells are recorded and skipped; the search errors only if every cell fails.
pub fn grid_search(base: &TrainConfig, grid: &GridSpec, data: &SplitData, parallel: usize) -> Result<GridOutcome> {
    if grid.is_empty() {
        return Err(Error::Empty("hyperparameter grid"));
    }
    let configs = grid.cells(base);
    for c in &configs {
        c.validate(data.train.d)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let results: Vec<GridCell> = pool.install(|| {
        configs
            .par_iter()
            .enumerate()
            .map(|(index, config)| match fit(config, data) {
                Ok(out) => GridCell {
                    index,
                    config: config.clone(),
                    best_val_loss: Some(out.history.best_val_loss),
                    epochs: out.history.records.len(),
                    stop_reason: Some(out.history.stop_reason),
                    error: None,
                },
                Err(e) => GridCell {
                    index,
                    config: config.clone(),
                    best_val_loss: None,
                    epochs: 0,
                    stop_reason: None,
                    error: Some(e.to_string()),
                },
            })
            .collect()
    });
    let outcome = GridOutcome { best_index: 0, best_config: configs[0].clone(), results };
    let best = outcome.ranked()[0];
    if best.best_val_loss.is_none() {
        return Err(Error::InvalidArgument(format!("every grid cell failed; first error: {}", best.error.clone().unwrap_or_default())));
    }
    let (best_index, best_config) = (best.index, best.config.clone());
    Ok(GridOutcome { best_index, best_config, ..outcome })
}
