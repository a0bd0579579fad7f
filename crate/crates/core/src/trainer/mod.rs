//! Annealed training of the MLP on soft-set surrogate losses, the cross-entropy and
//! Dice baselines, and grid search over hyperparameters.

mod adamw;
mod fit;
mod grid;

pub use adamw::{adamw_step, AdamW, ADAM_BETAS, ADAM_EPS};
pub use fit::{
    evaluate, fit, surrogate_value, train_epoch, validation_loss, EpochRecord, FitOutcome, StopReason, TrainHistory,
};
pub use grid::{grid_search, GridCell, GridOutcome, GridSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heaviside::{Temperature, MAX_TEMPERATURE};
use crate::metrics::MetricSpec;
use crate::model::DEFAULT_HIDDEN;

pub const DEFAULT_T0: f64 = 0.2;
pub const CONFIG_VERSION: &str = "east-config-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    East,
    #[serde(alias = "cross_entropy")]
    Ce,
    Dice,
}

impl std::str::FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "east" => Ok(LossKind::East),
            "ce" | "cross_entropy" => Ok(LossKind::Ce),
            "dice" => Ok(LossKind::Dice),
            other => Err(Error::InvalidArgument(format!("unknown loss {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    /// Surrogate target for `east`; also the hard metric tracked in the history.
    pub metric: MetricSpec,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    /// Geometric cooling factor `r`.
    pub decay: f64,
    pub temperature_0: f64,
    pub seed: u64,
    pub max_epochs_per_phase: usize,
    pub inner_patience: usize,
    pub outer_patience: usize,
    pub max_phases: usize,
    pub hidden: [usize; 3],
    /// Treat the dynamic threshold as a constant in the backward pass.
    pub detach_tau: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::East,
            metric: MetricSpec { kind: crate::metrics::MetricKind::MacroFBeta, betas: Vec::new() },
            batch_size: 256,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            dropout: 0.25,
            decay: 0.9,
            temperature_0: DEFAULT_T0,
            seed: 0,
            max_epochs_per_phase: 500,
            inner_patience: 50,
            outer_patience: 3,
            max_phases: 100,
            hidden: DEFAULT_HIDDEN,
            detach_tau: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be finite and nonnegative", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be finite and nonnegative", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return bad(format!("decay {} outside (0, 1)", self.decay));
        }
        Temperature::new(self.temperature_0)?;
        if self.max_epochs_per_phase == 0 || self.max_phases == 0 || self.outer_patience == 0 {
            return bad("max_epochs_per_phase, max_phases and outer_patience must be positive".into());
        }
        if self.hidden.contains(&0) {
            return bad(format!("hidden widths {:?} must be positive", self.hidden));
        }
        self.metric.validate(d)
    }

    /// Batch sizes below `16·d` make per-batch confusion estimates noisy.
    pub fn batch_warning(&self, d: usize) -> Option<String> {
        (self.batch_size < 16 * d).then(|| {
            format!("batch_size {} is below 16·d = {}; batch confusion estimates may be biased", self.batch_size, 16 * d)
        })
    }
}

/// Position in the cooling schedule plus the two early-stopping counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealState {
    pub t0: f64,
    pub r: f64,
    pub k: u32,
    pub inner_patience_epochs: usize,
    pub outer_patience_steps: usize,
    pub best_val_loss: f64,
    pub epochs_since_improve: usize,
    pub steps_since_improve: usize,
}

impl AnnealState {
    pub fn new(t0: f64, r: f64, inner_patience: usize, outer_patience: usize) -> Self {
        Self {
            t0,
            r,
            k: 0,
            inner_patience_epochs: inner_patience,
            outer_patience_steps: outer_patience,
            best_val_loss: f64::INFINITY,
            epochs_since_improve: 0,
            steps_since_improve: 0,
        }
    }
}

/// `T0 · r^k`, clamped into `(0, 0.4]`.
pub fn anneal_temperature(state: &AnnealState) -> Temperature {
    let t = state.t0 * state.r.powi(state.k as i32);
    let t = t.clamp(f64::MIN_POSITIVE, MAX_TEMPERATURE);
    Temperature::new(t).expect("clamped temperature")
}

#[cfg(test)]
mod tests;
