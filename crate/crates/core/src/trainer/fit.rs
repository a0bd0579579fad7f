use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adamw::AdamW;
use super::{anneal_temperature, AnnealState, LossKind, TrainConfig};
use crate::data::{Dataset, SplitData};
use crate::diffengine::Graph;
use crate::error::{Error, Result};
use crate::heaviside::Temperature;
use crate::metrics::{self, cross_entropy_loss, dice_loss_graph, soft_confusion, surrogate_loss, MetricSpec, MetricSummary};
use crate::model::MlpParams;
use crate::softset::{confusion, predict_hard, predict_soft, SoftLabel};

/// Stream of the training RNG; stream 0 of the same seed initialises the weights.
const TRAIN_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based, counted across phases.
    pub epoch: usize,
    pub phase: u32,
    /// Absent for the baseline losses.
    pub temperature: Option<f64>,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Hard value of the configured metric on the validation split.
    pub val_target: f64,
    pub val_macro_f_beta: f64,
    pub val_accuracy: f64,
    pub val_mcc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Best validation loss unchanged across `outer_patience` temperature decreases.
    OuterPatience,
    /// Single-phase baseline run ended by inner early stopping.
    InnerPatience,
    MaxEpochs,
    MaxPhases,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch numbers at which phases `1, 2, ...` begin.
    pub phase_boundaries: Vec<usize>,
    /// Temperature of each phase, in order.
    pub temperatures: Vec<f64>,
    /// Hard validation target metric at the last epoch of each phase.
    pub phase_end_target: Vec<f64>,
    pub stop_reason: StopReason,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub best_temperature: Option<f64>,
    pub warnings: Vec<String>,
}

impl TrainHistory {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub params: MlpParams,
    pub history: TrainHistory,
}

/// Hard metrics of the argmax predictions on `ds`.
pub fn evaluate(params: &MlpParams, ds: &Dataset, spec: &MetricSpec) -> Result<MetricSummary> {
    let probs = params.predict_proba(&ds.features_tensor())?;
    let preds: Vec<SoftLabel<f64>> = probs.iter().map(|p| predict_hard(p)).collect();
    let c = confusion(&ds.labels, &preds, ds.d)?;
    metrics::summarize(&c, &spec.betas_for::<f64>(ds.d))
}

/// Metric value of the soft-set confusion matrix at `temperature`.
pub fn surrogate_value(probs: &[Vec<f64>], labels: &[usize], spec: &MetricSpec, temperature: Temperature) -> Result<f64> {
    let d = probs.first().map_or(0, Vec::len);
    let soft = probs.iter().map(|p| predict_soft(p, temperature)).collect::<Result<Vec<_>>>()?;
    spec.evaluate(&confusion(labels, &soft, d)?)
}

/// Eval-mode loss on `ds`: the surrogate at `temperature` for `east`, otherwise the baseline loss.
pub fn validation_loss(params: &MlpParams, config: &TrainConfig, temperature: Temperature, ds: &Dataset) -> Result<f64> {
    let probs = params.predict_proba(&ds.features_tensor())?;
    match config.loss {
        LossKind::East => Ok(config.metric.loss_from_value(surrogate_value(&probs, &ds.labels, &config.metric, temperature)?)),
        LossKind::Ce => metrics::cross_entropy(&probs, &ds.labels),
        LossKind::Dice => metrics::dice_loss(&probs, &ds.labels),
    }
}

/// One shuffled pass over `train`, updating `params` in place. Returns the mean batch loss.
pub fn train_epoch(
    params: &mut MlpParams,
    opt: &mut AdamW,
    config: &TrainConfig,
    temperature: Temperature,
    train: &Dataset,
    epoch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    let mut batches = 0;
    for (b, idx) in order.chunks(config.batch_size).enumerate() {
        let (x, labels) = train.batch(idx);
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let xn = g.constant(x);
        let p = params.forward_graph(&mut g, &bound, xn, Some(rng))?;
        let diverged = Error::NonFiniteLoss { epoch, batch: b + 1, temperature: temperature.value() };
        if !g.value(p).all_finite() {
            return Err(diverged);
        }
        let loss = match config.loss {
            LossKind::East => {
                let c = soft_confusion(&mut g, p, &labels, temperature, config.detach_tau)?;
                surrogate_loss(&mut g, &config.metric, c)?
            }
            LossKind::Ce => cross_entropy_loss(&mut g, p, &labels)?,
            LossKind::Dice => dice_loss_graph(&mut g, p, &labels)?,
        };
        let value = g.value(loss).data()[0];
        if !value.is_finite() {
            return Err(diverged);
        }
        let grads = g.backward(loss)?;
        let grads: Vec<_> = bound.nodes.iter().zip(params.tensors()).map(|(&n, t)| grads.get_or_zeros(n, t.shape())).collect();
        opt.step(params.tensors_mut(), &grads);
        total += value;
        batches += 1;
    }
    Ok(total / batches as f64)
}

/// Annealed training with two-level early stopping; returns the globally best parameters.
///
/// Within phase `k` the model trains at `T_k` until the validation loss (surrogate at `T_k`)
/// has not improved on the phase's best for `inner_patience` epochs. Training ends when the
/// global best validation loss has not improved over `outer_patience` consecutive phases.
/// Baseline losses run one phase.
pub fn fit(config: &TrainConfig, data: &SplitData) -> Result<FitOutcome> {
    let d = data.train.d;
    config.validate(d)?;
    if data.val.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let mut params = MlpParams::init_with_hidden(data.train.input_dim, d, config.hidden, config.dropout, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(TRAIN_STREAM);
    let mut opt = AdamW::new(config.learning_rate, config.weight_decay);
    let annealed = config.loss == LossKind::East;

    let mut state = AnnealState::new(config.temperature_0, config.decay, config.inner_patience, config.outer_patience);
    let mut best_params = params.clone();
    let mut history = TrainHistory {
        records: Vec::new(),
        phase_boundaries: Vec::new(),
        temperatures: Vec::new(),
        phase_end_target: Vec::new(),
        stop_reason: StopReason::MaxPhases,
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        best_temperature: None,
        warnings: config.batch_warning(d).into_iter().collect(),
    };
    let mut epoch = 0;

    loop {
        let temperature = anneal_temperature(&state);
        if state.k > 0 {
            history.phase_boundaries.push(epoch + 1);
        }
        history.temperatures.push(temperature.value());
        let mut phase_best = f64::INFINITY;
        state.epochs_since_improve = 0;
        let mut improved = false;
        let mut inner_stop = false;

        for _ in 0..config.max_epochs_per_phase {
            epoch += 1;
            let train_loss = train_epoch(&mut params, &mut opt, config, temperature, &data.train, epoch, &mut rng)?;
            let val_loss = validation_loss(&params, config, temperature, &data.val)?;
            if !val_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: 0, temperature: temperature.value() });
            }
            let hard = evaluate(&params, &data.val, &config.metric)?;
            history.records.push(EpochRecord {
                epoch,
                phase: state.k,
                temperature: annealed.then_some(temperature.value()),
                train_loss,
                val_loss,
                val_target: target_value(&config.metric, &hard),
                val_macro_f_beta: hard.macro_f_beta,
                val_accuracy: hard.accuracy,
                val_mcc: hard.mcc,
            });
            if val_loss < state.best_val_loss {
                state.best_val_loss = val_loss;
                best_params = params.clone();
                history.best_epoch = epoch;
                history.best_val_loss = val_loss;
                history.best_temperature = annealed.then_some(temperature.value());
                improved = true;
            }
            if val_loss < phase_best {
                phase_best = val_loss;
                state.epochs_since_improve = 0;
            } else {
                state.epochs_since_improve += 1;
            }
            if state.epochs_since_improve >= state.inner_patience_epochs {
                inner_stop = true;
                break;
            }
        }
        history.phase_end_target.push(history.records.last().map_or(f64::NAN, |r| r.val_target));

        if !annealed {
            history.stop_reason = if inner_stop { StopReason::InnerPatience } else { StopReason::MaxEpochs };
            break;
        }
        state.steps_since_improve = if improved { 0 } else { state.steps_since_improve + 1 };
        if state.steps_since_improve >= state.outer_patience_steps {
            history.stop_reason = StopReason::OuterPatience;
            break;
        }
        if state.k as usize + 1 >= config.max_phases {
            history.stop_reason = StopReason::MaxPhases;
            break;
        }
        state.k += 1;
    }
    Ok(FitOutcome { params: best_params, history })
}

fn target_value(spec: &MetricSpec, hard: &MetricSummary) -> f64 {
    match spec.kind {
        metrics::MetricKind::MacroFBeta => hard.macro_f_beta,
        metrics::MetricKind::Accuracy => hard.accuracy,
        metrics::MetricKind::Mcc => hard.mcc,
    }
}
