use approx::assert_abs_diff_eq;

use super::*;
use crate::data::{gen_synthetic, split, standardize_fit_apply, SplitData};
use crate::diffengine::Tensor;
use crate::metrics::MetricKind;
use crate::model::MlpParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn blobs(n: usize, seed: u64) -> SplitData {
    let ds = gen_synthetic(2, n, &[0.5, 0.5], 5.0, seed).unwrap();
    standardize_fit_apply(&split(&ds, seed).unwrap()).0
}

fn small(loss: LossKind) -> TrainConfig {
    TrainConfig {
        loss,
        hidden: [16, 8, 8],
        batch_size: 64,
        learning_rate: 0.01,
        dropout: 0.0,
        max_epochs_per_phase: 5,
        inner_patience: 2,
        outer_patience: 2,
        max_phases: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn anneal_examples() {
    let mut s = AnnealState::new(0.2, 0.9, 50, 3);
    assert_eq!(anneal_temperature(&s).value(), 0.2);
    s.k = 2;
    assert_abs_diff_eq!(anneal_temperature(&s).value(), 0.162, epsilon = 1e-15);
    let mut s = AnnealState::new(0.2, 0.8, 50, 3);
    s.k = 10;
    assert_abs_diff_eq!(anneal_temperature(&s).value(), 0.2 * 0.8f64.powi(10), epsilon = 1e-18);
    assert_abs_diff_eq!(anneal_temperature(&s).value(), 0.02147, epsilon = 1e-5);
}

#[test]
fn anneal_sequence_strictly_decreasing() {
    let mut s = AnnealState::new(0.2, 0.8, 1, 1);
    let mut prev = f64::INFINITY;
    for k in 0..200 {
        s.k = k;
        let t = anneal_temperature(&s).value();
        assert!(t > 0.0 && t < prev);
        prev = t;
    }
}

#[test]
fn adamw_examples() {
    let p = vec![Tensor::row(vec![1.0, -2.0, 0.5])];
    let zeros = vec![Tensor::row(vec![0.0; 3])];

    let mut q = p.clone();
    adamw_step(&mut q, &zeros, 0.1, 0.0);
    assert_eq!(q, p);

    let mut q = p.clone();
    adamw_step(&mut q, &zeros, 0.1, 0.01);
    for (a, b) in q[0].data().iter().zip(p[0].data()) {
        assert_abs_diff_eq!(*a, b * (1.0 - 0.001), epsilon = 1e-15);
    }
}

#[test]
fn adamw_constant_gradient_steps_by_lr() {
    let mut p = [Tensor::row(vec![0.0, 0.0])];
    let g = [Tensor::row(vec![3.0, -0.02])];
    let mut opt = AdamW::new(0.01, 0.0);
    let mut prev = p[0].data().to_vec();
    for _ in 0..500 {
        opt.step(p.iter_mut(), &g);
        let now = p[0].data().to_vec();
        // bias-corrected moments equal g and g², so each step is lr·g/(|g| + eps)
        assert_abs_diff_eq!(now[0] - prev[0], -0.01, epsilon = 1e-9);
        assert_abs_diff_eq!(now[1] - prev[1], 0.01, epsilon = 1e-8);
        prev = now;
    }
    assert_eq!(opt.steps(), 500);
}

#[test]
fn zero_learning_rate_is_a_null_update() {
    let data = blobs(200, 1);
    let config = TrainConfig { learning_rate: 0.0, dropout: 0.3, ..small(LossKind::East) };
    let mut params = MlpParams::init_with_hidden(2, 2, config.hidden, config.dropout, 0).unwrap();
    let before = params.clone();
    let mut opt = AdamW::new(0.0, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let loss = train_epoch(&mut params, &mut opt, &config, Temperature::new(0.2).unwrap(), &data.train, 1, &mut rng).unwrap();
    assert!(loss.is_finite() && loss > 0.0);
    assert_eq!(params, before);
}

#[test]
fn non_finite_loss_names_batch_and_temperature() {
    let data = blobs(200, 2);
    let config = small(LossKind::East);
    let mut params = MlpParams::init_with_hidden(2, 2, config.hidden, 0.0, 0).unwrap();
    params.layers[3].bias.data_mut()[0] = f64::NAN;
    let mut opt = AdamW::new(0.01, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let err = train_epoch(&mut params, &mut opt, &config, Temperature::new(0.1).unwrap(), &data.train, 7, &mut rng)
        .unwrap_err();
    match err {
        Error::NonFiniteLoss { epoch, batch, temperature } => {
            assert_eq!((epoch, batch, temperature), (7, 1, 0.1));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn zero_inner_patience_advances_every_epoch() {
    let data = blobs(200, 3);
    let config = TrainConfig { inner_patience: 0, outer_patience: 100, max_phases: 6, ..small(LossKind::East) };
    let out = fit(&config, &data).unwrap();
    let h = &out.history;
    assert_eq!(h.records.len(), 6);
    assert_eq!(h.phase_boundaries, vec![2, 3, 4, 5, 6]);
    for (k, r) in h.records.iter().enumerate() {
        assert_eq!(r.phase as usize, k);
        assert_eq!(r.temperature, Some(0.2 * 0.9f64.powi(k as i32)));
    }
    assert_eq!(h.stop_reason, StopReason::MaxPhases);
}

#[test]
fn fit_is_reproducible_and_restores_best() {
    let data = blobs(300, 4);
    let config = TrainConfig { dropout: 0.2, ..small(LossKind::East) };
    let a = fit(&config, &data).unwrap();
    let b = fit(&config, &data).unwrap();
    assert_eq!(a, b);
    let t = Temperature::new(a.history.best_temperature.unwrap()).unwrap();
    let again = validation_loss(&a.params, &config, t, &data.val).unwrap();
    assert_abs_diff_eq!(again, a.history.best_val_loss, epsilon = 1e-9);
    let best = &a.history.records[a.history.best_epoch - 1];
    assert_eq!(best.val_loss, a.history.best_val_loss);
    assert!(a.history.records.iter().all(|r| r.val_loss >= a.history.best_val_loss));
}

#[test]
fn outer_patience_stops_annealing() {
    let data = blobs(200, 5);
    let config = TrainConfig { max_phases: 1000, ..small(LossKind::East) };
    let out = fit(&config, &data).unwrap();
    assert_eq!(out.history.stop_reason, StopReason::OuterPatience);
    let temps = &out.history.temperatures;
    assert!(temps.windows(2).all(|w| w[1] < w[0]));
    assert_eq!(temps.len(), out.history.phase_boundaries.len() + 1);
}

#[test]
fn baselines_run_one_phase() {
    let data = blobs(200, 6);
    for loss in [LossKind::Ce, LossKind::Dice] {
        let out = fit(&small(loss), &data).unwrap();
        assert!(out.history.phase_boundaries.is_empty());
        assert!(out.history.records.iter().all(|r| r.temperature.is_none() && r.phase == 0));
        assert!(matches!(out.history.stop_reason, StopReason::InnerPatience | StopReason::MaxEpochs));
    }
}

#[test]
fn small_batches_warn() {
    let config = TrainConfig { batch_size: 16, ..TrainConfig::default() };
    assert!(config.batch_warning(2).is_some());
    assert!(config.batch_warning(1).is_none());
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate(3).is_ok());
    assert!(TrainConfig { decay: 1.0, ..TrainConfig::default() }.validate(2).is_err());
    assert!(TrainConfig { temperature_0: 0.5, ..TrainConfig::default() }.validate(2).is_err());
    assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate(2).is_err());
    let spec = MetricSpec { kind: MetricKind::MacroFBeta, betas: vec![1.0, 2.0] };
    assert!(TrainConfig { metric: spec, ..TrainConfig::default() }.validate(3).is_err());
    let json = r#"{"loss":"ce","learning_rate":0.01,"metric":{"kind":"mcc"}}"#;
    let c: TrainConfig = serde_json::from_str(json).unwrap();
    assert_eq!(c.loss, LossKind::Ce);
    assert_eq!(c.batch_size, 256);
    assert!(serde_json::from_str::<TrainConfig>(r#"{"lr":0.1}"#).is_err());
}

#[test]
fn history_csv_has_one_row_per_epoch() {
    let data = blobs(200, 7);
    let out = fit(&small(LossKind::Ce), &data).unwrap();
    let mut buf = Vec::new();
    out.history.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("epoch,phase,temperature,train_loss,val_loss"));
    assert_eq!(lines.count(), out.history.records.len());
}

#[test]
fn grid_selection() {
    let data = blobs(200, 8);
    let base = small(LossKind::East);
    let single = GridSpec { batch_size: vec![64], learning_rate: vec![0.01], dropout: vec![0.0], decay: vec![0.9] };
    let out = grid_search(&base, &single, &data, 1).unwrap();
    assert_eq!(out.results.len(), 1);
    assert_eq!(out.best_config, TrainConfig { decay: 0.9, ..base.clone() });

    let two = GridSpec { decay: vec![0.8, 0.9], learning_rate: vec![0.001], ..single };
    let serial = grid_search(&base, &two, &data, 1).unwrap();
    let parallel = grid_search(&base, &two, &data, 2).unwrap();
    assert_eq!(serial, parallel);
    assert_eq!(serial.results.len(), 2);
    let losses: Vec<f64> = serial.results.iter().map(|c| c.best_val_loss.unwrap()).collect();
    let winner = serial.best_index;
    assert!(losses[winner] <= losses[1 - winner]);
    assert_eq!(serial.results[1].config.seed, base.seed + 1);

    let empty = GridSpec { decay: vec![], ..GridSpec::default() };
    assert!(grid_search(&base, &empty, &data, 1).is_err());
}

#[test]
fn default_grid_matches_tabular_ranges() {
    let g = GridSpec::default();
    assert_eq!(g.batch_size, vec![128, 256, 512, 1024, 2048]);
    assert_eq!(g.learning_rate, vec![0.01, 0.001, 0.0001]);
    assert_eq!(g.decay, vec![0.8, 0.9]);
    assert_eq!(g.len(), 60);
    let cells = g.cells(&TrainConfig::default());
    assert_eq!(cells[0].batch_size, 128);
    assert_eq!(cells[1].decay, 0.9);
}
