use std::path::{Path, PathBuf};

use clap::Args;
use east_core::data::{Dataset, SplitData};
use east_core::metrics::MetricSummary;
use east_core::model::Checkpoint;
use east_core::softset::{confusion, predict_hard};
use east_core::trainer::{evaluate, FitOutcome, TrainHistory};
use east_core::verify::{top2_gap_summary, GapSummary};
use east_core::{fit, MetricKind, MetricSpec, MlpParams, TrainConfig};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::thread_pool;
use crate::config::{load_config, load_data, LoadedData, RunConfig};
use crate::error::{runtime, usage, CliResult};
use crate::manifest::{create_dir, write_json, RunManifest};
use crate::{overrides, GlobalArgs};

#[derive(Debug, Args)]
pub struct TrainArgs {}

/// Hard metrics of one split plus its confusion matrix (rows: true class).
#[derive(Debug, Clone, Serialize)]
pub struct SplitMetrics {
    pub n: usize,
    pub target: f64,
    pub summary: MetricSummary,
    pub confusion: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
struct SeedMetrics {
    seed: u64,
    metric: MetricSpec,
    validation: SplitMetrics,
    test: SplitMetrics,
    test_top2_gap: GapSummary,
}

#[derive(Debug, Serialize)]
struct HistoryDoc<'a> {
    seed: u64,
    config: &'a TrainConfig,
    history: &'a TrainHistory,
}

#[derive(Debug, Clone, Serialize)]
struct Aggregate {
    mean: f64,
    std: f64,
    min: f64,
    max: f64,
}

pub fn target_of(spec: &MetricSpec, s: &MetricSummary) -> f64 {
    match spec.kind {
        MetricKind::MacroFBeta => s.macro_f_beta,
        MetricKind::Accuracy => s.accuracy,
        MetricKind::Mcc => s.mcc,
    }
}

pub fn split_metrics(params: &MlpParams, ds: &Dataset, spec: &MetricSpec) -> CliResult<SplitMetrics> {
    let summary = evaluate(params, ds, spec).map_err(runtime)?;
    let probs = params.predict_proba(&ds.features_tensor()).map_err(runtime)?;
    let preds: Vec<_> = probs.iter().map(|p| predict_hard(p)).collect();
    let c = confusion::<f64, _>(&ds.labels, &preds, ds.d).map_err(runtime)?;
    Ok(SplitMetrics { n: ds.len(), target: target_of(spec, &summary), summary, confusion: c.rows() })
}

/// Sample mean and standard deviation (n - 1 denominator; 0 for a single value).
fn aggregate(values: &[f64]) -> Aggregate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Aggregate {
        mean,
        std: var.sqrt(),
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Loads the config, applies overrides and validates against the dataset.
pub fn prepare(global: &GlobalArgs) -> CliResult<(RunConfig, Vec<u8>, LoadedData)> {
    let path = global.config.as_deref().ok_or_else(|| usage("--config is required"))?;
    let loaded = load_config(path)?;
    let mut config = loaded.config;
    overrides::apply(global, &mut config.train)?;
    let data = load_data(&config.data)?;
    config.train.validate(data.full.d).map_err(usage)?;
    Ok((config, loaded.raw, data))
}

fn write_seed(dir: &Path, config: &TrainConfig, outcome: &FitOutcome, data: &LoadedData) -> CliResult<(SeedMetrics, Vec<PathBuf>)> {
    create_dir(dir)?;
    let split: &SplitData = &data.split;
    let model = dir.join("model.bin");
    Checkpoint::new(outcome.params.clone(), Some(data.standardizer.clone())).save(&model).map_err(runtime)?;

    let history = dir.join("history.json");
    write_json(&history, &HistoryDoc { seed: config.seed, config, history: &outcome.history })?;
    let history_csv = dir.join("history.csv");
    let file = std::fs::File::create(&history_csv).map_err(runtime)?;
    outcome.history.write_csv(file).map_err(runtime)?;

    let test_probs = outcome.params.predict_proba(&split.test.features_tensor()).map_err(runtime)?;
    let metrics = SeedMetrics {
        seed: config.seed,
        metric: config.metric.clone(),
        validation: split_metrics(&outcome.params, &split.val, &config.metric)?,
        test: split_metrics(&outcome.params, &split.test, &config.metric)?,
        test_top2_gap: top2_gap_summary(&test_probs).map_err(runtime)?,
    };
    let metrics_json = dir.join("metrics.json");
    write_json(&metrics_json, &metrics)?;
    let metrics_csv = dir.join("metrics.csv");
    let mut text = String::from("split,n,target,macro_f_beta,accuracy,mcc\n");
    for (name, m) in [("validation", &metrics.validation), ("test", &metrics.test)] {
        let s = &m.summary;
        text += &format!("{name},{},{},{},{},{}\n", m.n, m.target, s.macro_f_beta, s.accuracy, s.mcc);
    }
    std::fs::write(&metrics_csv, text).map_err(runtime)?;
    Ok((metrics, vec![model, history, history_csv, metrics_json, metrics_csv]))
}

pub fn run(global: &GlobalArgs, _args: &TrainArgs) -> CliResult<()> {
    let (config, raw_config, data) = prepare(global)?;
    let seeds = overrides::seeds(global, config.train.seed)?;
    let mut manifest = RunManifest::new(json!(config), seeds.clone(), &[&raw_config, &data.raw]);
    manifest.dataset = Some(data.manifest.clone());
    create_dir(&global.out)?;

    let configs: Vec<TrainConfig> = seeds.iter().map(|&seed| TrainConfig { seed, ..config.train.clone() }).collect();
    if let Some(w) = config.train.batch_warning(data.full.d) {
        eprintln!("warning: {w}");
    }
    let pool = thread_pool(global.parallel)?;
    let outcomes: Vec<_> = pool.install(|| configs.par_iter().map(|c| fit(c, &data.split)).collect());

    println!("{:>6} {:>7} {:>6} {:>12} {:>12} {:>10} {:>10} {:>10}", "seed", "epochs", "phases", "best_T", "val_loss", "test_f", "test_acc", "test_mcc");
    let mut all = Vec::new();
    let mut failure = None;
    for (c, outcome) in configs.iter().zip(outcomes) {
        let outcome = match outcome {
            Ok(o) => o,
            Err(e) => {
                eprintln!("seed {}: {e}", c.seed);
                failure.get_or_insert(format!("seed {}: {e}", c.seed));
                continue;
            }
        };
        let (m, files) = write_seed(&global.out.join(format!("seed-{}", c.seed)), c, &outcome, &data)?;
        let h = &outcome.history;
        let t = h.best_temperature.map_or("-".to_string(), |t| format!("{t:.6}"));
        let s = &m.test.summary;
        println!(
            "{:>6} {:>7} {:>6} {:>12} {:>12.6} {:>10.4} {:>10.4} {:>10.4}",
            c.seed,
            h.records.len(),
            h.temperatures.len(),
            t,
            h.best_val_loss,
            s.macro_f_beta,
            s.accuracy,
            s.mcc
        );
        manifest.outputs.extend(files);
        all.push(m);
    }

    if all.len() > 1 {
        let pick = |f: fn(&SeedMetrics) -> f64| aggregate(&all.iter().map(f).collect::<Vec<_>>());
        let rows = [
            ("test_target", pick(|m| m.test.target)),
            ("test_macro_f_beta", pick(|m| m.test.summary.macro_f_beta)),
            ("test_accuracy", pick(|m| m.test.summary.accuracy)),
            ("test_mcc", pick(|m| m.test.summary.mcc)),
            ("val_target", pick(|m| m.validation.target)),
        ];
        let summary = global.out.join("summary.json");
        let doc: serde_json::Map<String, serde_json::Value> = rows.iter().map(|(k, a)| (k.to_string(), json!(a))).collect();
        write_json(&summary, &json!({ "seeds": all.iter().map(|m| m.seed).collect::<Vec<_>>(), "metrics": doc }))?;
        let summary_csv = global.out.join("summary.csv");
        let mut text = String::from("metric,mean,std,min,max\n");
        for (k, a) in &rows {
            text += &format!("{k},{},{},{},{}\n", a.mean, a.std, a.min, a.max);
        }
        std::fs::write(&summary_csv, text).map_err(runtime)?;
        println!();
        for (k, a) in &rows {
            println!("{k:>18}: {:.4} ± {:.4}", a.mean, a.std);
        }
        manifest.outputs.extend([summary, summary_csv]);
    }
    manifest.write(&global.out)?;
    match failure {
        Some(msg) => Err(runtime(msg)),
        None => Ok(()),
    }
}
