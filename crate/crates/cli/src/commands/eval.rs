use std::path::PathBuf;

use clap::{Args, ValueEnum};
use east_core::data::{load_csv, split, Dataset};
use east_core::metrics::{summarize, MetricSummary};
use east_core::model::Checkpoint;
use east_core::softset::{confusion, predict_soft};
use east_core::{Temperature, TrainConfig};
use serde::Serialize;
use serde_json::json;

use super::train::{split_metrics, SplitMetrics};
use crate::config::{load_config, load_dataset};
use crate::error::{runtime, usage, CliResult};
use crate::manifest::{create_dir, write_json, RunManifest};
use crate::{overrides, GlobalArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `east train`.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// CSV to evaluate instead of the config's dataset.
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    pub label_column: String,
    /// Split of the config's dataset; defaults to test, or all rows with --data.
    #[arg(long, value_enum)]
    pub split: Option<SplitName>,
    /// Also report the soft-set metrics at this temperature.
    #[arg(long, value_name = "F")]
    pub temperature: Option<f64>,
}

#[derive(Debug, Serialize)]
struct SoftMetrics {
    temperature: f64,
    target: f64,
    summary: MetricSummary,
    confusion: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct EvalReport {
    checkpoint: PathBuf,
    data: String,
    split: SplitName,
    metric: east_core::MetricSpec,
    hard: SplitMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    soft: Option<SoftMetrics>,
}

pub fn run(global: &GlobalArgs, args: &EvalArgs) -> CliResult<()> {
    let raw_ckpt = std::fs::read(&args.checkpoint).map_err(|e| usage(format!("cannot read checkpoint {}: {e}", args.checkpoint.display())))?;
    let ckpt = Checkpoint::load(&args.checkpoint).map_err(|e| usage(format!("{}: {e}", args.checkpoint.display())))?;
    let params = &ckpt.params;

    let mut train = TrainConfig::default();
    let mut inputs = vec![raw_ckpt];
    let (ds, source, split_name): (Dataset, String, SplitName) = match (&args.data, &global.config) {
        (Some(path), _) => {
            inputs.push(std::fs::read(path).map_err(|e| usage(format!("cannot read dataset {}: {e}", path.display())))?);
            if args.split.is_some_and(|s| s != SplitName::All) {
                return Err(usage("--split needs the dataset from --config"));
            }
            let ds = load_csv(path, &args.label_column).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            if let Some(cfg) = &global.config {
                train = load_config(cfg)?.config.train;
            }
            (ds, path.display().to_string(), SplitName::All)
        }
        (None, Some(cfg)) => {
            let loaded = load_config(cfg)?;
            inputs.push(loaded.raw);
            let (full, manifest, raw) = load_dataset(&loaded.config.data)?;
            inputs.push(raw);
            train = loaded.config.train;
            let which = args.split.unwrap_or(SplitName::Test);
            let ds = if which == SplitName::All {
                full
            } else {
                let parts = split(&full, loaded.config.data.split_seed).map_err(usage)?;
                match which {
                    SplitName::Train => parts.train,
                    SplitName::Val => parts.val,
                    _ => parts.test,
                }
            };
            (ds, manifest.source, which)
        }
        (None, None) => return Err(usage("eval needs --data or --config")),
    };
    overrides::apply(global, &mut train)?;

    if ds.input_dim != params.input_dim {
        return Err(usage(format!("dataset has {} features but the checkpoint expects {}", ds.input_dim, params.input_dim)));
    }
    if ds.d > params.classes {
        return Err(usage(format!("dataset has {} classes but the checkpoint predicts {}", ds.d, params.classes)));
    }
    train.metric.validate(params.classes).map_err(usage)?;
    let mut ds = match &ckpt.standardizer {
        Some(s) => s.apply(&ds),
        None => ds,
    };
    ds.d = params.classes;

    let hard = split_metrics(params, &ds, &train.metric)?;
    let soft = match args.temperature {
        None => None,
        Some(t) => {
            let t = Temperature::new(t).map_err(usage)?;
            let probs = params.predict_proba(&ds.features_tensor()).map_err(runtime)?;
            let memberships = probs.iter().map(|p| predict_soft(p, t)).collect::<Result<Vec<_>, _>>().map_err(runtime)?;
            let c = confusion::<f64, _>(&ds.labels, &memberships, ds.d).map_err(runtime)?;
            let summary = summarize(&c, &train.metric.betas_for::<f64>(ds.d)).map_err(runtime)?;
            let target = train.metric.evaluate(&c).map_err(runtime)?;
            Some(SoftMetrics { temperature: t.value(), target, summary, confusion: c.rows() })
        }
    };

    let report = EvalReport { checkpoint: args.checkpoint.clone(), data: source, split: split_name, metric: train.metric.clone(), hard, soft };
    create_dir(&global.out)?;
    let path = global.out.join("eval.json");
    write_json(&path, &report)?;
    let input_refs: Vec<&[u8]> = inputs.iter().map(Vec::as_slice).collect();
    let mut manifest = RunManifest::new(json!({ "checkpoint": args.checkpoint, "split": split_name, "metric": train.metric, "temperature": args.temperature }), vec![], &input_refs);
    manifest.outputs.push(path);
    manifest.write(&global.out)?;

    let h = &report.hard;
    println!("n = {}, {} = {:.4}", h.n, report.metric.kind.name(), h.target);
    println!("macro_f_beta {:.4}  accuracy {:.4}  mcc {:.4}", h.summary.macro_f_beta, h.summary.accuracy, h.summary.mcc);
    println!("{:>6} {:>10} {:>10} {:>10} {:>6} {:>10}", "class", "precision", "recall", "f_beta", "beta", "support");
    for c in &h.summary.per_class {
        println!("{:>6} {:>10.4} {:>10.4} {:>10.4} {:>6} {:>10}", c.class, c.precision, c.recall, c.f_beta, c.beta, c.support);
    }
    println!("confusion (rows true, columns predicted):");
    for row in &h.confusion {
        println!("  {}", row.iter().map(|v| format!("{v:>8}")).collect::<Vec<_>>().join(" "));
    }
    if let Some(s) = &report.soft {
        println!("soft at T = {}: {} = {:.6}", s.temperature, report.metric.kind.name(), s.target);
    }
    Ok(())
}
