use std::path::PathBuf;

use clap::{Args, ValueEnum};
use east_core::data::{gen_synthetic, split, standardize_fit_apply};
use east_core::model::{Checkpoint, DEFAULT_HIDDEN};
use east_core::verify::{
    check_concentration, check_gradients, check_gt_convergence, check_metric_convergence, check_rate, check_tsoi_compat,
    check_unbiasedness, default_tau_grid, GradientCheckSpec, Population, VerifyReport, DEFAULT_POPULATION, DEFAULT_T_LADDER,
};
use east_core::{fit, LossKind, TrainConfig};
use serde_json::json;

use super::thread_pool;
use crate::config::{default_separation, load_config, load_dataset};
use crate::error::{runtime, usage, CliResult};
use crate::manifest::{create_dir, RunManifest};
use crate::overrides::{parse_csv_f64, parse_csv_usize};
use crate::{overrides, GlobalArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CheckName {
    GtConvergence,
    MetricConvergence,
    Unbiasedness,
    Concentration,
    Rate,
    TsoiCompat,
    Gradcheck,
    All,
}

const ALL_CHECKS: [CheckName; 7] = [
    CheckName::GtConvergence,
    CheckName::MetricConvergence,
    CheckName::Unbiasedness,
    CheckName::Concentration,
    CheckName::Rate,
    CheckName::TsoiCompat,
    CheckName::Gradcheck,
];

/// Size of the independent sample the default frozen model is trained on.
const FROZEN_TRAIN_N: usize = 5000;
const FROZEN_EPOCHS: usize = 5;

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Check to run.
    #[arg(value_enum)]
    pub check: CheckName,
    /// Sample size for the concentration check.
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    /// Failure probability for the concentration bound.
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    /// Monte Carlo trials; overrides every check's default.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Population size of the default synthetic population.
    #[arg(long, default_value_t = DEFAULT_POPULATION)]
    pub population: usize,
    /// Number of classes of the default synthetic population.
    #[arg(long, default_value_t = 3)]
    pub d: usize,
    /// Frozen model; its population is the whole dataset of --config.
    #[arg(long, value_name = "PATH", requires = "config")]
    pub checkpoint: Option<PathBuf>,
    /// Temperature ladder, comma separated and decreasing.
    #[arg(long, value_name = "CSV-LIST")]
    pub ladder: Option<String>,
    /// Simplex points for gt-convergence.
    #[arg(long, default_value_t = 1000)]
    pub points: usize,
    /// Minimum top-2 gap of the gt-convergence points.
    #[arg(long, default_value_t = 0.05)]
    pub gap_min: f64,
    /// Batch sizes for unbiasedness, comma separated and increasing.
    #[arg(long, value_name = "CSV-LIST", default_value = "50,200,1000,5000")]
    pub batch_sizes: String,
    /// Sample sizes for the rate check, comma separated.
    #[arg(long, value_name = "CSV-LIST", default_value = "250,1000,4000")]
    pub n_ladder: String,
}

/// Model probabilities and labels the sampling checks draw from.
fn population(global: &GlobalArgs, args: &VerifyArgs, seed: u64, inputs: &mut Vec<Vec<u8>>) -> CliResult<(Population, serde_json::Value)> {
    if let Some(path) = &args.checkpoint {
        inputs.push(std::fs::read(path).map_err(|e| usage(format!("cannot read checkpoint {}: {e}", path.display())))?);
        let ckpt = Checkpoint::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let cfg = load_config(global.config.as_deref().expect("clap requires --config"))?;
        inputs.push(cfg.raw);
        let (ds, manifest, raw) = load_dataset(&cfg.config.data)?;
        inputs.push(raw);
        if ds.input_dim != ckpt.params.input_dim || ds.d > ckpt.params.classes {
            return Err(usage("dataset shape does not match the checkpoint"));
        }
        let mut ds = match &ckpt.standardizer {
            Some(s) => s.apply(&ds),
            None => ds,
        };
        ds.d = ckpt.params.classes;
        let pop = Population::from_model(&ckpt.params, &ds).map_err(runtime)?;
        return Ok((pop, json!({ "checkpoint": path, "data": manifest.source, "n": ds.len() })));
    }
    let weights = vec![1.0 / args.d as f64; args.d];
    let sep = default_separation();
    let fit_ds = gen_synthetic(args.d, FROZEN_TRAIN_N.max(10 * args.d), &weights, sep, seed.wrapping_add(1)).map_err(usage)?;
    let (parts, standardizer) = standardize_fit_apply(&split(&fit_ds, seed).map_err(usage)?);
    let config = TrainConfig {
        loss: LossKind::Ce,
        seed,
        max_epochs_per_phase: FROZEN_EPOCHS,
        inner_patience: FROZEN_EPOCHS,
        ..TrainConfig::default()
    };
    let model = fit(&config, &parts).map_err(runtime)?.params;
    let pop_ds = gen_synthetic(args.d, args.population, &weights, sep, seed).map_err(usage)?;
    let pop = Population::from_model(&model, &standardizer.apply(&pop_ds)).map_err(runtime)?;
    let desc = json!({
        "synthetic": { "d": args.d, "n": args.population, "separation": sep, "seed": seed },
        "frozen_model": { "loss": "ce", "hidden": DEFAULT_HIDDEN, "epochs": FROZEN_EPOCHS,
                          "train_n": FROZEN_TRAIN_N.max(10 * args.d), "train_seed": seed.wrapping_add(1) },
    });
    Ok((pop, desc))
}

pub fn run(global: &GlobalArgs, args: &VerifyArgs) -> CliResult<()> {
    let seed = global.seed.unwrap_or(0);
    let mut train = TrainConfig::default();
    if let (Some(cfg), Some(_)) = (&global.config, &args.checkpoint) {
        train = load_config(cfg)?.config.train;
    }
    overrides::apply(global, &mut train)?;
    let spec = train.metric;
    let ladder = match &args.ladder {
        Some(s) => parse_csv_f64(s, "--ladder")?,
        None => DEFAULT_T_LADDER.to_vec(),
    };
    let batch_sizes = parse_csv_usize(&args.batch_sizes, "--batch-sizes")?;
    let n_ladder = parse_csv_usize(&args.n_ladder, "--n-ladder")?;
    let checks: Vec<CheckName> = if args.check == CheckName::All { ALL_CHECKS.to_vec() } else { vec![args.check] };
    let needs_population = checks.iter().any(|c| matches!(c, CheckName::MetricConvergence | CheckName::Unbiasedness | CheckName::Concentration | CheckName::Rate));

    let pool = thread_pool(global.parallel)?;
    let mut inputs = Vec::new();
    let (pop, pop_desc) = if needs_population {
        let (p, desc) = pool.install(|| population(global, args, seed, &mut inputs))?;
        spec.validate(p.d).map_err(usage)?;
        (Some(p), desc)
    } else {
        (None, serde_json::Value::Null)
    };
    create_dir(&global.out)?;
    let input_refs: Vec<&[u8]> = inputs.iter().map(Vec::as_slice).collect();
    let mut manifest = RunManifest::new(
        json!({ "checks": format!("{:?}", args.check), "seed": seed, "metric": spec, "population": pop_desc,
                "n": args.n, "delta": args.delta, "trials": args.trials, "ladder": ladder }),
        vec![seed],
        &input_refs,
    );

    let mut failed = Vec::new();
    for check in checks {
        let report: VerifyReport = pool
            .install(|| {
                let pop = pop.as_ref();
                match check {
                    CheckName::GtConvergence => check_gt_convergence(args.points, args.gap_min, &ladder, seed),
                    CheckName::MetricConvergence => check_metric_convergence(pop.unwrap(), &ladder, &spec),
                    CheckName::Unbiasedness => check_unbiasedness(pop.unwrap(), &batch_sizes, args.trials.unwrap_or(1000), &spec, seed),
                    CheckName::Concentration => check_concentration(pop.unwrap(), args.n, args.delta, args.trials.unwrap_or(1000), seed),
                    CheckName::Rate => check_rate(pop.unwrap(), &spec, &n_ladder, args.trials.unwrap_or(500), seed),
                    CheckName::TsoiCompat => check_tsoi_compat(&default_tau_grid()),
                    CheckName::Gradcheck => check_gradients(&GradientCheckSpec { seed, ..GradientCheckSpec::default() }),
                    CheckName::All => unreachable!(),
                }
            })
            .map_err(|e| match e {
                east_core::Error::InvalidArgument(_) | east_core::Error::InvalidTemperature(_) => usage(e),
                other => runtime(other),
            })?;
        let path = report.write(&global.out).map_err(runtime)?;
        println!("{:<20} {}  {}", report.check, if report.passed { "PASS" } else { "FAIL" }, report.statistics);
        if !report.passed {
            failed.push(report.check.clone());
        }
        manifest.outputs.push(path);
    }
    manifest.write(&global.out)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(runtime(format!("checks failed: {}", failed.join(", "))))
    }
}
