use std::path::PathBuf;

use clap::{Args, Subcommand};
use east_core::data::{load_csv, shannon_equitability, DatasetManifest};
use serde_json::json;

use crate::config::{default_separation, load_config, load_dataset, SyntheticSpec};
use crate::error::{runtime, usage, CliResult};
use crate::manifest::{create_dir, write_json, RunManifest};
use crate::overrides::parse_csv_f64;
use crate::GlobalArgs;

#[derive(Debug, Subcommand)]
pub enum DataCommand {
    /// Write a Gaussian-blob dataset as CSV.
    GenSynth(GenSynthArgs),
    /// Print size, class counts and equitability of a dataset.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// Number of classes (also the feature dimension).
    #[arg(long)]
    pub d: usize,
    /// Number of rows.
    #[arg(long)]
    pub n: usize,
    /// Class probabilities, comma separated; balanced when omitted.
    #[arg(long, value_name = "CSV-LIST")]
    pub weights: Option<String>,
    /// Distance of each class mean from the origin.
    #[arg(long, default_value_t = default_separation())]
    pub separation: f64,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// CSV to inspect; defaults to the dataset of --config.
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    pub label_column: String,
}

pub fn run(global: &GlobalArgs, cmd: &DataCommand) -> CliResult<()> {
    match cmd {
        DataCommand::GenSynth(a) => gen_synth(global, a),
        DataCommand::Inspect(a) => inspect(global, a),
    }
}

fn gen_synth(global: &GlobalArgs, args: &GenSynthArgs) -> CliResult<()> {
    let spec = SyntheticSpec {
        d: args.d,
        n: args.n,
        weights: args.weights.as_deref().map(|w| parse_csv_f64(w, "--weights")).transpose()?.unwrap_or_default(),
        separation: args.separation,
        seed: global.seed.unwrap_or(0),
    };
    let ds = spec.generate()?;
    create_dir(&global.out)?;
    let path = global.out.join("data.csv");
    ds.write_csv(&path, "label").map_err(runtime)?;
    let mut dataset = DatasetManifest::describe(&ds, path.display().to_string(), "label", None);
    dataset.generator = Some(json!(spec));
    let mut manifest = RunManifest::new(json!(spec), vec![spec.seed], &[]);
    manifest.dataset = Some(dataset);
    manifest.outputs.push(path.clone());
    manifest.write(&global.out)?;
    println!("wrote {} rows, {} classes to {}", ds.len(), ds.d, path.display());
    Ok(())
}

fn inspect(global: &GlobalArgs, args: &InspectArgs) -> CliResult<()> {
    let (ds, manifest, raw) = match (&args.data, &global.config) {
        (Some(p), _) => {
            let raw = std::fs::read(p).map_err(|e| usage(format!("cannot read dataset {}: {e}", p.display())))?;
            let ds = load_csv(p, &args.label_column).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            let m = DatasetManifest::describe(&ds, p.display().to_string(), &args.label_column, None);
            (ds, m, raw)
        }
        (None, Some(c)) => load_dataset(&load_config(c)?.config.data)?,
        (None, None) => return Err(usage("inspect needs --data or --config")),
    };
    let equitability = shannon_equitability(&ds.labels, ds.d).map_err(runtime)?;
    let report = json!({ "dataset": manifest, "equitability": equitability });
    println!("source        {}", manifest.source);
    println!("rows          {}", ds.len());
    println!("features      {}", ds.input_dim);
    println!("classes       {}", ds.d);
    println!("equitability  {equitability:.4}");
    println!("{:>6} {:>12} {:>8} {:>8}", "class", "name", "count", "share");
    for (k, (&count, name)) in ds.class_counts().iter().zip(&manifest.class_mapping).enumerate() {
        println!("{:>6} {:>12} {:>8} {:>8.4}", k + 1, name, count, count as f64 / ds.len() as f64);
    }
    create_dir(&global.out)?;
    let path = global.out.join("inspect.json");
    write_json(&path, &report)?;
    let mut run = RunManifest::new(json!({ "source": manifest.source, "label_column": manifest.label_column }), vec![], &[&raw]);
    run.dataset = Some(manifest);
    run.outputs.push(path);
    run.write(&global.out)?;
    Ok(())
}
