use std::path::PathBuf;

use clap::Args;
use east_core::trainer::{grid_search, GridSpec};
use serde_json::json;

use super::train::prepare;
use crate::config::RunConfig;
use crate::error::{runtime, usage, CliResult};
use crate::manifest::{create_dir, write_json, RunManifest};
use crate::GlobalArgs;

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Grid axes as JSON; overrides the config's `grid` section.
    #[arg(long, value_name = "PATH")]
    pub grid: Option<PathBuf>,
}

pub fn run(global: &GlobalArgs, args: &GridArgs) -> CliResult<()> {
    let (config, raw_config, data) = prepare(global)?;
    let (grid, raw_grid) = match &args.grid {
        Some(p) => {
            let raw = std::fs::read(p).map_err(|e| usage(format!("cannot read grid {}: {e}", p.display())))?;
            let g: GridSpec = serde_json::from_slice(&raw).map_err(|e| usage(format!("invalid grid {}: {e}", p.display())))?;
            (g, raw)
        }
        None => (config.grid.clone().unwrap_or_default(), Vec::new()),
    };
    if grid.is_empty() {
        return Err(usage("hyperparameter grid is empty"));
    }
    for cell in grid.cells(&config.train) {
        cell.validate(data.full.d).map_err(usage)?;
    }
    let mut manifest = RunManifest::new(json!({ "config": config, "grid": grid }), vec![config.train.seed], &[&raw_config, &data.raw, &raw_grid]);
    manifest.dataset = Some(data.manifest.clone());
    create_dir(&global.out)?;

    let outcome = grid_search(&config.train, &grid, &data.split, global.parallel).map_err(runtime)?;

    let grid_json = global.out.join("grid.json");
    write_json(&grid_json, &json!({ "best_index": outcome.best_index, "ranked": outcome.ranked() }))?;
    let grid_csv = global.out.join("grid.csv");
    let mut text = String::from("rank,index,batch_size,learning_rate,dropout,decay,seed,best_val_loss,epochs,stop_reason,error\n");
    println!("{:>4} {:>5} {:>6} {:>9} {:>7} {:>6} {:>12} {:>7}", "rank", "cell", "batch", "lr", "dropout", "decay", "val_loss", "epochs");
    for (rank, cell) in outcome.ranked().into_iter().enumerate() {
        let c = &cell.config;
        let loss = cell.best_val_loss.map_or(String::new(), |v| v.to_string());
        let stop = cell.stop_reason.map_or(String::new(), |s| json!(s).as_str().unwrap_or_default().to_string());
        let err = cell.error.clone().unwrap_or_default().replace(['"', ','], " ");
        text += &format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            rank + 1,
            cell.index,
            c.batch_size,
            c.learning_rate,
            c.dropout,
            c.decay,
            c.seed,
            loss,
            cell.epochs,
            stop,
            err
        );
        println!(
            "{:>4} {:>5} {:>6} {:>9} {:>7} {:>6} {:>12} {:>7}",
            rank + 1,
            cell.index,
            c.batch_size,
            c.learning_rate,
            c.dropout,
            c.decay,
            cell.best_val_loss.map_or("failed".into(), |v| format!("{v:.6}")),
            cell.epochs
        );
    }
    std::fs::write(&grid_csv, text).map_err(runtime)?;
    let best = global.out.join("best_config.json");
    let best_config = RunConfig { train: outcome.best_config.clone(), grid: None, ..config };
    write_json(&best, &best_config)?;
    println!("best cell {} written to {}", outcome.best_index, best.display());
    manifest.outputs.extend([grid_json, grid_csv, best]);
    manifest.write(&global.out)?;
    Ok(())
}
