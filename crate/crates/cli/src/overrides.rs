//! Command-line overrides applied on top of the config file.

use std::str::FromStr;

use east_core::{LossKind, MetricKind, TrainConfig};

use crate::error::{usage, CliResult};
use crate::GlobalArgs;

pub fn parse_csv_f64(s: &str, what: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| usage(format!("{what}: {t:?} is not a number"))))
        .collect()
}

pub fn parse_csv_usize(s: &str, what: &str) -> CliResult<Vec<usize>> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| usage(format!("{what}: {t:?} is not a non-negative integer"))))
        .collect()
}

/// `A..B` or `A..=B`, both inclusive.
pub fn parse_seed_range(s: &str) -> CliResult<Vec<u64>> {
    let bad = || usage(format!("--seeds expects A..B, got {s:?}"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let b = b.strip_prefix('=').unwrap_or(b);
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    if a > b {
        return Err(usage(format!("--seeds range {a}..{b} is empty")));
    }
    Ok((a..=b).collect())
}

/// Seeds to run: `--seeds`, else `--seed`, else the config seed.
pub fn seeds(global: &GlobalArgs, config_seed: u64) -> CliResult<Vec<u64>> {
    match (&global.seeds, global.seed) {
        (Some(r), _) => parse_seed_range(r),
        (None, Some(s)) => Ok(vec![s]),
        (None, None) => Ok(vec![config_seed]),
    }
}

pub fn apply(global: &GlobalArgs, cfg: &mut TrainConfig) -> CliResult<()> {
    if let Some(l) = &global.loss {
        cfg.loss = LossKind::from_str(l).map_err(usage)?;
    }
    if let Some(m) = &global.metric {
        let kind = MetricKind::from_str(m).map_err(usage)?;
        if kind != cfg.metric.kind {
            cfg.metric.betas.clear();
        }
        cfg.metric.kind = kind;
    }
    if let Some(b) = &global.betas {
        if cfg.metric.kind != MetricKind::MacroFBeta {
            return Err(usage("--betas only applies to macro_f_beta"));
        }
        cfg.metric.betas = parse_csv_f64(b, "--betas")?;
    }
    if let Some(t) = global.temperature_0 {
        cfg.temperature_0 = t;
    }
    if let Some(r) = global.decay {
        cfg.decay = r;
    }
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seed_range("0..3").unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(parse_seed_range("5..=5").unwrap(), vec![5]);
        assert!(parse_seed_range("3..1").is_err());
        assert!(parse_seed_range("x..1").is_err());
        assert!(parse_seed_range("4").is_err());
    }

    #[test]
    fn csv_lists() {
        assert_eq!(parse_csv_f64("1, 0.25,2", "b").unwrap(), vec![1.0, 0.25, 2.0]);
        assert!(parse_csv_f64("1,,2", "b").is_err());
        assert_eq!(parse_csv_usize("50,200", "n").unwrap(), vec![50, 200]);
    }
}
