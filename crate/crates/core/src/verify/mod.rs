//! Monte Carlo and closed-form checks of the soft-set construction: convergence of the
//! memberships and metrics as `T -> 0`, unbiasedness and concentration of batch confusion
//! matrices, the `1/sqrt(n)` deviation rate, the `T = 0.2` width identity, and gradients.
//!
//! Each check returns a [`VerifyReport`] whose `passed` flag is computed only from the
//! recorded statistics and tolerance.

use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::Dataset;
use crate::diffengine::{grad_check_many, Tensor};
use crate::error::{Error, Result};
use crate::heaviside::{heaviside_linear, top2, Temperature, ThresholdParams};
use crate::metrics::{soft_confusion, surrogate_loss, MetricSpec};
use crate::model::{BoundParams, MlpParams};
use crate::softset::{argmax, predict_hard, predict_soft, SoftConfusionMatrix};

pub const DEFAULT_T_LADDER: [f64; 6] = [0.2, 0.1, 0.05, 0.01, 1e-3, 1e-4];
pub const DEFAULT_POPULATION: usize = 200_000;
/// Largest class count drawn by the membership-convergence check.
pub const MAX_SIMPLEX_DIM: usize = 10;

const GT_TOL: f64 = 1e-2;
const METRIC_GAP_TOL: f64 = 1e-3;
const BIAS_TOL: f64 = 0.01;
const RATE_SPREAD: f64 = 2.5;
const ANCHOR_TOL: f64 = 1e-12;
const GRAD_EPS: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub check: String,
    pub parameters: Value,
    pub statistics: Value,
    pub tolerance: f64,
    pub passed: bool,
}

impl VerifyReport {
    /// Writes `<dir>/<check>.json` and returns the path.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        std::fs::create_dir_all(dir.as_ref())?;
        let path = dir.as_ref().join(format!("{}.json", self.check));
        std::fs::write(&path, serde_json::to_vec_pretty(self)?)?;
        Ok(path)
    }
}

/// A frozen model's predictions on a fixed sample, treated as the whole population.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub probs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub d: usize,
    /// 0-based argmax of each row.
    pub predicted: Vec<usize>,
}

impl Population {
    pub fn new(probs: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("population"));
        }
        if probs.len() != labels.len() {
            return Err(Error::LengthMismatch { what: "probabilities vs labels", left: probs.len(), right: labels.len() });
        }
        let d = probs[0].len();
        if let Some(&y) = labels.iter().find(|&&y| y == 0 || y > d) {
            return Err(Error::ClassOutOfRange { index: y, d });
        }
        let predicted = probs.iter().map(|p| argmax(p)).collect();
        Ok(Self { probs, labels, d, predicted })
    }

    pub fn from_model(params: &MlpParams, ds: &Dataset) -> Result<Self> {
        Self::new(params.predict_proba(&ds.features_tensor())?, ds.labels.clone())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Integer confusion matrix of the rows in `idx` (all rows when `None`).
    pub fn hard_confusion(&self, idx: Option<&[usize]>) -> SoftConfusionMatrix<f64> {
        let mut counts = vec![vec![0.0; self.d]; self.d];
        let mut add = |i: usize| counts[self.labels[i] - 1][self.predicted[i]] += 1.0;
        match idx {
            Some(idx) => idx.iter().for_each(|&i| add(i)),
            None => (0..self.len()).for_each(&mut add),
        }
        SoftConfusionMatrix::from_rows(&counts).expect("square counts")
    }

    pub fn soft_confusion(&self, temperature: Temperature) -> Result<SoftConfusionMatrix<f64>> {
        let mut c = SoftConfusionMatrix::zeros(self.d);
        for (p, &y) in self.probs.iter().zip(&self.labels) {
            c.accumulate(y, &predict_soft(p, temperature)?)?;
        }
        Ok(c)
    }
}

fn trial_rng(seed: u64, group: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((group as u64) << 32) | trial as u64);
    rng
}

fn check_ladder(ladder: &[f64]) -> Result<()> {
    if ladder.is_empty() {
        return Err(Error::Empty("temperature ladder"));
    }
    for &t in ladder {
        Temperature::new(t)?;
    }
    if ladder.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument(format!("temperature ladder {ladder:?} must be strictly decreasing")));
    }
    Ok(())
}

fn nonincreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

/// Uniform draw from the probability simplex of dimension `d`.
pub fn random_simplex_point(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    let e: Vec<f64> = (0..d).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `max_k |g_T(p)_k - g(p)_k|`.
pub fn membership_deviation(p: &[f64], temperature: Temperature) -> Result<f64> {
    let soft = predict_soft(p, temperature)?;
    let hard = predict_hard(p);
    Ok(soft.iter().zip(hard.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// Soft memberships approach the hard argmax as `T` decreases down `ladder`.
pub fn check_gt_convergence(num_points: usize, gap_min: f64, ladder: &[f64], seed: u64) -> Result<VerifyReport> {
    check_ladder(ladder)?;
    if !(gap_min > 0.0 && gap_min < 1.0) {
        return Err(Error::InvalidArgument(format!("gap_min {gap_min} outside (0, 1)")));
    }
    if num_points == 0 {
        return Err(Error::Empty("simplex sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(num_points);
    let mut dims = [0usize; MAX_SIMPLEX_DIM + 1];
    while points.len() < num_points {
        let d = rng.gen_range(2..=MAX_SIMPLEX_DIM);
        let p = random_simplex_point(d, &mut rng);
        let (a, b) = top2(&p)?;
        if p[a] - p[b] >= gap_min {
            dims[d] += 1;
            points.push(p);
        }
    }
    let mut max_dev = Vec::with_capacity(ladder.len());
    for &t in ladder {
        let temp = Temperature::new(t)?;
        let mut worst: f64 = 0.0;
        for p in &points {
            worst = worst.max(membership_deviation(p, temp)?);
        }
        max_dev.push(worst);
    }
    let passed = nonincreasing(&max_dev) && *max_dev.last().unwrap() < GT_TOL;
    Ok(VerifyReport {
        check: "gt-convergence".into(),
        parameters: json!({ "num_points": num_points, "gap_min": gap_min, "temperatures": ladder, "seed": seed,
                            "d_range": [2, MAX_SIMPLEX_DIM] }),
        statistics: json!({ "max_deviation": max_dev, "points_per_d": &dims[2..] }),
        tolerance: GT_TOL,
        passed,
    })
}

/// `|M(C_T) - M(C)|` per temperature on a fixed population.
pub fn check_metric_convergence(pop: &Population, ladder: &[f64], spec: &MetricSpec) -> Result<VerifyReport> {
    check_ladder(ladder)?;
    spec.validate(pop.d)?;
    let hard = spec.evaluate(&pop.hard_confusion(None))?;
    let mut gaps = Vec::with_capacity(ladder.len());
    for &t in ladder {
        let soft = spec.evaluate(&pop.soft_confusion(Temperature::new(t)?)?)?;
        gaps.push((soft - hard).abs());
    }
    let passed = *gaps.last().unwrap() < METRIC_GAP_TOL && nonincreasing(&gaps[1..]);
    Ok(VerifyReport {
        check: "metric-convergence".into(),
        parameters: json!({ "metric": spec.kind.name(), "betas": spec.betas, "temperatures": ladder, "n": pop.len() }),
        statistics: json!({ "hard_metric": hard, "gap": gaps }),
        tolerance: METRIC_GAP_TOL,
        passed,
    })
}

/// Mean of the metric over batches drawn without replacement, compared with the full-population value.
///
/// `|bias|` must not grow along `batch_sizes` beyond two Monte Carlo standard errors of the
/// difference, and must be below 0.01 at the largest size.
pub fn check_unbiasedness(pop: &Population, batch_sizes: &[usize], num_resamples: usize, spec: &MetricSpec, seed: u64) -> Result<VerifyReport> {
    spec.validate(pop.d)?;
    if batch_sizes.is_empty() || num_resamples < 2 {
        return Err(Error::InvalidArgument("need at least one batch size and two resamples".into()));
    }
    if batch_sizes.windows(2).any(|w| w[1] <= w[0]) || batch_sizes[batch_sizes.len() - 1] > pop.len() || batch_sizes[0] == 0 {
        return Err(Error::InvalidArgument(format!("batch sizes {batch_sizes:?} must increase within 1..={}", pop.len())));
    }
    let truth = spec.evaluate(&pop.hard_confusion(None))?;
    let mut rows = Vec::new();
    for (gi, &n) in batch_sizes.iter().enumerate() {
        let values = (0..num_resamples)
            .into_par_iter()
            .map(|r| {
                let idx = index::sample(&mut trial_rng(seed, gi, r), pop.len(), n).into_vec();
                spec.evaluate(&pop.hard_confusion(Some(&idx)))
            })
            .collect::<Result<Vec<f64>>>()?;
        let errors: Vec<f64> = values.iter().map(|v| v - truth).collect();
        let (bias, sd) = mean_sd(&errors);
        rows.push(json!({ "n": n, "mean": truth + bias, "bias": bias, "abs_bias": bias.abs(),
                          "std_error": sd / (num_resamples as f64).sqrt() }));
    }
    let abs: Vec<f64> = rows.iter().map(|r| r["abs_bias"].as_f64().unwrap()).collect();
    let se: Vec<f64> = rows.iter().map(|r| r["std_error"].as_f64().unwrap()).collect();
    let monotone = (1..abs.len()).all(|i| abs[i] <= abs[i - 1] + 2.0 * (se[i] * se[i] + se[i - 1] * se[i - 1]).sqrt());
    let passed = monotone && *abs.last().unwrap() < BIAS_TOL;
    Ok(VerifyReport {
        check: "unbiasedness".into(),
        parameters: json!({ "metric": spec.kind.name(), "betas": spec.betas, "batch_sizes": batch_sizes,
                            "num_resamples": num_resamples, "population": pop.len(), "seed": seed }),
        statistics: json!({ "population_metric": truth, "per_batch_size": rows, "nonincreasing_within_2se": monotone }),
        tolerance: BIAS_TOL,
        passed,
    })
}

/// `sqrt(ln(2 d² / δ) / (2 n))`.
pub fn hoeffding_bound(d: usize, n: usize, delta: f64) -> f64 {
    ((2.0 * (d * d) as f64 / delta).ln() / (2.0 * n as f64)).sqrt()
}

/// Fraction of i.i.d. size-`n` samples whose normalised confusion matrix leaves the
/// Hoeffding ball around the population matrix, against `δ` plus two binomial standard errors.
pub fn check_concentration(pop: &Population, n: usize, delta: f64, num_trials: usize, seed: u64) -> Result<VerifyReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta {delta} outside (0, 1)")));
    }
    if n == 0 || num_trials == 0 {
        return Err(Error::InvalidArgument("n and num_trials must be positive".into()));
    }
    let population = pop.hard_confusion(None).scale(1.0 / pop.len() as f64)?;
    let bound = hoeffding_bound(pop.d, n, delta);
    let mut devs = (0..num_trials)
        .into_par_iter()
        .map(|r| {
            let mut rng = trial_rng(seed, 0, r);
            let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..pop.len())).collect();
            let c = pop.hard_confusion(Some(&idx)).scale(1.0 / n as f64)?;
            Ok(c.max_abs_diff(&population))
        })
        .collect::<Result<Vec<f64>>>()?;
    let violations = devs.iter().filter(|&&v| v > bound).count();
    let rate = violations as f64 / num_trials as f64;
    let slack = 2.0 * (delta * (1.0 - delta) / num_trials as f64).sqrt();
    devs.sort_by(f64::total_cmp);
    Ok(VerifyReport {
        check: "concentration".into(),
        parameters: json!({ "n": n, "delta": delta, "num_trials": num_trials, "d": pop.d, "population": pop.len(), "seed": seed }),
        statistics: json!({ "bound": bound, "violations": violations, "violation_rate": rate, "slack": slack,
                            "median_deviation": quantile(&devs, 0.5), "p95_deviation": quantile(&devs, 0.95),
                            "max_deviation": devs.last() }),
        tolerance: delta + slack,
        passed: rate <= delta + slack,
    })
}

/// `median |M(Ĉ_n) - M(C)| · sqrt(n)` across `n_ladder` must vary by less than ×2.5.
pub fn check_rate(pop: &Population, spec: &MetricSpec, n_ladder: &[usize], num_trials: usize, seed: u64) -> Result<VerifyReport> {
    spec.validate(pop.d)?;
    let mut report = check_rate_with(pop, |c| spec.evaluate(c), n_ladder, num_trials, seed)?;
    report.parameters["metric"] = json!(spec.kind.name());
    report.parameters["betas"] = json!(spec.betas);
    Ok(report)
}

/// [`check_rate`] for an arbitrary metric of the confusion matrix.
pub fn check_rate_with<F>(pop: &Population, metric: F, n_ladder: &[usize], num_trials: usize, seed: u64) -> Result<VerifyReport>
where
    F: Fn(&SoftConfusionMatrix<f64>) -> Result<f64> + Sync,
{
    if n_ladder.len() < 2 || num_trials == 0 || n_ladder.contains(&0) {
        return Err(Error::InvalidArgument("need two or more positive sample sizes and at least one trial".into()));
    }
    let truth = metric(&pop.hard_confusion(None))?;
    let mut medians = Vec::new();
    for (gi, &n) in n_ladder.iter().enumerate() {
        let mut devs = (0..num_trials)
            .into_par_iter()
            .map(|r| {
                let mut rng = trial_rng(seed, gi, r);
                let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..pop.len())).collect();
                Ok((metric(&pop.hard_confusion(Some(&idx)))? - truth).abs())
            })
            .collect::<Result<Vec<f64>>>()?;
        devs.sort_by(f64::total_cmp);
        medians.push(quantile(&devs, 0.5));
    }
    let normalized: Vec<f64> = medians.iter().zip(n_ladder).map(|(m, &n)| m * (n as f64).sqrt()).collect();
    let hi = normalized.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = normalized.iter().cloned().fold(f64::INFINITY, f64::min);
    let spread = if hi == 0.0 { 1.0 } else if lo == 0.0 { f64::INFINITY } else { hi / lo };
    Ok(VerifyReport {
        check: "rate".into(),
        parameters: json!({ "n_ladder": n_ladder, "num_trials": num_trials, "population": pop.len(), "seed": seed }),
        statistics: json!({ "population_metric": truth, "median_deviation": medians, "normalized_median": normalized,
                            "spread": spread }),
        tolerance: RATE_SPREAD,
        passed: spread < RATE_SPREAD,
    })
}

/// `τ_m(0.2, τ) = min(τ, 1-τ)` and exact interpolation of the five anchors at `T = 0.2`.
pub fn check_tsoi_compat(tau_grid: &[f64]) -> Result<VerifyReport> {
    if tau_grid.is_empty() {
        return Err(Error::Empty("tau grid"));
    }
    let temp = Temperature::new(0.2)?;
    let t = temp.value();
    let mut width_mismatches = 0;
    let mut anchor_err: f64 = 0.0;
    for &tau in tau_grid {
        let p = ThresholdParams::new(tau, temp)?;
        if p.tau_m != tau.min(1.0 - tau) {
            width_mismatches += 1;
        }
        let half = p.tau_m / 2.0;
        for (x, y) in [(0.0, 0.0), (tau - half, t), (tau, 0.5), (tau + half, 1.0 - t), (1.0, 1.0)] {
            anchor_err = anchor_err.max((heaviside_linear(x, tau, temp)? - y).abs());
        }
    }
    Ok(VerifyReport {
        check: "tsoi-compat".into(),
        parameters: json!({ "temperature": t, "grid_size": tau_grid.len(),
                            "tau_min": tau_grid.iter().cloned().fold(f64::INFINITY, f64::min),
                            "tau_max": tau_grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max) }),
        statistics: json!({ "width_mismatches": width_mismatches, "max_anchor_error": anchor_err }),
        tolerance: ANCHOR_TOL,
        passed: width_mismatches == 0 && anchor_err <= ANCHOR_TOL,
    })
}

/// `{0.01, 0.02, ..., 0.99}`.
pub fn default_tau_grid() -> Vec<f64> {
    (1..100).map(|i| i as f64 / 100.0).collect()
}

/// Settings of the surrogate-gradient check on a small random MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheckSpec {
    pub num_batches: usize,
    pub batch_size: usize,
    pub input_dim: usize,
    pub d: usize,
    pub hidden: [usize; 3],
    pub temperature: f64,
    pub seed: u64,
}

impl Default for GradientCheckSpec {
    fn default() -> Self {
        Self { num_batches: 20, batch_size: 16, input_dim: 4, d: 3, hidden: [8, 8, 6], temperature: 0.2, seed: 0 }
    }
}

/// Central differences against reverse-mode gradients of the soft macro F-beta, accuracy and
/// MCC losses with respect to every MLP parameter. Components within `3·eps` of a kink are skipped.
pub fn check_gradients(spec: &GradientCheckSpec) -> Result<VerifyReport> {
    if spec.num_batches == 0 || spec.batch_size == 0 {
        return Err(Error::InvalidArgument("num_batches and batch_size must be positive".into()));
    }
    let temp = Temperature::new(spec.temperature)?;
    let betas: Vec<f64> = (0..spec.d).map(|k| [1.0, 0.5, 2.0][k % 3]).collect();
    let metrics = [MetricSpec::macro_f_beta(betas)?, MetricSpec::accuracy(), MetricSpec::mcc()];
    let mut per_metric = Vec::new();
    let mut all_ok = true;
    for metric in &metrics {
        let mut max_rel: f64 = 0.0;
        let (mut checked, mut skipped, mut flagged) = (0, 0, 0);
        for b in 0..spec.num_batches {
            let mut rng = trial_rng(spec.seed, 0, b);
            let model = MlpParams::init_with_hidden(spec.input_dim, spec.d, spec.hidden, 0.0, rng.gen())?;
            let mut inputs: Vec<Tensor> = model.tensors().cloned().collect();
            // random biases keep ReLU pre-activations away from zero for most units
            for t in inputs.iter_mut().skip(1).step_by(2) {
                t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3));
            }
            let x: Vec<f64> = (0..spec.batch_size * spec.input_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let x = Tensor::matrix(spec.batch_size, spec.input_dim, x)?;
            let labels: Vec<usize> = (0..spec.batch_size).map(|_| rng.gen_range(1..=spec.d)).collect();
            let report = grad_check_many(
                |g, ids| {
                    let bound = BoundParams { nodes: ids.to_vec() };
                    let xn = g.constant(x.clone());
                    let p = model.forward_graph(g, &bound, xn, None)?;
                    let c = soft_confusion(g, p, &labels, temp, false)?;
                    surrogate_loss(g, metric, c)
                },
                &inputs,
                GRAD_EPS,
                GRAD_TOL,
            )?;
            max_rel = max_rel.max(report.max_rel_error());
            checked += report.num_checked();
            skipped += report.num_skipped();
            flagged += report.flagged().count();
        }
        all_ok &= flagged == 0 && checked > 0 && max_rel < GRAD_TOL;
        per_metric.push(json!({ "metric": metric.kind.name(), "max_rel_error": max_rel, "checked": checked,
                                "skipped_near_breakpoint": skipped, "flagged": flagged }));
    }
    let max_rel = per_metric.iter().map(|m| m["max_rel_error"].as_f64().unwrap()).fold(0.0, f64::max);
    Ok(VerifyReport {
        check: "gradcheck".into(),
        parameters: serde_json::to_value(spec)?,
        statistics: json!({ "eps": GRAD_EPS, "max_rel_error": max_rel, "per_metric": per_metric }),
        tolerance: GRAD_TOL,
        passed: all_ok,
    })
}

/// Distribution of `p_(1) - p_(2)` over a population, reported in place of asserting a
/// uniform positive gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub n: usize,
    pub min: f64,
    pub p01: f64,
    pub p05: f64,
    pub median: f64,
    pub mean: f64,
    pub fraction_below_0_01: f64,
}

pub fn top2_gap_summary(probs: &[Vec<f64>]) -> Result<GapSummary> {
    if probs.is_empty() {
        return Err(Error::Empty("probabilities"));
    }
    let mut gaps = probs
        .iter()
        .map(|p| top2(p).map(|(a, b)| p[a] - p[b]))
        .collect::<Result<Vec<f64>>>()?;
    gaps.sort_by(f64::total_cmp);
    let n = gaps.len();
    Ok(GapSummary {
        n,
        min: gaps[0],
        p01: quantile(&gaps, 0.01),
        p05: quantile(&gaps, 0.05),
        median: quantile(&gaps, 0.5),
        mean: gaps.iter().sum::<f64>() / n as f64,
        fraction_below_0_01: gaps.iter().filter(|&&g| g < 0.01).count() as f64 / n as f64,
    })
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}
