//! Confusion-matrix metrics (hard or soft) and the baseline losses.
//!
//! Every function here works on any [`SoftConfusionMatrix`], so the same code
//! scores integer confusion matrices and soft-set ones. The graph-connected
//! training losses live in [`surrogate`].

pub mod surrogate;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::softset::{binary_cardinalities, SoftConfusionMatrix};

pub use surrogate::{cross_entropy_loss, dice_loss_graph, soft_confusion, surrogate_loss};

/// Smoothing constant of the soft-Dice baseline.
pub const DICE_SMOOTHING: f64 = 1e-7;

/// Probability floor before the logarithm in cross-entropy.
pub const CE_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    MacroFBeta,
    Accuracy,
    Mcc,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::MacroFBeta => "macro_f_beta",
            MetricKind::Accuracy => "accuracy",
            MetricKind::Mcc => "mcc",
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "macro_f_beta" | "macro_f1" | "f1" | "f_beta" => Ok(MetricKind::MacroFBeta),
            "accuracy" | "acc" => Ok(MetricKind::Accuracy),
            "mcc" => Ok(MetricKind::Mcc),
            other => Err(Error::InvalidArgument(format!("unknown metric {other:?}"))),
        }
    }
}

/// Which metric to evaluate or surrogate. `betas` is only used by Macro F-beta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub kind: MetricKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub betas: Vec<f64>,
}

impl MetricSpec {
    pub fn macro_f1(d: usize) -> Self {
        Self { kind: MetricKind::MacroFBeta, betas: vec![1.0; d] }
    }

    pub fn macro_f_beta(betas: Vec<f64>) -> Result<Self> {
        let spec = Self { kind: MetricKind::MacroFBeta, betas };
        spec.validate(spec.betas.len())?;
        Ok(spec)
    }

    pub fn accuracy() -> Self {
        Self { kind: MetricKind::Accuracy, betas: Vec::new() }
    }

    pub fn mcc() -> Self {
        Self { kind: MetricKind::Mcc, betas: Vec::new() }
    }

    /// Betas must match `d` and be positive. An empty beta list means F1 for every class.
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.kind != MetricKind::MacroFBeta || self.betas.is_empty() {
            return Ok(());
        }
        if self.betas.len() != d {
            return Err(Error::LengthMismatch { what: "betas vs classes", left: self.betas.len(), right: d });
        }
        match self.betas.iter().find(|b| !(**b > 0.0) || !b.is_finite()) {
            Some(&b) => Err(Error::InvalidBeta(b)),
            None => Ok(()),
        }
    }

    pub fn betas_for<S: Scalar>(&self, d: usize) -> Vec<S> {
        if self.betas.is_empty() {
            vec![S::one(); d]
        } else {
            self.betas.iter().map(|&b| S::lit(b)).collect()
        }
    }

    pub fn evaluate<S: Scalar>(&self, c: &SoftConfusionMatrix<S>) -> Result<S> {
        self.validate(c.dim())?;
        match self.kind {
            MetricKind::MacroFBeta => macro_f_beta(c, &self.betas_for(c.dim())),
            MetricKind::Accuracy => accuracy(c),
            MetricKind::Mcc => mcc(c),
        }
    }

    /// `1 - M` for F-beta and accuracy, `(1 - M)/2` for MCC; always in `[0, 1]`.
    pub fn loss_from_value<S: Scalar>(&self, m: S) -> S {
        match self.kind {
            MetricKind::Mcc => (S::one() - m) * S::lit(0.5),
            _ => S::one() - m,
        }
    }
}

#[inline]
fn ratio_or_zero<S: Scalar>(num: S, den: S) -> S {
    if den == S::zero() {
        S::zero()
    } else {
        num / den
    }
}

/// `(precision, recall)` of class `k` (1-based); empty denominators give 0.
pub fn precision_recall<S: Scalar>(c: &SoftConfusionMatrix<S>, k: usize) -> Result<(S, S)> {
    let b = binary_cardinalities(c, k)?;
    Ok((ratio_or_zero(b.tp, b.tp + b.fp), ratio_or_zero(b.tp, b.tp + b.fn_)))
}

pub fn f_beta_class<S: Scalar>(c: &SoftConfusionMatrix<S>, k: usize, beta: S) -> Result<S> {
    if !(beta > S::zero()) {
        return Err(Error::InvalidBeta(beta.as_f64()));
    }
    let (p, r) = precision_recall(c, k)?;
    let b2 = beta * beta;
    Ok(ratio_or_zero((S::one() + b2) * p * r, b2 * p + r))
}

/// Unweighted mean of per-class F-beta, class `k` using `betas[k-1]`.
pub fn macro_f_beta<S: Scalar>(c: &SoftConfusionMatrix<S>, betas: &[S]) -> Result<S> {
    let d = c.dim();
    if betas.len() != d {
        return Err(Error::LengthMismatch { what: "betas vs classes", left: betas.len(), right: d });
    }
    let mut total = S::zero();
    for (k, &beta) in betas.iter().enumerate() {
        total = total + f_beta_class(c, k + 1, beta)?;
    }
    Ok(total / S::from_usize_lossy(d))
}

pub fn accuracy<S: Scalar>(c: &SoftConfusionMatrix<S>) -> Result<S> {
    let total = c.total();
    if !(total > S::zero()) {
        return Err(Error::ZeroMass);
    }
    Ok(c.trace() / total)
}

/// Multiclass Matthews correlation (the R_K statistic); 0 when undefined.
pub fn mcc<S: Scalar>(c: &SoftConfusionMatrix<S>) -> Result<S> {
    let s = c.total();
    if !(s > S::zero()) {
        return Err(Error::ZeroMass);
    }
    let t = c.trace();
    let rows = c.row_sums();
    let cols = c.col_sums();
    let rc: S = rows.iter().zip(&cols).map(|(&r, &k)| r * k).sum();
    let rr: S = rows.iter().map(|&r| r * r).sum();
    let cc: S = cols.iter().map(|&k| k * k).sum();
    let num = s * t - rc;
    let den = ((s * s - rr) * (s * s - cc)).max(S::zero()).sqrt();
    Ok(ratio_or_zero(num, den))
}

/// Per-class precision, recall and F-beta with support (row mass).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_beta: f64,
    pub beta: f64,
    pub support: f64,
}

pub fn class_reports<S: Scalar>(c: &SoftConfusionMatrix<S>, betas: &[S]) -> Result<Vec<ClassReport>> {
    let rows = c.row_sums();
    (1..=c.dim())
        .map(|k| {
            let beta = betas.get(k - 1).copied().unwrap_or_else(S::one);
            let (p, r) = precision_recall(c, k)?;
            Ok(ClassReport {
                class: k,
                precision: p.as_f64(),
                recall: r.as_f64(),
                f_beta: f_beta_class(c, k, beta)?.as_f64(),
                beta: beta.as_f64(),
                support: rows[k - 1].as_f64(),
            })
        })
        .collect()
}

/// Macro F-beta, accuracy and MCC of one confusion matrix plus the per-class breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub macro_f_beta: f64,
    pub accuracy: f64,
    pub mcc: f64,
    pub per_class: Vec<ClassReport>,
}

pub fn summarize<S: Scalar>(c: &SoftConfusionMatrix<S>, betas: &[S]) -> Result<MetricSummary> {
    Ok(MetricSummary {
        macro_f_beta: macro_f_beta(c, betas)?.as_f64(),
        accuracy: accuracy(c)?.as_f64(),
        mcc: mcc(c)?.as_f64(),
        per_class: class_reports(c, betas)?,
    })
}

/// Mean of `-ln max(p_y, 1e-12)`; labels are 1-based.
pub fn cross_entropy<S: Scalar, P: AsRef<[S]>>(p_batch: &[P], labels: &[usize]) -> Result<S> {
    check_batch(p_batch.len(), labels.len())?;
    let floor = S::lit(CE_CLAMP);
    let mut total = S::zero();
    for (p, &y) in p_batch.iter().zip(labels) {
        let p = p.as_ref();
        if y == 0 || y > p.len() {
            return Err(Error::ClassOutOfRange { index: y, d: p.len() });
        }
        total = total - p[y - 1].max(floor).ln();
    }
    Ok(total / S::from_usize_lossy(labels.len()))
}

/// Smoothed multiclass soft-Dice loss on raw probabilities.
pub fn dice_loss<S: Scalar, P: AsRef<[S]>>(p_batch: &[P], labels: &[usize]) -> Result<S> {
    check_batch(p_batch.len(), labels.len())?;
    let d = p_batch[0].as_ref().len();
    let eps = S::lit(DICE_SMOOTHING);
    let mut inter = vec![S::zero(); d];
    let mut psum = vec![S::zero(); d];
    let mut ysum = vec![S::zero(); d];
    for (p, &y) in p_batch.iter().zip(labels) {
        let p = p.as_ref();
        if y == 0 || y > d || p.len() != d {
            return Err(Error::ClassOutOfRange { index: y, d });
        }
        for k in 0..d {
            psum[k] = psum[k] + p[k];
        }
        inter[y - 1] = inter[y - 1] + p[y - 1];
        ysum[y - 1] = ysum[y - 1] + S::one();
    }
    let two = S::lit(2.0);
    let mean: S = (0..d).map(|k| (two * inter[k] + eps) / (psum[k] + ysum[k] + eps)).sum::<S>() / S::from_usize_lossy(d);
    Ok(S::one() - mean)
}

fn check_batch(n: usize, labels: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Empty("prediction batch"));
    }
    if n != labels {
        return Err(Error::LengthMismatch { what: "predictions vs labels", left: n, right: labels });
    }
    Ok(())
}
