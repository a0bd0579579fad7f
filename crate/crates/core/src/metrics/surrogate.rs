//! Graph-connected losses: the soft-set metric surrogates and the CE / Dice baselines.

use crate::diffengine::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::heaviside::Temperature;
use crate::scalar::Scalar;

use super::{MetricKind, MetricSpec, CE_CLAMP, DICE_SMOOTHING};

/// `[n, d]` one-hot matrix of 1-based labels.
pub fn one_hot<S: Scalar>(labels: &[usize], d: usize) -> Result<Tensor<S>> {
    let mut data = vec![S::zero(); labels.len() * d];
    for (i, &y) in labels.iter().enumerate() {
        if y == 0 || y > d {
            return Err(Error::ClassOutOfRange { index: y, d });
        }
        data[i * d + y - 1] = S::one();
    }
    Tensor::matrix(labels.len(), d, data)
}

/// `[d, n]` transposed one-hot matrix, so `Y^T G` accumulates rows by true class.
fn one_hot_t<S: Scalar>(labels: &[usize], d: usize) -> Result<Tensor<S>> {
    let n = labels.len();
    let mut data = vec![S::zero(); n * d];
    for (i, &y) in labels.iter().enumerate() {
        if y == 0 || y > d {
            return Err(Error::ClassOutOfRange { index: y, d });
        }
        data[(y - 1) * n + i] = S::one();
    }
    Tensor::matrix(d, n, data)
}

/// Soft-set confusion matrix `[d, d]` from a `[n, d]` probability node:
/// Heaviside at the dynamic threshold, L1 normalisation, then `Y^T G`.
pub fn soft_confusion<S: Scalar>(
    g: &mut Graph<S>,
    probs: NodeId,
    labels: &[usize],
    temperature: Temperature<S>,
    detach_tau: bool,
) -> Result<NodeId> {
    let (n, d) = g.value(probs).dims2("soft-confusion")?;
    if n == 0 {
        return Err(Error::Empty("soft-confusion batch"));
    }
    if labels.len() != n {
        return Err(Error::LengthMismatch { what: "labels vs batch rows", left: labels.len(), right: n });
    }
    let h = g.heaviside(probs, temperature, detach_tau)?;
    let memberships = g.l1_normalize(h)?;
    let yt = g.constant(one_hot_t(labels, d)?);
    g.matmul(yt, memberships)
}

/// Loss node for `spec` evaluated on a `[d, d]` confusion node.
pub fn surrogate_loss<S: Scalar>(g: &mut Graph<S>, spec: &MetricSpec, confusion: NodeId) -> Result<NodeId> {
    let (d, d2) = g.value(confusion).dims2("surrogate-loss")?;
    if d != d2 {
        return Err(Error::ShapeMismatch { op: "surrogate-loss", lhs: vec![d, d2], rhs: vec![d2, d] });
    }
    spec.validate(d)?;
    let metric = match spec.kind {
        MetricKind::MacroFBeta => macro_f_beta_node(g, confusion, &spec.betas_for::<S>(d))?,
        MetricKind::Accuracy => accuracy_node(g, confusion)?,
        MetricKind::Mcc => mcc_node(g, confusion)?,
    };
    let loss = g.rsub_scalar(S::one(), metric);
    Ok(match spec.kind {
        MetricKind::Mcc => g.scale(loss, S::lit(0.5)),
        _ => loss,
    })
}

/// Per-class `(1+b²) tp / ((1+b²) tp + b² fn + fp)`, averaged.
fn macro_f_beta_node<S: Scalar>(g: &mut Graph<S>, c: NodeId, betas: &[S]) -> Result<NodeId> {
    let tp = g.diag(c)?;
    let rows = g.sum_axis(c, 1)?;
    let rows = g.transpose(rows)?;
    let cols = g.sum_axis(c, 0)?;
    let fn_ = g.sub(rows, tp)?;
    let fp = g.sub(cols, tp)?;
    let b2 = g.constant(Tensor::row(betas.iter().map(|&b| b * b).collect()));
    let one_b2 = g.constant(Tensor::row(betas.iter().map(|&b| S::one() + b * b).collect()));
    let num = g.mul(one_b2, tp)?;
    let weighted_fn = g.mul(b2, fn_)?;
    let den = g.add(num, weighted_fn)?;
    let den = g.add(den, fp)?;
    let f = g.safe_div(num, den)?;
    g.mean(f)
}

fn accuracy_node<S: Scalar>(g: &mut Graph<S>, c: NodeId) -> Result<NodeId> {
    let diag = g.diag(c)?;
    let trace = g.sum(diag);
    let total = g.sum(c);
    g.div(trace, total)
}

fn mcc_node<S: Scalar>(g: &mut Graph<S>, c: NodeId) -> Result<NodeId> {
    let s = g.sum(c);
    let diag = g.diag(c)?;
    let t = g.sum(diag);
    let rows = g.sum_axis(c, 1)?;
    let rows = g.transpose(rows)?;
    let cols = g.sum_axis(c, 0)?;

    let st = g.mul(s, t)?;
    let rc = g.mul(rows, cols)?;
    let rc = g.sum(rc);
    let num = g.sub(st, rc)?;

    let ss = g.mul(s, s)?;
    let rr = g.mul(rows, rows)?;
    let rr = g.sum(rr);
    let cc = g.mul(cols, cols)?;
    let cc = g.sum(cc);
    let a = g.sub(ss, rr)?;
    let b = g.sub(ss, cc)?;
    let ab = g.mul(a, b)?;
    let ab = g.clamp_min(ab, S::zero());
    let den = g.sqrt(ab)?;
    g.safe_div(num, den)
}

/// Mean negative log-likelihood of the true class, with `p_y` floored at 1e-12.
pub fn cross_entropy_loss<S: Scalar>(g: &mut Graph<S>, probs: NodeId, labels: &[usize]) -> Result<NodeId> {
    let (n, d) = g.value(probs).dims2("cross-entropy")?;
    if labels.len() != n {
        return Err(Error::LengthMismatch { what: "labels vs batch rows", left: labels.len(), right: n });
    }
    let y = g.constant(one_hot(labels, d)?);
    let picked = g.mul(probs, y)?;
    let picked = g.sum_axis(picked, 1)?;
    let picked = g.clamp_min(picked, S::lit(CE_CLAMP));
    let logs = g.log(picked)?;
    let mean = g.mean(logs)?;
    Ok(g.neg(mean))
}

/// `1 - mean_k (2 Σ p_k y_k + ε) / (Σ p_k + Σ y_k + ε)`.
pub fn dice_loss_graph<S: Scalar>(g: &mut Graph<S>, probs: NodeId, labels: &[usize]) -> Result<NodeId> {
    let (n, d) = g.value(probs).dims2("dice")?;
    if labels.len() != n {
        return Err(Error::LengthMismatch { what: "labels vs batch rows", left: labels.len(), right: n });
    }
    let y_t = one_hot::<S>(labels, d)?;
    let mut ysum = vec![S::zero(); d];
    for row in y_t.data().chunks(d) {
        for (s, &v) in ysum.iter_mut().zip(row) {
            *s = *s + v;
        }
    }
    let eps = S::lit(DICE_SMOOTHING);
    let y = g.constant(y_t);
    let inter = g.mul(probs, y)?;
    let inter = g.sum_axis(inter, 0)?;
    let num = g.scale(inter, S::lit(2.0));
    let num = g.add_scalar(num, eps);
    let psum = g.sum_axis(probs, 0)?;
    let ysum = g.constant(Tensor::row(ysum.into_iter().map(|v| v + eps).collect()));
    let den = g.add(psum, ysum)?;
    let dice = g.div(num, den)?;
    let mean = g.mean(dice)?;
    Ok(g.rsub_scalar(S::one(), mean))
}
