//! Central finite-difference check of analytic gradients.

use serde::Serialize;

use crate::error::Result;
use crate::scalar::Scalar;

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;

/// Denominator floor for the relative error, so components whose true
/// gradient is ~0 are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComponentStatus {
    Ok,
    Flagged,
    /// A kinked op changes segment within `3·eps` of the point; not compared.
    NearBreakpoint,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComponentCheck {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub status: ComponentStatus,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub eps: f64,
    pub rel_tol: f64,
    pub components: Vec<ComponentCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.checked().map(|c| c.rel_error).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> impl Iterator<Item = &ComponentCheck> {
        self.components.iter().filter(|c| c.status != ComponentStatus::NearBreakpoint)
    }

    pub fn num_checked(&self) -> usize {
        self.checked().count()
    }

    pub fn num_skipped(&self) -> usize {
        self.components.len() - self.num_checked()
    }

    pub fn flagged(&self) -> impl Iterator<Item = &ComponentCheck> {
        self.components.iter().filter(|c| c.status == ComponentStatus::Flagged)
    }

    /// No flagged components and at least one component actually compared.
    pub fn passed(&self) -> bool {
        self.flagged().next().is_none() && self.num_checked() > 0
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Checks `d f / d x` for a single input tensor.
pub fn grad_check<S, F>(f: F, x: &Tensor<S>, eps: S, rel_tol: f64) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&mut Graph<S>, NodeId) -> Result<NodeId>,
{
    grad_check_many(|g, ids| f(g, ids[0]), std::slice::from_ref(x), eps, rel_tol)
}

/// Checks the gradient of a scalar graph with respect to every component of every input.
pub fn grad_check_many<S, F>(f: F, inputs: &[Tensor<S>], eps: S, rel_tol: f64) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&mut Graph<S>, &[NodeId]) -> Result<NodeId>,
{
    let eval = |xs: &[Tensor<S>]| -> Result<(S, Vec<u8>)> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = xs.iter().map(|x| g.leaf(x.clone())).collect();
        let root = f(&mut g, &ids)?;
        let v = g.value(root).item().ok_or_else(|| crate::error::Error::NonScalarRoot(g.value(root).shape().to_vec()))?;
        Ok((v, g.piecewise_signature()))
    };

    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|x| g.leaf(x.clone())).collect();
    let root = f(&mut g, &ids)?;
    let base_sig = g.piecewise_signature();
    let grads = g.backward(root)?;

    let mut components = Vec::new();
    let mut work: Vec<Tensor<S>> = inputs.to_vec();
    let three = S::lit(3.0);
    for (input, id) in ids.iter().enumerate() {
        let analytic = grads.get_or_zeros(*id, inputs[input].shape());
        for index in 0..inputs[input].numel() {
            let orig = inputs[input].data()[index];
            let mut at = |v: S| -> Result<(S, Vec<u8>)> {
                work[input].data_mut()[index] = v;
                let r = eval(&work);
                work[input].data_mut()[index] = orig;
                r
            };
            let (fp, sp) = at(orig + eps)?;
            let (fm, sm) = at(orig - eps)?;
            let (_, sp3) = at(orig + three * eps)?;
            let (_, sm3) = at(orig - three * eps)?;
            let near = [&sp, &sm, &sp3, &sm3].iter().any(|s| **s != base_sig);

            let numeric = ((fp - fm) / (eps + eps)).as_f64();
            let a = analytic.data()[index].as_f64();
            let rel_error = relative_error(a, numeric);
            let status = if near {
                ComponentStatus::NearBreakpoint
            } else if rel_error > rel_tol || !rel_error.is_finite() {
                ComponentStatus::Flagged
            } else {
                ComponentStatus::Ok
            };
            components.push(ComponentCheck { input, index, analytic: a, numeric, rel_error, status });
        }
    }
    Ok(GradCheckReport { eps: eps.as_f64(), rel_tol, components })
}
