use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use super::*;
use crate::error::Error;
use crate::heaviside::Temperature;

fn row(v: &[f64]) -> Tensor {
    Tensor::row(v.to_vec())
}

#[test]
fn matmul_dot() {
    let mut g = Graph::new();
    let a = g.constant(row(&[1.0, 2.0]));
    let b = g.constant(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[11.0]);
    assert_eq!(g.value(c).shape(), &[1, 1]);
}

#[test]
fn relu_and_softmax_values() {
    let mut g = Graph::new();
    let x = g.constant(row(&[-1.0, 0.0, 2.0]));
    let r = g.relu(x);
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
    let z = g.constant(row(&[0.0, 0.0]));
    let s = g.softmax(z).unwrap();
    assert_eq!(g.value(s).data(), &[0.5, 0.5]);
}

#[test]
fn shape_errors_name_the_op() {
    let mut g = Graph::new();
    let a = g.constant(row(&[1.0, 2.0]));
    let b = g.constant(row(&[1.0, 2.0, 3.0]));
    match g.matmul(a, b) {
        Err(Error::ShapeMismatch { op, lhs, rhs }) => {
            assert_eq!(op, "matmul");
            assert_eq!(lhs, vec![1, 2]);
            assert_eq!(rhs, vec![1, 3]);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(g.add(a, b), Err(Error::ShapeMismatch { op: "add", .. })));
}

#[test]
fn divide_by_zero_needs_guard() {
    let mut g = Graph::new();
    let a = g.leaf(row(&[1.0, 2.0]));
    let b = g.leaf(row(&[0.0, 4.0]));
    assert!(matches!(g.div(a, b), Err(Error::ZeroDenominator { index: 0, .. })));
    let q = g.safe_div(a, b).unwrap();
    assert_eq!(g.value(q).data(), &[0.0, 0.5]);
    let s = g.sum(q);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(a).unwrap().data(), &[0.0, 0.25]);
    assert_eq!(grads.get(b).unwrap().data(), &[0.0, -2.0 / 16.0]);
}

#[test]
fn sum_of_squares_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(row(&[1.0, 2.0]));
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn softmax_pick_first_gradient() {
    // d p0 / d z = p0 (e0 - p) = [0.25, -0.25] at z = 0
    let mut g = Graph::new();
    let z = g.leaf(row(&[0.0, 0.0]));
    let p = g.softmax(z).unwrap();
    let pick = g.constant(row(&[1.0, 0.0]));
    let masked = g.mul(p, pick).unwrap();
    let root = g.sum(masked);
    let grads = g.backward(root).unwrap();
    let d = grads.get(z).unwrap().data();
    assert_abs_diff_eq!(d[0], 0.25, epsilon = 1e-15);
    assert_abs_diff_eq!(d[1], -0.25, epsilon = 1e-15);
}

#[test]
fn relu_inactive_segment_has_zero_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::scalar(-1.0));
    let r = g.relu(x);
    let grads = g.backward(r).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[0.0]);
}

#[test]
fn non_scalar_root_rejected() {
    let mut g = Graph::new();
    let x = g.leaf(row(&[1.0, 2.0]));
    assert!(matches!(g.backward(x), Err(Error::NonScalarRoot(_))));
}

#[test]
fn backward_is_repeatable() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::from_rows(&[vec![0.3, -0.2, 0.9], vec![1.1, 0.4, -0.7]]).unwrap());
    let p = g.softmax(x).unwrap();
    let h = g.heaviside(p, Temperature::new(0.2).unwrap(), false).unwrap();
    let n = g.l1_normalize(h).unwrap();
    let l = g.log(n).unwrap();
    let s = g.sum(l);
    let a = g.backward(s).unwrap();
    let b = g.backward(s).unwrap();
    assert_eq!(a.get(x).unwrap(), b.get(x).unwrap());
}

#[test]
fn quadratic_grad_check_is_exact() {
    let report = grad_check(
        |g, x| {
            let sq = g.mul(x, x)?;
            Ok(g.sum(sq))
        },
        &Tensor::row(vec![3.0]),
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.passed());
    assert!(report.max_rel_error() < 1e-8);
}

#[test]
fn heaviside_on_breakpoint_is_skipped() {
    // p = 0.5 is exactly tau for the 1-column threshold row built below,
    // and p = 0.25 sits on the lower segment boundary at T = 0.2.
    let report = grad_check(
        |g, x| {
            let h = g.heaviside(x, Temperature::new(0.2)?, true)?;
            Ok(g.sum(h))
        },
        &Tensor::row(vec![0.25, 0.75]),
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.components.iter().all(|c| c.status == ComponentStatus::NearBreakpoint));
    assert!(!report.passed());
}

#[test]
fn chain_rule_matches_composed_jacobians() {
    // f(g(x)) = log(sum(exp-normalised x) * 3) == log 3 for any x, so the gradient vanishes.
    let mut g = Graph::new();
    let x = g.leaf(row(&[0.1, -0.4, 2.0]));
    let p = g.softmax(x).unwrap();
    let s = g.sum(p);
    let s3 = g.scale(s, 3.0);
    let l = g.log(s3).unwrap();
    let grads = g.backward(l).unwrap();
    for v in grads.get(x).unwrap().data() {
        assert!(v.abs() < 1e-15);
    }
}

fn all_ops_loss(g: &mut Graph, ids: &[NodeId], detach: bool) -> crate::error::Result<NodeId> {
    let (x, w, b) = (ids[0], ids[1], ids[2]);
    let h = g.matmul(x, w)?;
    let h = g.add_row(h, b)?;
    let r = g.relu(h);
    let mask = Tensor::from_rows(&[vec![2.0, 0.0, 2.0], vec![2.0, 2.0, 0.0]])?;
    let r = g.dropout(r, mask)?;
    let r = g.add(r, h)?;
    let p = g.softmax(r)?;
    let hv = g.heaviside(p, Temperature::new(0.15)?, detach)?;
    let n = g.l1_normalize(hv)?;
    let t = g.transpose(n)?;
    let c = g.matmul(t, n)?;
    let dg = g.diag(c)?;
    let cs = g.sum_axis(c, 0)?;
    let rs = g.sum_axis(c, 1)?;
    let rs = g.transpose(rs)?;
    let q = g.div(dg, cs)?;
    let q2 = g.safe_div(dg, rs)?;
    let q = g.sub(q, q2)?;
    let sq = g.pow(cs, 1.5)?;
    let sr = g.sqrt(sq)?;
    let m = g.mul(q, sr)?;
    let lg = g.add_scalar(cs, 1.0);
    let lg = g.log(lg)?;
    let lg = g.clamp_min(lg, -10.0);
    let m = g.add(m, lg)?;
    let mean = g.mean(m)?;
    let total = g.sum(m);
    let half = g.scale(total, 0.5);
    let out = g.mul(mean, half)?;
    Ok(g.rsub_scalar(1.0, out))
}

#[test]
fn every_op_passes_grad_check() {
    let x = Tensor::from_rows(&[vec![0.3, -1.2], vec![0.8, 0.5]]).unwrap();
    let w = Tensor::from_rows(&[vec![0.7, -0.3, 0.2], vec![0.4, 0.9, -0.6]]).unwrap();
    let b = Tensor::row(vec![0.05, -0.1, 0.3]);
    let report = grad_check_many(|g, ids| all_ops_loss(g, ids, false), &[x, w, b], 1e-5, 1e-4).unwrap();
    assert!(report.passed(), "{:?}", report.flagged().collect::<Vec<_>>());
    assert!(report.num_checked() >= 8);
}

#[test]
fn detached_threshold_uses_segment_slopes_only() {
    let temp = Temperature::new(0.2).unwrap();
    let p = [0.6, 0.3, 0.1];
    let mut g = Graph::new();
    let x = g.leaf(row(&p));
    let h = g.heaviside(x, temp, true).unwrap();
    let s = g.sum(h);
    let grads = g.backward(s).unwrap();
    let params = crate::heaviside::ThresholdParams::new(0.45, temp).unwrap();
    for (gv, pv) in grads.get(x).unwrap().data().iter().zip(p) {
        assert_abs_diff_eq!(*gv, params.slope(pv), epsilon = 1e-12);
    }
}

proptest! {
    #[test]
    fn smooth_ops_match_finite_differences(v in proptest::collection::vec(-2.0f64..2.0, 6)) {
        let x = Tensor::matrix(2, 3, v).unwrap();
        let report = grad_check(|g, x| {
            let p = g.softmax(x)?;
            let e = g.add_scalar(p, 0.5);
            let l = g.log(e)?;
            let sq = g.mul(l, p)?;
            let s = g.sum_axis(sq, 1)?;
            let s = g.pow(s, 2.0)?;
            g.mean(s)
        }, &x, 1e-5, 1e-4).unwrap();
        prop_assert!(report.passed(), "{:?}", report.flagged().collect::<Vec<_>>());
    }

    #[test]
    fn heaviside_gradient_through_threshold(v in proptest::collection::vec(-2.0f64..2.0, 4), temp in 0.01f64..0.39) {
        let x = Tensor::matrix(1, 4, v).unwrap();
        let weights = Tensor::row(vec![1.0, -2.0, 0.5, 3.0]);
        let report = grad_check(|g, x| {
            let p = g.softmax(x)?;
            let h = g.heaviside(p, Temperature::new(temp)?, false)?;
            let w = g.constant(weights.clone());
            let m = g.mul(h, w)?;
            Ok(g.sum(m))
        }, &x, 1e-5, 1e-4).unwrap();
        prop_assert!(report.flagged().next().is_none(), "{:?}", report.flagged().collect::<Vec<_>>());
    }
}
