//! Soft-set class membership and confusion-matrix construction.
//!
//! Class indices in this module's public API are 1-based (`1..=d`).
//! Raw matrix accessors (`get`, `as_slice`) use 0-based storage positions.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heaviside::{heaviside_linear_vec, Temperature};
use crate::scalar::Scalar;

/// Tolerance on `sum(p) == 1` for probability and membership vectors.
pub const SIMPLEX_TOL: f64 = 1e-9;

fn check_simplex<S: Scalar>(v: &[S]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Empty("probability vector"));
    }
    let mut sum = S::zero();
    for &x in v {
        if !(x >= S::zero() && x <= S::one()) {
            return Err(Error::InvalidArgument(format!("component {x} outside [0, 1]")));
        }
        sum = sum + x;
    }
    if (sum - S::one()).abs() > S::lit(SIMPLEX_TOL) {
        return Err(Error::InvalidArgument(format!("components sum to {sum}, expected 1")));
    }
    Ok(())
}

/// Point on the probability simplex (softmax output).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector<S: Scalar = f64>(Vec<S>);

impl<S: Scalar> ProbVector<S> {
    pub fn new(components: Vec<S>) -> Result<Self> {
        check_simplex(&components)?;
        Ok(Self(components))
    }

    pub fn into_inner(self) -> Vec<S> {
        self.0
    }
}

impl<S: Scalar> Deref for ProbVector<S> {
    type Target = [S];
    fn deref(&self) -> &[S] {
        &self.0
    }
}

/// Class-membership vector; one-hot for hard predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabel<S: Scalar = f64>(Vec<S>);

impl<S: Scalar> SoftLabel<S> {
    pub fn new(memberships: Vec<S>) -> Result<Self> {
        check_simplex(&memberships)?;
        Ok(Self(memberships))
    }

    pub fn one_hot(class: usize, d: usize) -> Result<Self> {
        if class == 0 || class > d {
            return Err(Error::ClassOutOfRange { index: class, d });
        }
        let mut v = vec![S::zero(); d];
        v[class - 1] = S::one();
        Ok(Self(v))
    }

    /// 1-based argmax, ties to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0) + 1
    }

    pub fn into_inner(self) -> Vec<S> {
        self.0
    }
}

impl<S: Scalar> Deref for SoftLabel<S> {
    type Target = [S];
    fn deref(&self) -> &[S] {
        &self.0
    }
}

/// 0-based argmax with ties to the lowest index.
pub fn argmax<S: Scalar>(v: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// One-hot encoding of the argmax.
pub fn predict_hard<S: Scalar>(p: &[S]) -> SoftLabel<S> {
    let mut v = vec![S::zero(); p.len()];
    if !p.is_empty() {
        v[argmax(p)] = S::one();
    }
    SoftLabel(v)
}

/// Soft-set membership: the piecewise-linear Heaviside at the dynamic
/// threshold, L1-normalised.
pub fn predict_soft<S: Scalar>(p: &[S], temperature: Temperature<S>) -> Result<SoftLabel<S>> {
    let mut h = heaviside_linear_vec(p, temperature)?;
    let norm: S = h.iter().map(|v| v.abs()).sum();
    if norm < S::lit(1e-12) {
        return Err(Error::DegenerateNorm(norm.as_f64()));
    }
    for v in &mut h {
        *v = *v / norm;
    }
    Ok(SoftLabel(h))
}

/// `d×d` matrix with `yhat` in row `y` and zeros elsewhere.
pub fn phi<S: Scalar>(y: usize, yhat: &[S], d: usize) -> Result<SoftConfusionMatrix<S>> {
    if y == 0 || y > d {
        return Err(Error::ClassOutOfRange { index: y, d });
    }
    if yhat.len() != d {
        return Err(Error::LengthMismatch { what: "membership vector vs d", left: yhat.len(), right: d });
    }
    let mut m = SoftConfusionMatrix::zeros(d);
    m.accumulate(y, yhat)?;
    Ok(m)
}

/// Sum of `phi(label, prediction)` over the examples.
pub fn confusion<S: Scalar, L: AsRef<[S]>>(
    labels: &[usize],
    predictions: &[L],
    d: usize,
) -> Result<SoftConfusionMatrix<S>> {
    if labels.is_empty() || predictions.is_empty() {
        return Err(Error::Empty("confusion input"));
    }
    if labels.len() != predictions.len() {
        return Err(Error::LengthMismatch {
            what: "labels vs predictions",
            left: labels.len(),
            right: predictions.len(),
        });
    }
    let mut m = SoftConfusionMatrix::zeros(d);
    for (&y, pred) in labels.iter().zip(predictions) {
        m.accumulate(y, pred.as_ref())?;
    }
    Ok(m)
}

impl<S: Scalar> AsRef<[S]> for SoftLabel<S> {
    fn as_ref(&self) -> &[S] {
        &self.0
    }
}

impl<S: Scalar> AsRef<[S]> for ProbVector<S> {
    fn as_ref(&self) -> &[S] {
        &self.0
    }
}

/// Dense `d×d` confusion mass; row = true class, column = predicted class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftConfusionMatrix<S: Scalar = f64> {
    d: usize,
    entries: Vec<S>,
    count: usize,
}

impl<S: Scalar> SoftConfusionMatrix<S> {
    pub fn zeros(d: usize) -> Self {
        Self { d, entries: vec![S::zero(); d * d], count: 0 }
    }

    /// Builds a matrix from explicit rows; `count` is set to the rounded total mass.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let d = rows.len();
        if d == 0 {
            return Err(Error::Empty("confusion rows"));
        }
        let mut entries = Vec::with_capacity(d * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::LengthMismatch { what: "confusion row", left: row.len(), right: d });
            }
            for &v in row {
                if !(v >= S::zero()) || !v.is_finite() {
                    return Err(Error::InvalidArgument(format!("confusion entry {v} is negative or non-finite")));
                }
            }
            entries.extend_from_slice(row);
        }
        let total: S = entries.iter().copied().sum();
        let count = total.round().to_usize().unwrap_or(0);
        Ok(Self { d, entries, count })
    }

    /// Adds one example's membership vector to row `y` (1-based).
    pub fn accumulate(&mut self, y: usize, yhat: &[S]) -> Result<()> {
        if y == 0 || y > self.d {
            return Err(Error::ClassOutOfRange { index: y, d: self.d });
        }
        if yhat.len() != self.d {
            return Err(Error::LengthMismatch { what: "membership vector vs d", left: yhat.len(), right: self.d });
        }
        let row = &mut self.entries[(y - 1) * self.d..y * self.d];
        for (c, &v) in row.iter_mut().zip(yhat) {
            *c = *c + v;
        }
        self.count += 1;
        Ok(())
    }

    /// Entry-wise sum, for merging per-shard partial matrices.
    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.d != self.d {
            return Err(Error::LengthMismatch { what: "confusion dimension", left: self.d, right: other.d });
        }
        for (a, &b) in self.entries.iter_mut().zip(&other.entries) {
            *a = *a + b;
        }
        self.count += other.count;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of contributing examples.
    pub fn count(&self) -> usize {
        self.count
    }

    /// 0-based storage access.
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> S {
        self.entries[row * self.d + col]
    }

    pub fn as_slice(&self) -> &[S] {
        &self.entries
    }

    pub fn rows(&self) -> Vec<Vec<S>> {
        self.entries.chunks(self.d).map(<[S]>::to_vec).collect()
    }

    pub fn total(&self) -> S {
        self.entries.iter().copied().sum()
    }

    pub fn trace(&self) -> S {
        (0..self.d).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sums(&self) -> Vec<S> {
        self.entries.chunks(self.d).map(|r| r.iter().copied().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<S> {
        (0..self.d).map(|j| (0..self.d).map(|i| self.get(i, j)).sum()).collect()
    }

    /// Multiplies every entry by `factor`; `count` is unchanged.
    pub fn scale(&self, factor: S) -> Result<Self> {
        if !(factor > S::zero()) {
            return Err(Error::InvalidArgument(format!("scale factor {factor} must be positive")));
        }
        Ok(Self {
            d: self.d,
            entries: self.entries.iter().map(|&v| v * factor).collect(),
            count: self.count,
        })
    }

    /// Largest absolute entry-wise difference.
    pub fn max_abs_diff(&self, other: &Self) -> S {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(&a, &b)| (a - b).abs())
            .fold(S::zero(), S::max)
    }
}

/// One-versus-rest counts for a single class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryCardinalities<S: Scalar = f64> {
    pub tp: S,
    pub fn_: S,
    pub fp: S,
    pub tn: S,
}

impl<S: Scalar> BinaryCardinalities<S> {
    pub fn total(&self) -> S {
        self.tp + self.fn_ + self.fp + self.tn
    }
}

pub fn binary_cardinalities<S: Scalar>(c: &SoftConfusionMatrix<S>, k: usize) -> Result<BinaryCardinalities<S>> {
    let d = c.dim();
    if k == 0 || k > d {
        return Err(Error::ClassOutOfRange { index: k, d });
    }
    let k = k - 1;
    let tp = c.get(k, k);
    let row: S = (0..d).map(|j| c.get(k, j)).sum();
    let col: S = (0..d).map(|i| c.get(i, k)).sum();
    let fn_ = row - tp;
    let fp = col - tp;
    let mut tn = S::zero();
    for i in (0..d).filter(|&i| i != k) {
        for j in (0..d).filter(|&j| j != k) {
            tn = tn + c.get(i, j);
        }
    }
    Ok(BinaryCardinalities { tp, fn_, fp, tn })
}

/// Free-function form of [`SoftConfusionMatrix::scale`].
pub fn scale<S: Scalar>(c: &SoftConfusionMatrix<S>, factor: S) -> Result<SoftConfusionMatrix<S>> {
    c.scale(factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn t(v: f64) -> Temperature {
        Temperature::new(v).unwrap()
    }

    fn sample_c() -> SoftConfusionMatrix {
        SoftConfusionMatrix::from_rows(&[vec![5.0, 1.0, 0.0], vec![2.0, 3.0, 1.0], vec![0.0, 0.0, 8.0]]).unwrap()
    }

    #[test]
    fn vectors_validate() {
        assert!(ProbVector::new(vec![0.5, 0.5]).is_ok());
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(vec![1.2, -0.2]).is_err());
        assert!(SoftLabel::<f64>::one_hot(3, 2).is_err());
    }

    #[test]
    fn hard_prediction() {
        assert_eq!(&*predict_hard(&[0.1, 0.7, 0.2]), &[0.0, 1.0, 0.0]);
        assert_eq!(&*predict_hard(&[0.5, 0.5]), &[1.0, 0.0]);
        assert_eq!(&*predict_hard(&[1.0, 0.0, 0.0]), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn soft_prediction() {
        let g = predict_soft(&[0.7, 0.2, 0.1], t(0.2)).unwrap();
        let h = heaviside_linear_vec(&[0.7, 0.2, 0.1], t(0.2)).unwrap();
        let s: f64 = h.iter().sum();
        assert_abs_diff_eq!(s, 1.0821, epsilon = 1e-4);
        for (a, b) in g.iter().zip([0.7536, 0.1643, 0.0821]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-4);
        }
        assert_abs_diff_eq!(g.iter().sum::<f64>(), 1.0, epsilon = 1e-12);

        for temp in [0.4, 0.2, 1e-3] {
            assert_eq!(&*predict_soft(&[1.0, 0.0], t(temp)).unwrap(), &[1.0, 0.0]);
        }
        let near = predict_soft(&[0.6, 0.4], t(1e-6)).unwrap();
        assert!((near[0] - 1.0).abs() < 1e-3 && near[1] < 1e-3);
    }

    #[test]
    fn phi_examples() {
        let m = phi(2, &[0.3, 0.7], 2).unwrap();
        assert_eq!(m.rows(), vec![vec![0.0, 0.0], vec![0.3, 0.7]]);
        let m = phi(1, &[1.0, 0.0, 0.0], 3).unwrap();
        assert_eq!(m.get(0, 0), 1.0);
        assert_eq!(m.total(), 1.0);
        let m = phi(1, &[0.0, 0.0, 1.0], 3).unwrap();
        assert_eq!(m.get(0, 2), 1.0);
        assert!(matches!(phi(3, &[0.5, 0.5], 2), Err(Error::ClassOutOfRange { .. })));
        assert!(matches!(phi(0, &[0.5, 0.5], 2), Err(Error::ClassOutOfRange { .. })));
    }

    #[test]
    fn confusion_examples() {
        let preds = vec![vec![0.9, 0.1], vec![0.6, 0.4], vec![0.2, 0.8]];
        let c = confusion(&[1, 2, 2], &preds, 2).unwrap();
        let rows = c.rows();
        assert_abs_diff_eq!(rows[0][0], 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(rows[0][1], 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(rows[1][0], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(rows[1][1], 1.2, epsilon = 1e-12);
        assert_eq!(c.count(), 3);

        let eye = confusion(&[1, 2], &[vec![1.0, 0.0], vec![0.0, 1.0]], 2).unwrap();
        assert_eq!(eye.rows(), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);

        let one = confusion(&[1], &[vec![0.5, 0.5]], 2).unwrap();
        assert_eq!(one.rows(), vec![vec![0.5, 0.5], vec![0.0, 0.0]]);

        assert!(matches!(confusion::<f64, Vec<f64>>(&[], &[], 2), Err(Error::Empty(_))));
        assert!(matches!(confusion(&[1, 2], &[vec![1.0, 0.0]], 2), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn cardinality_examples() {
        let c = sample_c();
        let k1 = binary_cardinalities(&c, 1).unwrap();
        assert_eq!((k1.tp, k1.fn_, k1.fp, k1.tn), (5.0, 1.0, 2.0, 12.0));
        let k3 = binary_cardinalities(&c, 3).unwrap();
        assert_eq!((k3.tp, k3.fn_, k3.fp, k3.tn), (8.0, 0.0, 1.0, 11.0));
        let eye = SoftConfusionMatrix::from_rows(&[vec![4.0, 0.0, 0.0], vec![0.0, 4.0, 0.0], vec![0.0, 0.0, 4.0]]).unwrap();
        for k in 1..=3 {
            let b = binary_cardinalities(&eye, k).unwrap();
            assert_eq!((b.tp, b.fn_, b.fp, b.tn), (4.0, 0.0, 0.0, 8.0));
        }
        assert!(binary_cardinalities(&c, 4).is_err());
    }

    #[test]
    fn scaling() {
        let c = SoftConfusionMatrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap();
        assert_eq!(scale(&c, 0.25).unwrap().rows(), vec![vec![0.5, 0.0], vec![0.0, 0.5]]);
        assert_eq!(scale(&c, 1.0).unwrap(), c);
        let c = SoftConfusionMatrix::from_rows(&[vec![0.9, 0.1], vec![0.8, 1.2]]).unwrap();
        let s = scale(&c, 1.0 / 3.0).unwrap();
        for (a, b) in s.as_slice().iter().zip([0.3, 0.0333, 0.2667, 0.4]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-4);
        }
        assert!(c.scale(0.0).is_err());
    }

    fn simplex_point(d: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.001f64..1.0, d).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn soft_preserves_argmax(p in (2usize..8).prop_flat_map(simplex_point), temp in 1e-4f64..0.4) {
            let (a, b) = crate::heaviside::top2(&p).unwrap();
            prop_assume!(p[a] - p[b] > 1e-9);
            let g = predict_soft(&p, t(temp)).unwrap();
            prop_assert_eq!(argmax(&g), argmax(&p));
            prop_assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn mass_is_conserved(
            rows in proptest::collection::vec((1usize..=4, simplex_point(4)), 1..40)
        ) {
            let labels: Vec<usize> = rows.iter().map(|r| r.0).collect();
            let preds: Vec<Vec<f64>> = rows.iter().map(|r| r.1.clone()).collect();
            let c = confusion(&labels, &preds, 4).unwrap();
            prop_assert!((c.total() - labels.len() as f64).abs() < 1e-6);
            let sums = c.row_sums();
            for k in 1..=4 {
                let count = labels.iter().filter(|&&y| y == k).count() as f64;
                prop_assert!((sums[k - 1] - count).abs() < 1e-6);
                let b = binary_cardinalities(&c, k).unwrap();
                prop_assert!((b.total() - c.total()).abs() < 1e-6);
            }
        }

        #[test]
        fn one_hot_confusion_is_integer(labels in proptest::collection::vec((1usize..=3, 1usize..=3), 1..30)) {
            let ys: Vec<usize> = labels.iter().map(|l| l.0).collect();
            let preds: Vec<SoftLabel> = labels.iter().map(|l| SoftLabel::one_hot(l.1, 3).unwrap()).collect();
            let c = confusion(&ys, &preds, 3).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    let expected = labels.iter().filter(|l| l.0 == i + 1 && l.1 == j + 1).count() as f64;
                    prop_assert_eq!(c.get(i, j), expected);
                }
            }
        }
    }
}
