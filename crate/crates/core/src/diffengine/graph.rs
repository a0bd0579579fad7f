//! Tape-style reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node vector is already a
//! topological order and the backward pass is a single reverse sweep.

use crate::error::{Error, Result};
use crate::heaviside::{kink_side, top2, Temperature, ThresholdParams};
use crate::scalar::Scalar;

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct RowThreshold<S: Scalar> {
    first: usize,
    second: usize,
    params: ThresholdParams<S>,
}

#[derive(Debug, Clone)]
enum Op<S: Scalar> {
    Leaf,
    Constant,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    SafeDiv(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, S),
    AddScalar(NodeId, S),
    Relu(NodeId),
    Dropout(NodeId, Tensor<S>),
    SoftmaxRows(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    SumAxis(NodeId, usize),
    Transpose(NodeId),
    Diag(NodeId),
    Heaviside {
        input: NodeId,
        detach_tau: bool,
        rows: Vec<RowThreshold<S>>,
    },
    L1NormalizeRows(NodeId),
    Pow(NodeId, S),
    Sqrt(NodeId),
    Log(NodeId),
    ClampMin(NodeId, S),
}

#[derive(Debug, Clone)]
struct Node<S: Scalar> {
    op: Op<S>,
    value: Tensor<S>,
}

/// Operand shapes for an elementwise binary op: equal, or one side has a single element.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    LeftScalar,
    RightScalar,
}

/// A dynamically built computation graph. Rebuilt for every mini-batch.
#[derive(Debug, Clone, Default)]
pub struct Graph<S: Scalar = f64> {
    nodes: Vec<Node<S>>,
}

/// Adjoints of every node reachable from a backward root.
#[derive(Debug, Clone)]
pub struct Gradients<S: Scalar = f64> {
    adjoints: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// `None` when the node does not influence the root.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<S>> {
        self.adjoints.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient for `id`, zero-filled to `shape` when the node is disconnected.
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> Tensor<S> {
        self.get(id).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op<S>, value: Tensor<S>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Differentiable input (parameters, or anything a gradient is wanted for).
    pub fn leaf(&mut self, value: Tensor<S>) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> NodeId {
        self.push(Op::Constant, value)
    }

    fn broadcast(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Broadcast> {
        let (sa, sb) = (self.value(a), self.value(b));
        if sa.shape() == sb.shape() {
            Ok(Broadcast::Same)
        } else if sa.is_scalar() {
            Ok(Broadcast::LeftScalar)
        } else if sb.is_scalar() {
            Ok(Broadcast::RightScalar)
        } else {
            Err(Error::ShapeMismatch { op, lhs: sa.shape().to_vec(), rhs: sb.shape().to_vec() })
        }
    }

    fn zip_values(&self, a: NodeId, b: NodeId, mode: Broadcast, f: impl Fn(S, S) -> S) -> Tensor<S> {
        let (ta, tb) = (self.value(a), self.value(b));
        match mode {
            Broadcast::Same => {
                let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
                Tensor::new(ta.shape().to_vec(), data).expect("same shape")
            }
            Broadcast::LeftScalar => {
                let x = ta.data()[0];
                tb.map(|y| f(x, y))
            }
            Broadcast::RightScalar => {
                let y = tb.data()[0];
                ta.map(|x| f(x, y))
            }
        }
    }

    fn binary(&mut self, name: &'static str, a: NodeId, b: NodeId, op: fn(NodeId, NodeId) -> Op<S>, f: impl Fn(S, S) -> S) -> Result<NodeId> {
        let mode = self.broadcast(name, a, b)?;
        let value = self.zip_values(a, b, mode, f);
        Ok(self.push(op(a, b), value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut out = vec![S::zero(); m * n];
        S::gemm(m, k, n, S::one(), self.value(a).data(), self.value(b).data(), S::zero(), &mut out);
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("add", a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("sub", a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("multiply", a, b, Op::Mul, |x, y| x * y)
    }

    /// Elementwise division; any zero in the denominator is an error.
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if let Some(index) = self.value(b).data().iter().position(|v| *v == S::zero()) {
            return Err(Error::ZeroDenominator { op: "divide", index });
        }
        self.binary("divide", a, b, Op::Div, |x, y| x / y)
    }

    /// Elementwise division that yields 0 (with zero gradient) where the denominator is 0.
    pub fn safe_div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("safe-divide", a, b, Op::SafeDiv, |x, y| if y == S::zero() { S::zero() } else { x / y })
    }

    /// `[r, c] + [1, c]`, adding the row vector to every row.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (r, c) = self.value(a).dims2("add-row")?;
        let (br, bc) = self.value(bias).dims2("add-row")?;
        if br != 1 || bc != c {
            return Err(Error::ShapeMismatch {
                op: "add-row",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(bias).shape().to_vec(),
            });
        }
        let mut out = self.value(a).data().to_vec();
        let b = self.value(bias).data();
        for row in out.chunks_mut(c) {
            for (v, &bv) in row.iter_mut().zip(b) {
                *v = *v + bv;
            }
        }
        let value = Tensor::matrix(r, c, out)?;
        Ok(self.push(Op::AddRow(a, bias), value))
    }

    pub fn scale(&mut self, a: NodeId, factor: S) -> NodeId {
        let value = self.value(a).map(|v| v * factor);
        self.push(Op::Scale(a, factor), value)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.scale(a, -S::one())
    }

    pub fn add_scalar(&mut self, a: NodeId, c: S) -> NodeId {
        let value = self.value(a).map(|v| v + c);
        self.push(Op::AddScalar(a, c), value)
    }

    /// `c - a`.
    pub fn rsub_scalar(&mut self, c: S, a: NodeId) -> NodeId {
        let n = self.neg(a);
        self.add_scalar(n, c)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).map(|v| if v > S::zero() { v } else { S::zero() });
        self.push(Op::Relu(a), value)
    }

    /// Multiplies by a pre-sampled mask (already scaled by `1/(1-rate)`).
    pub fn dropout(&mut self, a: NodeId, mask: Tensor<S>) -> Result<NodeId> {
        if mask.shape() != self.value(a).shape() {
            return Err(Error::ShapeMismatch {
                op: "dropout-mask-apply",
                lhs: self.value(a).shape().to_vec(),
                rhs: mask.shape().to_vec(),
            });
        }
        let data = self.value(a).data().iter().zip(mask.data()).map(|(&x, &m)| x * m).collect();
        let value = Tensor::new(mask.shape().to_vec(), data)?;
        Ok(self.push(Op::Dropout(a, mask), value))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.value(a).dims2("softmax")?;
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(c.max(1)) {
            let max = row.iter().copied().fold(S::neg_infinity(), S::max);
            let mut sum = S::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum = sum + *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        let value = Tensor::matrix(r, c, out)?;
        Ok(self.push(Op::SoftmaxRows(a), value))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: S = self.value(a).data().iter().copied().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.value(a).numel();
        if n == 0 {
            return Err(Error::Empty("mean"));
        }
        let s: S = self.value(a).data().iter().copied().sum();
        Ok(self.push(Op::Mean(a), Tensor::scalar(s / S::from_usize_lossy(n))))
    }

    /// Axis 0 sums columns (`[r, c] -> [1, c]`); axis 1 sums rows (`[r, c] -> [r, 1]`).
    pub fn sum_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let (r, c) = self.value(a).dims2("sum-axis")?;
        let data = self.value(a).data();
        let value = match axis {
            0 => {
                let mut out = vec![S::zero(); c];
                for row in data.chunks(c.max(1)) {
                    for (o, &v) in out.iter_mut().zip(row) {
                        *o = *o + v;
                    }
                }
                Tensor::matrix(1, c, out)?
            }
            1 => Tensor::matrix(r, 1, data.chunks(c.max(1)).map(|row| row.iter().copied().sum()).collect())?,
            _ => return Err(Error::InvalidArgument(format!("sum-axis: axis {axis} not in {{0, 1}}"))),
        };
        Ok(self.push(Op::SumAxis(a, axis), value))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let value = self.value(a).transpose()?;
        Ok(self.push(Op::Transpose(a), value))
    }

    /// Diagonal of a square matrix as a `[1, d]` row.
    pub fn diag(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.value(a).dims2("diag")?;
        if r != c {
            return Err(Error::ShapeMismatch { op: "diag", lhs: vec![r, c], rhs: vec![c, r] });
        }
        let data = self.value(a).data();
        let value = Tensor::row((0..r).map(|i| data[i * c + i]).collect());
        Ok(self.push(Op::Diag(a), value))
    }

    /// Piecewise-linear Heaviside applied row-wise at each row's top-2 mean threshold.
    ///
    /// With `detach_tau` the threshold is treated as a constant in the backward pass.
    pub fn heaviside(&mut self, a: NodeId, temperature: Temperature<S>, detach_tau: bool) -> Result<NodeId> {
        let (r, c) = self.value(a).dims2("piecewise-linear-heaviside")?;
        let mut out = Vec::with_capacity(r * c);
        let mut rows = Vec::with_capacity(r);
        for row in self.value(a).data().chunks(c.max(1)) {
            let (first, second) = top2(row)?;
            let tau = (row[first] + row[second]) * S::lit(0.5);
            let params = ThresholdParams::new(tau, temperature)?;
            out.extend(row.iter().map(|&p| params.value(p)));
            rows.push(RowThreshold { first, second, params });
        }
        let value = Tensor::matrix(r, c, out)?;
        Ok(self.push(Op::Heaviside { input: a, detach_tau, rows }, value))
    }

    /// Divides each row by its L1 norm.
    pub fn l1_normalize(&mut self, a: NodeId) -> Result<NodeId> {
        let (r, c) = self.value(a).dims2("l1-normalize")?;
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(c.max(1)) {
            let norm: S = row.iter().map(|v| v.abs()).sum();
            if norm < S::lit(1e-12) {
                return Err(Error::DegenerateNorm(norm.as_f64()));
            }
            for v in row.iter_mut() {
                *v = *v / norm;
            }
        }
        let value = Tensor::matrix(r, c, out)?;
        Ok(self.push(Op::L1NormalizeRows(a), value))
    }

    pub fn pow(&mut self, a: NodeId, exponent: S) -> Result<NodeId> {
        let value = self.value(a).map(|v| v.powf(exponent));
        if !value.all_finite() {
            return Err(Error::InvalidArgument(format!("power {exponent}: non-finite result")));
        }
        Ok(self.push(Op::Pow(a, exponent), value))
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        if let Some(index) = self.value(a).data().iter().position(|v| *v < S::zero()) {
            return Err(Error::InvalidArgument(format!("sqrt: negative input at flat index {index}")));
        }
        let value = self.value(a).map(S::sqrt);
        Ok(self.push(Op::Sqrt(a), value))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        if let Some(index) = self.value(a).data().iter().position(|v| *v <= S::zero()) {
            return Err(Error::InvalidArgument(format!("log: non-positive input at flat index {index}")));
        }
        let value = self.value(a).map(S::ln);
        Ok(self.push(Op::Log(a), value))
    }

    /// `max(a, floor)`; gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: NodeId, floor: S) -> NodeId {
        let value = self.value(a).map(|v| v.max(floor));
        self.push(Op::ClampMin(a, floor), value)
    }

    /// Segment codes of every piecewise node, in node order. Two evaluations with
    /// equal signatures lie on the same linear piece of every kinked op.
    pub fn piecewise_signature(&self) -> Vec<u8> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => sig.extend(self.value(*a).data().iter().map(|&v| u8::from(v > S::zero()))),
                Op::ClampMin(a, floor) => {
                    sig.extend(self.value(*a).data().iter().map(|&v| u8::from(v > *floor)))
                }
                Op::SafeDiv(_, b) => sig.extend(self.value(*b).data().iter().map(|&v| u8::from(v == S::zero()))),
                Op::Sqrt(a) => sig.extend(self.value(*a).data().iter().map(|&v| u8::from(v == S::zero()))),
                Op::Heaviside { input, detach_tau, rows } => {
                    let (_, c) = self.value(*input).dims2("signature").unwrap_or((0, 0));
                    for (row, rt) in self.value(*input).data().chunks(c.max(1)).zip(rows) {
                        sig.push(rt.first as u8);
                        sig.push(rt.second as u8);
                        if !detach_tau {
                            sig.push(kink_side(rt.params.tau) as i8 as u8);
                        }
                        sig.extend(row.iter().map(|&p| rt.params.segment(p).code()));
                    }
                }
                _ => {}
            }
        }
        sig
    }

    /// Reverse sweep from a one-element `root`. Adjoints start at zero on every call.
    pub fn backward(&self, root: NodeId) -> Result<Gradients<S>> {
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Tensor<S>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Tensor::full(root_value.shape(), S::one()));

        for idx in (0..=root.0).rev() {
            let Some(grad) = adj[idx].take() else { continue };
            self.propagate(idx, &grad, &mut adj)?;
            adj[idx] = Some(grad);
        }
        Ok(Gradients { adjoints: adj })
    }

    fn propagate(&self, idx: usize, g: &Tensor<S>, adj: &mut [Option<Tensor<S>>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2("matmul")?;
                let (_, n) = self.value(*b).dims2("matmul")?;
                let bt = self.value(*b).transpose()?;
                let mut da = vec![S::zero(); m * k];
                S::gemm(m, n, k, S::one(), g.data(), bt.data(), S::zero(), &mut da);
                accumulate(adj, *a, Tensor::matrix(m, k, da)?);
                let at = self.value(*a).transpose()?;
                let mut db = vec![S::zero(); k * n];
                S::gemm(k, m, n, S::one(), at.data(), g.data(), S::zero(), &mut db);
                accumulate(adj, *b, Tensor::matrix(k, n, db)?);
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -S::one() } else { S::one() };
                let mode = self.broadcast("add", *a, *b)?;
                accumulate(adj, *a, reduce_to(g, self.value(*a), mode == Broadcast::LeftScalar));
                let gb = reduce_to(g, self.value(*b), mode == Broadcast::RightScalar).map(|v| v * sign);
                accumulate(adj, *b, gb);
            }
            Op::Mul(a, b) => {
                let mode = self.broadcast("multiply", *a, *b)?;
                let ga = self.product_grad(g, *a, *b, mode == Broadcast::LeftScalar);
                let gb = self.product_grad(g, *b, *a, mode == Broadcast::RightScalar);
                accumulate(adj, *a, ga);
                accumulate(adj, *b, gb);
            }
            Op::Div(a, b) | Op::SafeDiv(a, b) => {
                let safe = matches!(node.op, Op::SafeDiv(..));
                let mode = self.broadcast("divide", *a, *b)?;
                let (ta, tb) = (self.value(*a), self.value(*b));
                let n = out.numel();
                let mut ga = vec![S::zero(); n];
                let mut gb = vec![S::zero(); n];
                for i in 0..n {
                    let x = if mode == Broadcast::LeftScalar { ta.data()[0] } else { ta.data()[i] };
                    let y = if mode == Broadcast::RightScalar { tb.data()[0] } else { tb.data()[i] };
                    if safe && y == S::zero() {
                        continue;
                    }
                    ga[i] = g.data()[i] / y;
                    gb[i] = -g.data()[i] * x / (y * y);
                }
                let shape = out.shape().to_vec();
                accumulate(adj, *a, reduce_to(&Tensor::new(shape.clone(), ga)?, ta, mode == Broadcast::LeftScalar));
                accumulate(adj, *b, reduce_to(&Tensor::new(shape, gb)?, tb, mode == Broadcast::RightScalar));
            }
            Op::AddRow(a, bias) => {
                accumulate(adj, *a, g.clone());
                let (_, c) = g.dims2("add-row")?;
                let mut gb = vec![S::zero(); c];
                for row in g.data().chunks(c.max(1)) {
                    for (o, &v) in gb.iter_mut().zip(row) {
                        *o = *o + v;
                    }
                }
                accumulate(adj, *bias, Tensor::row(gb));
            }
            Op::Scale(a, f) => accumulate(adj, *a, g.map(|v| v * *f)),
            Op::AddScalar(a, _) => accumulate(adj, *a, g.clone()),
            Op::Relu(a) => {
                let x = self.value(*a);
                let data = g.data().iter().zip(x.data()).map(|(&gv, &xv)| if xv > S::zero() { gv } else { S::zero() });
                accumulate(adj, *a, Tensor::new(x.shape().to_vec(), data.collect())?);
            }
            Op::Dropout(a, mask) => {
                let data = g.data().iter().zip(mask.data()).map(|(&gv, &m)| gv * m).collect();
                accumulate(adj, *a, Tensor::new(mask.shape().to_vec(), data)?);
            }
            Op::SoftmaxRows(a) => {
                let (_, c) = out.dims2("softmax")?;
                let mut dz = Vec::with_capacity(out.numel());
                for (prow, grow) in out.data().chunks(c.max(1)).zip(g.data().chunks(c.max(1))) {
                    let dot: S = prow.iter().zip(grow).map(|(&p, &gv)| p * gv).sum();
                    dz.extend(prow.iter().zip(grow).map(|(&p, &gv)| p * (gv - dot)));
                }
                accumulate(adj, *a, Tensor::new(out.shape().to_vec(), dz)?);
            }
            Op::Sum(a) => {
                let gv = g.data()[0];
                accumulate(adj, *a, Tensor::full(self.value(*a).shape(), gv));
            }
            Op::Mean(a) => {
                let n = S::from_usize_lossy(self.value(*a).numel());
                accumulate(adj, *a, Tensor::full(self.value(*a).shape(), g.data()[0] / n));
            }
            Op::SumAxis(a, axis) => {
                let (r, c) = self.value(*a).dims2("sum-axis")?;
                let mut data = vec![S::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        data[i * c + j] = if *axis == 0 { g.data()[j] } else { g.data()[i] };
                    }
                }
                accumulate(adj, *a, Tensor::matrix(r, c, data)?);
            }
            Op::Transpose(a) => accumulate(adj, *a, g.transpose()?),
            Op::Diag(a) => {
                let (r, c) = self.value(*a).dims2("diag")?;
                let mut data = vec![S::zero(); r * c];
                for i in 0..r {
                    data[i * c + i] = g.data()[i];
                }
                accumulate(adj, *a, Tensor::matrix(r, c, data)?);
            }
            Op::Heaviside { input, detach_tau, rows } => {
                let x = self.value(*input);
                let (_, c) = x.dims2("piecewise-linear-heaviside")?;
                let mut dp = Vec::with_capacity(x.numel());
                let half = S::lit(0.5);
                for ((prow, grow), rt) in x.data().chunks(c.max(1)).zip(g.data().chunks(c.max(1))).zip(rows) {
                    let start = dp.len();
                    dp.extend(prow.iter().zip(grow).map(|(&p, &gv)| gv * rt.params.slope(p)));
                    if !*detach_tau {
                        let dtau: S = prow.iter().zip(grow).map(|(&p, &gv)| gv * rt.params.tau_derivative(p)).sum();
                        dp[start + rt.first] = dp[start + rt.first] + half * dtau;
                        dp[start + rt.second] = dp[start + rt.second] + half * dtau;
                    }
                }
                accumulate(adj, *input, Tensor::new(x.shape().to_vec(), dp)?);
            }
            Op::L1NormalizeRows(a) => {
                let x = self.value(*a);
                let (_, c) = x.dims2("l1-normalize")?;
                let mut dx = Vec::with_capacity(x.numel());
                for ((xrow, yrow), grow) in x.data().chunks(c.max(1)).zip(out.data().chunks(c.max(1))).zip(g.data().chunks(c.max(1))) {
                    let norm: S = xrow.iter().map(|v| v.abs()).sum();
                    let dot: S = yrow.iter().zip(grow).map(|(&y, &gv)| y * gv).sum();
                    dx.extend(xrow.iter().zip(grow).map(|(&xv, &gv)| (gv - dot * sign(xv)) / norm));
                }
                accumulate(adj, *a, Tensor::new(x.shape().to_vec(), dx)?);
            }
            Op::Pow(a, e) => {
                let x = self.value(*a);
                let data = g.data().iter().zip(x.data()).map(|(&gv, &xv)| {
                    if xv == S::zero() && *e < S::one() {
                        S::zero()
                    } else {
                        gv * *e * xv.powf(*e - S::one())
                    }
                });
                accumulate(adj, *a, Tensor::new(x.shape().to_vec(), data.collect())?);
            }
            Op::Sqrt(a) => {
                let data = g.data().iter().zip(out.data()).map(|(&gv, &y)| {
                    if y == S::zero() {
                        S::zero()
                    } else {
                        gv / (y + y)
                    }
                });
                accumulate(adj, *a, Tensor::new(out.shape().to_vec(), data.collect())?);
            }
            Op::Log(a) => {
                let x = self.value(*a);
                let data = g.data().iter().zip(x.data()).map(|(&gv, &xv)| gv / xv).collect();
                accumulate(adj, *a, Tensor::new(x.shape().to_vec(), data)?);
            }
            Op::ClampMin(a, floor) => {
                let x = self.value(*a);
                let data = g.data().iter().zip(x.data()).map(|(&gv, &xv)| if xv > *floor { gv } else { S::zero() });
                accumulate(adj, *a, Tensor::new(x.shape().to_vec(), data.collect())?);
            }
        }
        Ok(())
    }

    /// Gradient of an elementwise product w.r.t. `target`, whose partner operand is `other`.
    fn product_grad(&self, g: &Tensor<S>, target: NodeId, other: NodeId, reduce: bool) -> Tensor<S> {
        let o = self.value(other);
        let broadcast_other = o.numel() != g.numel();
        let local = g.data().iter().enumerate().map(|(i, &gv)| gv * if broadcast_other { o.data()[0] } else { o.data()[i] });
        let full = Tensor::new(g.shape().to_vec(), local.collect()).expect("gradient shape");
        reduce_to(&full, self.value(target), reduce)
    }
}

#[inline]
fn sign<S: Scalar>(v: S) -> S {
    if v > S::zero() {
        S::one()
    } else if v < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

/// Sums a broadcast gradient back onto a one-element operand.
fn reduce_to<S: Scalar>(g: &Tensor<S>, target: &Tensor<S>, reduce: bool) -> Tensor<S> {
    if reduce {
        let s: S = g.data().iter().copied().sum();
        Tensor::full(target.shape(), s)
    } else {
        g.clone()
    }
}

fn accumulate<S: Scalar>(adj: &mut [Option<Tensor<S>>], id: NodeId, g: Tensor<S>) {
    match &mut adj[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
