//! Tape-based reverse-mode differentiation over 2-D arrays.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the node
//! list is a valid topological order for the backward pass. Every node holds
//! a `rows x cols` block of values; scalars are `1 x 1`.
//!
//! Shape errors inside the primitive ops are programmer errors and panic.
//! Callers that accept external input (network forward passes, the
//! evaluator) validate shapes before building the graph.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// The axis that a reduction collapses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Reduce over rows: `r x c -> 1 x c`.
    Rows,
    /// Reduce over columns: `r x c -> r x 1`.
    Cols,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sqrt(Var),
    Clip(Var, f64, f64),
    Minimum(Var, Var),
    Maximum(Var, Var),
    Sum(Var),
    SumAxis(Var, Axis),
    LogSumExp(Var, Axis),
    SoftExtreme(Var, Axis, f64),
    NormRows(Var),
    Columns(Var, Vec<usize>),
    HCat(Vec<Var>),
    VCat(Vec<Var>),
    Reshape(Var),
    RepeatRows(Var, usize),
    SelectRows(Var, Var, Vec<bool>),
}

struct Node {
    value: Vec<f64>,
    rows: usize,
    cols: usize,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("shapes {a:?} and {b:?} do not broadcast")
        }
    };
    (dim(a.0, b.0), dim(a.1, b.1))
}

#[inline]
fn bidx(shape: (usize, usize), i: usize, j: usize) -> usize {
    let r = if shape.0 == 1 { 0 } else { i };
    let c = if shape.1 == 1 { 0 } else { j };
    r * shape.1 + c
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted log-sum-exp of a strided slice.
fn lse(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, rows: usize, cols: usize, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MatMul(a, b)
            | Op::Minimum(a, b)
            | Op::Maximum(a, b)
            | Op::SelectRows(a, b, _) => self.rg(*a) || self.rg(*b),
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::Clip(a, _, _)
            | Op::Sum(a)
            | Op::SumAxis(a, _)
            | Op::LogSumExp(a, _)
            | Op::SoftExtreme(a, _, _)
            | Op::NormRows(a)
            | Op::Columns(a, _)
            | Op::Reshape(a)
            | Op::RepeatRows(a, _) => self.rg(*a),
            Op::HCat(parts) | Op::VCat(parts) => parts.iter().any(|p| self.rg(*p)),
        };
        self.nodes.push(Node { value, rows, cols, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    /// Copies a tensor into the graph; gradients are tracked when the
    /// tensor requires them.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let v = self.push(t.values().to_vec(), t.rows(), t.cols(), Op::Leaf);
        self.nodes[v.0].requires_grad = t.requires_grad();
        v
    }

    pub fn constant(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Var {
        assert_eq!(rows * cols, values.len(), "constant shape mismatch");
        self.push(values, rows, cols, Op::Leaf)
    }

    pub fn variable(&mut self, rows: usize, cols: usize, values: Vec<f64>) -> Var {
        let v = self.constant(rows, cols, values);
        self.nodes[v.0].requires_grad = true;
        v
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(1, 1, vec![value])
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn item(&self, v: Var) -> f64 {
        let n = self.node(v);
        assert_eq!(n.value.len(), 1, "item() on a non-scalar node");
        n.value[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last `backward` root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let (r, c) = broadcast_shape(sa, sb);
        let (va, vb) = (&self.node(a).value, &self.node(b).value);
        let mut out = Vec::with_capacity(r * c);
        if sa == sb {
            out.extend(va.iter().zip(vb).map(|(x, y)| f(*x, *y)));
        } else {
            for i in 0..r {
                for j in 0..c {
                    out.push(f(va[bidx(sa, i, j)], vb[bidx(sb, i, j)]));
                }
            }
        }
        self.push(out, r, c, op)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.shape(a);
        let out = self.node(a).value.iter().map(|x| f(*x)).collect();
        self.push(out, r, c, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, f64::min, Op::Minimum(a, b))
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, f64::max, Op::Maximum(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| k * x, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| x + k, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn clip(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        assert!(lo <= hi, "clip bounds reversed");
        self.unary(a, |x| x.clamp(lo, hi), Op::Clip(a, lo, hi))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimensions differ");
        let (va, vb) = (&self.node(a).value, &self.node(b).value);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = va[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &vb[p * n..(p + 1) * n];
                for (o, y) in row.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        self.push(out, m, n, Op::MatMul(a, b))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.node(a).value.iter().sum();
        self.push(vec![s], 1, 1, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.node(a).value.len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn sum_axis(&mut self, a: Var, axis: Axis) -> Var {
        let (r, c) = self.shape(a);
        let v = &self.node(a).value;
        match axis {
            Axis::Rows => {
                let mut out = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        out[j] += v[i * c + j];
                    }
                }
                self.push(out, 1, c, Op::SumAxis(a, axis))
            }
            Axis::Cols => {
                let out = (0..r).map(|i| v[i * c..(i + 1) * c].iter().sum()).collect();
                self.push(out, r, 1, Op::SumAxis(a, axis))
            }
        }
    }

    /// Stabilized `log(sum(exp(x)))` along an axis.
    pub fn logsumexp(&mut self, a: Var, axis: Axis) -> Var {
        let (r, c) = self.shape(a);
        let v = &self.node(a).value;
        match axis {
            Axis::Rows => {
                let out = (0..c).map(|j| lse((0..r).map(|i| v[i * c + j]))).collect();
                self.push(out, 1, c, Op::LogSumExp(a, axis))
            }
            Axis::Cols => {
                let out =
                    (0..r).map(|i| lse(v[i * c..(i + 1) * c].iter().copied())).collect();
                self.push(out, r, 1, Op::LogSumExp(a, axis))
            }
        }
    }

    /// Entropic soft minimum `-tau * log(mean(exp(-x / tau)))` along an axis.
    pub fn softmin(&mut self, a: Var, axis: Axis, tau: f64) -> Var {
        self.soft_extreme(a, axis, -tau)
    }

    /// Entropic soft maximum `tau * log(mean(exp(x / tau)))` along an axis.
    pub fn softmax(&mut self, a: Var, axis: Axis, tau: f64) -> Var {
        self.soft_extreme(a, axis, tau)
    }

    // `m + t * log(mean(exp((x - m) / t)))` with `m` the max (t > 0) or min
    // (t < 0) of the lane. A constant lane maps to exactly that constant.
    fn soft_extreme(&mut self, a: Var, axis: Axis, t: f64) -> Var {
        assert!(t != 0.0 && t.is_finite(), "temperature must be finite and non-zero");
        let (r, c) = self.shape(a);
        let v = &self.node(a).value;
        let lane = |idx: &mut dyn Iterator<Item = f64>| -> f64 {
            let xs: Vec<f64> = idx.collect();
            let m = if t > 0.0 {
                xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            } else {
                xs.iter().copied().fold(f64::INFINITY, f64::min)
            };
            if !m.is_finite() {
                return m;
            }
            let s: f64 = xs.iter().map(|x| ((x - m) / t).exp()).sum();
            m + t * (s.ln() - (xs.len() as f64).ln())
        };
        let (out, shape) = match axis {
            Axis::Rows => ((0..c).map(|j| lane(&mut (0..r).map(|i| v[i * c + j]))).collect(), (1, c)),
            Axis::Cols => ((0..r).map(|i| lane(&mut v[i * c..(i + 1) * c].iter().copied())).collect(), (r, 1)),
        };
        self.push(out, shape.0, shape.1, Op::SoftExtreme(a, axis, t))
    }

    fn axis_len(&self, a: Var, axis: Axis) -> usize {
        let (r, c) = self.shape(a);
        match axis {
            Axis::Rows => r,
            Axis::Cols => c,
        }
    }

    /// Euclidean norm of each row: `r x c -> r x 1`.
    pub fn norm_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let v = &self.node(a).value;
        let out = (0..r)
            .map(|i| v[i * c..(i + 1) * c].iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        self.push(out, r, 1, Op::NormRows(a))
    }

    pub fn columns(&mut self, a: Var, idx: &[usize]) -> Var {
        let (r, c) = self.shape(a);
        assert!(idx.iter().all(|&j| j < c), "column index out of range");
        let v = &self.node(a).value;
        let mut out = Vec::with_capacity(r * idx.len());
        for i in 0..r {
            for &j in idx {
                out.push(v[i * c + j]);
            }
        }
        self.push(out, r, idx.len(), Op::Columns(a, idx.to_vec()))
    }

    pub fn column(&mut self, a: Var, j: usize) -> Var {
        self.columns(a, &[j])
    }

    pub fn hcat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let r = self.shape(parts[0]).0;
        assert!(parts.iter().all(|p| self.shape(*p).0 == r), "hcat row mismatch");
        let c: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for p in parts {
                let (_, pc) = self.shape(*p);
                out.extend_from_slice(&self.node(*p).value[i * pc..(i + 1) * pc]);
            }
        }
        self.push(out, r, c, Op::HCat(parts.to_vec()))
    }

    pub fn vcat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let c = self.shape(parts[0]).1;
        assert!(parts.iter().all(|p| self.shape(*p).1 == c), "vcat column mismatch");
        let mut out = Vec::new();
        let mut r = 0;
        for p in parts {
            out.extend_from_slice(&self.node(*p).value);
            r += self.shape(*p).0;
        }
        self.push(out, r, c, Op::VCat(parts.to_vec()))
    }

    /// Reinterprets the row-major values with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(r * c, rows * cols, "reshape changes element count");
        let out = self.node(a).value.clone();
        self.push(out, rows, cols, Op::Reshape(a))
    }

    /// Repeats every row `n` times consecutively: `r x c -> (r*n) x c`.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Var {
        let (r, c) = self.shape(a);
        let v = &self.node(a).value;
        let mut out = Vec::with_capacity(r * n * c);
        for i in 0..r {
            for _ in 0..n {
                out.extend_from_slice(&v[i * c..(i + 1) * c]);
            }
        }
        self.push(out, r * n, c, Op::RepeatRows(a, n))
    }

    /// Row-wise choice: rows where `take_first` is set come from `a`, the
    /// rest from `b`.
    pub fn select_rows(&mut self, take_first: Vec<bool>, a: Var, b: Var) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!((r, c), self.shape(b), "select_rows shape mismatch");
        assert_eq!(take_first.len(), r);
        let (va, vb) = (&self.node(a).value, &self.node(b).value);
        let mut out = Vec::with_capacity(r * c);
        for (i, first) in take_first.iter().enumerate() {
            let src = if *first { va } else { vb };
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        self.push(out, r, c, Op::SelectRows(a, b, take_first))
    }

    /// Reverse sweep from a scalar root. Afterwards [`Graph::grad`] returns
    /// `d root / d v` for every node that depends on a tracked leaf.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.shape(root) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward requires a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for id in (0..=root.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(gout) = grads[id].take() else { continue };
            self.propagate(id, &gout, &mut grads);
            grads[id] = Some(gout);
        }
        self.grads = grads;
        Ok(())
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(v) {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let g = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(g);
    }

    /// Adds a broadcast-shaped upstream gradient into operand `v`, reducing
    /// over broadcast dimensions.
    fn acc_broadcast(
        &self,
        grads: &mut [Option<Vec<f64>>],
        v: Var,
        out: (usize, usize),
        gout: &[f64],
        scale: impl Fn(usize) -> f64,
    ) {
        let sv = self.shape(v);
        self.acc(grads, v, |g| {
            if sv == out {
                for (k, gi) in g.iter_mut().enumerate() {
                    *gi += gout[k] * scale(k);
                }
            } else {
                for i in 0..out.0 {
                    for j in 0..out.1 {
                        let k = i * out.1 + j;
                        g[bidx(sv, i, j)] += gout[k] * scale(k);
                    }
                }
            }
        });
    }

    fn propagate(&self, id: usize, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = (node.rows, node.cols);
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc_broadcast(grads, *a, out, gout, |_| 1.0);
                self.acc_broadcast(grads, *b, out, gout, |_| 1.0);
            }
            Op::Sub(a, b) => {
                self.acc_broadcast(grads, *a, out, gout, |_| 1.0);
                self.acc_broadcast(grads, *b, out, gout, |_| -1.0);
            }
            Op::Mul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (va, vb) = (self.value(*a), self.value(*b));
                let c = out.1;
                self.acc_broadcast(grads, *a, out, gout, |k| vb[bidx(sb, k / c, k % c)]);
                self.acc_broadcast(grads, *b, out, gout, |k| va[bidx(sa, k / c, k % c)]);
            }
            Op::Minimum(a, b) | Op::Maximum(a, b) => {
                let is_min = matches!(node.op, Op::Minimum(..));
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (va, vb) = (self.value(*a), self.value(*b));
                let c = out.1;
                let pick_a = |k: usize| {
                    let x = va[bidx(sa, k / c, k % c)];
                    let z = vb[bidx(sb, k / c, k % c)];
                    if is_min {
                        x <= z
                    } else {
                        x >= z
                    }
                };
                self.acc_broadcast(grads, *a, out, gout, |k| if pick_a(k) { 1.0 } else { 0.0 });
                self.acc_broadcast(grads, *b, out, gout, |k| if pick_a(k) { 0.0 } else { 1.0 });
            }
            Op::Neg(a) => self.acc(grads, *a, |g| {
                g.iter_mut().zip(gout).for_each(|(gi, go)| *gi -= go)
            }),
            Op::Scale(a, k) => self.acc(grads, *a, |g| {
                g.iter_mut().zip(gout).for_each(|(gi, go)| *gi += k * go)
            }),
            Op::AddScalar(a) | Op::Reshape(a) => self.acc(grads, *a, |g| {
                g.iter_mut().zip(gout).for_each(|(gi, go)| *gi += go)
            }),
            Op::Tanh(a) => self.acc(grads, *a, |g| {
                for k in 0..g.len() {
                    g[k] += gout[k] * (1.0 - y[k] * y[k]);
                }
            }),
            Op::Sigmoid(a) => self.acc(grads, *a, |g| {
                for k in 0..g.len() {
                    g[k] += gout[k] * y[k] * (1.0 - y[k]);
                }
            }),
            Op::Softplus(a) => {
                let x = self.value(*a);
                self.acc(grads, *a, |g| {
                    for k in 0..g.len() {
                        g[k] += gout[k] * sigmoid(x[k]);
                    }
                })
            }
            Op::Exp(a) => self.acc(grads, *a, |g| {
                for k in 0..g.len() {
                    g[k] += gout[k] * y[k];
                }
            }),
            Op::Log(a) => {
                let x = self.value(*a);
                self.acc(grads, *a, |g| {
                    for k in 0..g.len() {
                        g[k] += gout[k] / x[k];
                    }
                })
            }
            Op::Square(a) => {
                let x = self.value(*a);
                self.acc(grads, *a, |g| {
                    for k in 0..g.len() {
                        g[k] += gout[k] * 2.0 * x[k];
                    }
                })
            }
            Op::Sqrt(a) => self.acc(grads, *a, |g| {
                for k in 0..g.len() {
                    if y[k] > 0.0 {
                        g[k] += gout[k] * 0.5 / y[k];
                    }
                }
            }),
            Op::Clip(a, lo, hi) => {
                let x = self.value(*a);
                self.acc(grads, *a, |g| {
                    for k in 0..g.len() {
                        if x[k] >= *lo && x[k] <= *hi {
                            g[k] += gout[k];
                        }
                    }
                })
            }
            Op::MatMul(a, b) => {
                let (m, kk) = self.shape(*a);
                let n = self.shape(*b).1;
                let (va, vb) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, |g| {
                    for i in 0..m {
                        let go = &gout[i * n..(i + 1) * n];
                        for p in 0..kk {
                            let brow = &vb[p * n..(p + 1) * n];
                            g[i * kk + p] += go.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                self.acc(grads, *b, |g| {
                    for i in 0..m {
                        let go = &gout[i * n..(i + 1) * n];
                        for p in 0..kk {
                            let x = va[i * kk + p];
                            if x == 0.0 {
                                continue;
                            }
                            let grow = &mut g[p * n..(p + 1) * n];
                            for (gi, o) in grow.iter_mut().zip(go) {
                                *gi += x * o;
                            }
                        }
                    }
                });
            }
            Op::Sum(a) => self.acc(grads, *a, |g| g.iter_mut().for_each(|gi| *gi += gout[0])),
            Op::SumAxis(a, axis) => {
                let (r, c) = self.shape(*a);
                let axis = *axis;
                self.acc(grads, *a, |g| {
                    for i in 0..r {
                        for j in 0..c {
                            g[i * c + j] += match axis {
                                Axis::Rows => gout[j],
                                Axis::Cols => gout[i],
                            };
                        }
                    }
                })
            }
            Op::LogSumExp(a, axis) => {
                let (r, c) = self.shape(*a);
                let x = self.value(*a);
                let axis = *axis;
                self.acc(grads, *a, |g| {
                    for i in 0..r {
                        for j in 0..c {
                            let o = match axis {
                                Axis::Rows => j,
                                Axis::Cols => i,
                            };
                            if y[o].is_finite() {
                                g[i * c + j] += gout[o] * (x[i * c + j] - y[o]).exp();
                            }
                        }
                    }
                })
            }
            Op::SoftExtreme(a, axis, t) => {
                let (r, c) = self.shape(*a);
                let x = self.value(*a);
                let (axis, t) = (*axis, *t);
                let n = self.axis_len(*a, axis) as f64;
                self.acc(grads, *a, |g| {
                    for i in 0..r {
                        for j in 0..c {
                            let o = match axis {
                                Axis::Rows => j,
                                Axis::Cols => i,
                            };
                            if y[o].is_finite() {
                                g[i * c + j] += gout[o] * ((x[i * c + j] - y[o]) / t).exp() / n;
                            }
                        }
                    }
                })
            }
            Op::NormRows(a) => {
                let (r, c) = self.shape(*a);
                let x = self.value(*a);
                self.acc(grads, *a, |g| {
                    for i in 0..r {
                        if y[i] > 0.0 {
                            for j in 0..c {
                                g[i * c + j] += gout[i] * x[i * c + j] / y[i];
                            }
                        }
                    }
                })
            }
            Op::Columns(a, idx) => {
                let (r, c) = self.shape(*a);
                let w = idx.len();
                self.acc(grads, *a, |g| {
                    for i in 0..r {
                        for (jj, &j) in idx.iter().enumerate() {
                            g[i * c + j] += gout[i * w + jj];
                        }
                    }
                })
            }
            Op::HCat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let (r, pc) = self.shape(*p);
                    self.acc(grads, *p, |g| {
                        for i in 0..r {
                            for j in 0..pc {
                                g[i * pc + j] += gout[i * out.1 + offset + j];
                            }
                        }
                    });
                    offset += pc;
                }
            }
            Op::VCat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    self.acc(grads, *p, |g| {
                        for k in 0..len {
                            g[k] += gout[offset + k];
                        }
                    });
                    offset += len;
                }
            }
            Op::RepeatRows(a, n) => {
                let (r, c) = self.shape(*a);
                self.acc(grads, *a, |g| {
                    for i in 0..r {
                        for rep in 0..*n {
                            let src = (i * n + rep) * c;
                            for j in 0..c {
                                g[i * c + j] += gout[src + j];
                            }
                        }
                    }
                })
            }
            Op::SelectRows(a, b, mask) => {
                let c = out.1;
                for (v, want) in [(*a, true), (*b, false)] {
                    self.acc(grads, v, |g| {
                        for (i, m) in mask.iter().enumerate() {
                            if *m == want {
                                for j in 0..c {
                                    g[i * c + j] += gout[i * c + j];
                                }
                            }
                        }
                    });
                }
            }
        }
    }
}
