use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::params::{ParamSet, ParamVars};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Elementwise nonlinearities supported by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Tanh,
    LeakyRelu(f64),
    Softplus,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
        }
    }

    /// First derivative σ′(x).
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Softplus => sigmoid(x),
        }
    }

    /// Second derivative σ″(x); zero almost everywhere for piecewise-linear units.
    pub fn second_derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity | Activation::LeakyRelu(_) => 0.0,
            Activation::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Softplus => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
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

#[derive(Debug, Clone)]
enum Op {
    Param,
    Input(&'static str),
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    AddRow { a: Var, row: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Act(Var, Activation),
    ActDeriv(Var, Activation),
    Square(Var),
    Sqrt(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    SliceCols { a: Var, start: usize },
    ConcatCols(Vec<Var>),
    SumRows(Var),
    Sum(Var),
    Mean(Var),
    RepeatRows(Var),
    Transpose(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only expression graph. Nodes are stored in creation order, which
/// is a topological order, so the backward pass is a reverse sweep.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, left: &Tensor, right: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: left.shape(),
        right: right.shape(),
    }
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Registers every tensor of `params` as a differentiable leaf.
    pub fn params(&mut self, params: &ParamSet) -> ParamVars {
        let vars = params
            .tensors()
            .map(|t| (self.push(t.clone(), Op::Param), t.len()))
            .collect();
        ParamVars::new(vars)
    }

    /// Adds a non-parameter leaf. The label is kept so structural checks can
    /// ask which data a graph was built from.
    pub fn input(&mut self, label: &'static str, value: Tensor) -> Var {
        self.push(value, Op::Input(label))
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.input("constant", value)
    }

    /// Labels of all input leaves, in creation order.
    pub fn input_labels(&self) -> Vec<&'static str> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Input(l) => Some(l),
                _ => None,
            })
            .collect()
    }

    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let value = self.value(a).matmul_t(ta, self.value(b), tb)?;
        Ok(self.push(value, Op::MatMul { a, b, ta, tb }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(mismatch("add_row", av, rv));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow { a, row }))
    }

    /// `x · w + b` with `w` shaped `in × out` and `b` shaped `1 × out`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch(op, av, bv));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a))
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Var {
        let v = self.value(a).map(|x| act.apply(x));
        self.push(v, Op::Act(a, act))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Tanh)
    }

    /// σ′(a) as a differentiable expression.
    pub fn activation_derivative(&mut self, a: Var, act: Activation) -> Var {
        let v = self.value(a).map(|x| act.derivative(x));
        self.push(v, Op::ActDeriv(a, act))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::sqrt);
        if !v.is_finite() {
            return Err(TensorError::NonFinite("sqrt"));
        }
        Ok(self.push(v, Op::Sqrt(a)))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::ln);
        if !v.is_finite() {
            return Err(TensorError::NonFinite("log"));
        }
        Ok(self.push(v, Op::Log(a)))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        self.push(v, Op::Softmax(a))
    }

    /// Row-wise log-softmax, computed stably from logits.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        self.push(v, Op::LogSoftmax(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        if start > end || end > av.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "slice_cols",
                left: av.shape(),
                right: (start, end),
            });
        }
        let v = av.slice_cols(start, end);
        Ok(self.push(v, Op::SliceCols { a, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_cols(&tensors)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    /// Sums each row, giving an `m × 1` column.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = (0..av.rows()).map(|r| av.row(r).iter().sum()).collect();
        let v = Tensor::new(av.rows(), 1, data).expect("column shape");
        self.push(v, Op::SumRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar_tensor(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let n = av.len().max(1) as f64;
        let v = Tensor::scalar_tensor(av.sum() / n);
        self.push(v, Op::Mean(a))
    }

    /// Tiles a `1 × n` row into `m × n`.
    pub fn repeat_rows(&mut self, a: Var, m: usize) -> Result<Var> {
        let av = self.value(a);
        if av.rows() != 1 {
            return Err(TensorError::ShapeMismatch {
                op: "repeat_rows",
                left: av.shape(),
                right: (1, av.cols()),
            });
        }
        let mut data = Vec::with_capacity(m * av.cols());
        for _ in 0..m {
            data.extend_from_slice(av.data());
        }
        let v = Tensor::new(m, av.cols(), data)?;
        Ok(self.push(v, Op::RepeatRows(a)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = self.value(root);
        if root_value.shape() != (1, 1) {
            return Err(TensorError::NonScalar(root_value.shape()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::scalar_tensor(1.0));

        for idx in (0..=root.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.propagate(node, &upstream, &mut grads)?;
            grads[idx] = Some(upstream);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, up: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let mut acc = |v: Var, g: Tensor| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        };
        match &node.op {
            Op::Param | Op::Input(_) => {}
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                // C = op(A) op(B)
                let ga = match (ta, tb) {
                    (false, false) => up.matmul_t(false, bv, true)?,
                    (false, true) => up.matmul_t(false, bv, false)?,
                    (true, false) => bv.matmul_t(false, up, true)?,
                    (true, true) => bv.matmul_t(true, up, true)?,
                };
                let gb = match (ta, tb) {
                    (false, false) => av.matmul_t(true, up, false)?,
                    (false, true) => up.matmul_t(true, av, false)?,
                    (true, false) => av.matmul_t(false, up, false)?,
                    (true, true) => up.matmul_t(true, av, true)?,
                };
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::AddRow { a, row } => {
                let mut g_row = vec![0.0; up.cols()];
                for r in 0..up.rows() {
                    for (s, x) in g_row.iter_mut().zip(up.row(r)) {
                        *s += x;
                    }
                }
                acc(*a, up.clone());
                acc(*row, Tensor::row_vector(g_row));
            }
            Op::Add(a, b) => {
                acc(*a, up.clone());
                acc(*b, up.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, up.clone());
                acc(*b, up.map(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(*a, up.zip_map(self.value(*b), |g, y| g * y));
                acc(*b, up.zip_map(self.value(*a), |g, x| g * x));
            }
            Op::Scale(a, c) => acc(*a, up.map(|g| g * c)),
            Op::AddScalar(a) => acc(*a, up.clone()),
            Op::Act(a, act) => {
                let act = *act;
                acc(*a, up.zip_map(self.value(*a), |g, x| g * act.derivative(x)));
            }
            Op::ActDeriv(a, act) => {
                let act = *act;
                if !matches!(act, Activation::Identity | Activation::LeakyRelu(_)) {
                    acc(*a, up.zip_map(self.value(*a), |g, x| g * act.second_derivative(x)));
                }
            }
            Op::Square(a) => acc(*a, up.zip_map(self.value(*a), |g, x| 2.0 * g * x)),
            Op::Sqrt(a) => acc(*a, up.zip_map(&node.value, |g, s| 0.5 * g / s)),
            Op::Log(a) => acc(*a, up.zip_map(self.value(*a), |g, x| g / x)),
            Op::Softmax(a) => {
                let s = &node.value;
                let mut g = Tensor::zeros(s.rows(), s.cols());
                for r in 0..s.rows() {
                    let (sr, ur) = (s.row(r), up.row(r));
                    let dot: f64 = sr.iter().zip(ur).map(|(p, u)| p * u).sum();
                    for ((o, p), u) in g.row_mut(r).iter_mut().zip(sr).zip(ur) {
                        *o = p * (u - dot);
                    }
                }
                acc(*a, g);
            }
            Op::LogSoftmax(a) => {
                let ls = &node.value;
                let mut g = Tensor::zeros(ls.rows(), ls.cols());
                for r in 0..ls.rows() {
                    let ur = up.row(r);
                    let total: f64 = ur.iter().sum();
                    for ((o, l), u) in g.row_mut(r).iter_mut().zip(ls.row(r)).zip(ur) {
                        *o = u - l.exp() * total;
                    }
                }
                acc(*a, g);
            }
            Op::SliceCols { a, start } => {
                let av = self.value(*a);
                let mut g = Tensor::zeros(av.rows(), av.cols());
                for r in 0..up.rows() {
                    g.row_mut(r)[*start..*start + up.cols()].copy_from_slice(up.row(r));
                }
                acc(*a, g);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    acc(*p, up.slice_cols(offset, offset + w));
                    offset += w;
                }
            }
            Op::SumRows(a) => {
                let av = self.value(*a);
                let mut g = Tensor::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    let u = up.get(r, 0);
                    g.row_mut(r).iter_mut().for_each(|x| *x = u);
                }
                acc(*a, g);
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                acc(*a, Tensor::filled(av.rows(), av.cols(), up.get(0, 0)));
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let n = av.len().max(1) as f64;
                acc(*a, Tensor::filled(av.rows(), av.cols(), up.get(0, 0) / n));
            }
            Op::RepeatRows(a) => {
                let mut g = vec![0.0; up.cols()];
                for r in 0..up.rows() {
                    for (s, x) in g.iter_mut().zip(up.row(r)) {
                        *s += x;
                    }
                }
                acc(*a, Tensor::row_vector(g));
            }
            Op::Transpose(a) => acc(*a, up.transpose()),
        }
        Ok(())
    }
}

/// Result of a backward pass: the adjoint of every node reachable from the root.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros of `like`'s shape when `v` does not
    /// influence the root.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.grads
            .get(v.0)
            .and_then(Clone::clone)
            .unwrap_or_else(|| Tensor::zeros(like.rows(), like.cols()))
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Concatenated parameter gradients in parameter order.
    pub fn flatten(&self, vars: &ParamVars) -> Vec<f64> {
        let mut out = Vec::with_capacity(vars.total_len());
        for (v, len) in vars.iter_with_len() {
            match self.get(v) {
                Some(g) => out.extend_from_slice(g.data()),
                None => out.extend(std::iter::repeat_n(0.0, len)),
            }
        }
        out
    }
}
