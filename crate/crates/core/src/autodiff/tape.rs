//! Reverse-mode differentiation over an append-only tape.
//!
//! Every operation appends a node holding its value and the rule to push
//! gradients to its inputs. Node indexes grow with time, so walking the tape
//! backwards visits nodes in reverse topological order. Parameters are
//! borrowed from a [`ModelParams`] rather than copied, and their gradients
//! accumulate into a [`Gradients`] buffer.

use std::borrow::Cow;

use crate::autodiff::array::NdArray;
use crate::autodiff::params::{Gradients, ModelParams, ParamId};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddN(Vec<Var>),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `scale * x + shift`
    Affine(Var, f64),
    /// vector times a `1 x 1` scalar
    MulScalar(Var, Var),
    /// constant matrix times a variable
    ConstMatMul(NdArray, Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Sum(Var),
    Mean(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    L2Norm(Var),
    /// masked softmax probabilities cached for the backward pass
    Nll {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
}

struct Node<'p> {
    value: Cow<'p, NdArray>,
    op: Op,
}

pub struct Tape<'p> {
    params: Option<&'p ModelParams>,
    nodes: Vec<Node<'p>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Tape::new()
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

impl<'p> Tape<'p> {
    /// A tape without parameters; only constants can be leaves.
    pub fn new() -> Self {
        Tape { params: None, nodes: Vec::new() }
    }

    pub fn with_params(params: &'p ModelParams) -> Self {
        Tape { params: Some(params), nodes: Vec::with_capacity(1024) }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &NdArray {
        &self.nodes[v.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn push(&mut self, op_name: &'static str, value: NdArray, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value: Cow::Owned(value), op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant leaf: receives no gradient.
    pub fn constant(&mut self, value: NdArray) -> Var {
        self.nodes.push(Node { value: Cow::Owned(value), op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn vector(&mut self, data: Vec<f64>) -> Var {
        self.constant(NdArray::vector(data))
    }

    pub fn zeros(&mut self, rows: usize) -> Var {
        self.constant(NdArray::zeros(rows, 1))
    }

    /// Borrows parameter `id` onto the tape.
    pub fn param(&mut self, id: ParamId) -> Var {
        let params = self.params.expect("tape was created without parameters");
        self.nodes.push(Node { value: Cow::Borrowed(params.get(id)), op: Op::Param(id) });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            return Err(shape_err("matmul", format!("{:?} · {:?}", x.shape(), y.shape())));
        }
        let out = x.matmul(y);
        self.push("matmul", out, Op::MatMul(a, b))
    }

    /// `m · x` for a constant matrix `m`.
    pub fn const_matmul(&mut self, m: NdArray, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if m.cols() != xv.rows() {
            return Err(shape_err("const_matmul", format!("{:?} · {:?}", m.shape(), xv.shape())));
        }
        let out = m.matmul(xv);
        self.push("const_matmul", out, Op::ConstMatMul(m, x))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err(op, format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push("add", out, Op::Add(a, b))
    }

    /// Sum of several equally shaped nodes, added in the given order.
    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| shape_err("add_n", "no inputs".into()))?;
        let mut out = self.value(first).clone();
        for &x in &xs[1..] {
            self.same_shape("add_n", first, x)?;
            out.add_assign(self.value(x));
        }
        self.push("add_n", out, Op::AddN(xs.to_vec()))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push("sub", out, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push("mul", out, Op::Mul(a, b))
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let out = self.value(x).map(|v| scale * v + shift);
        self.push("affine", out, Op::Affine(x, scale))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.affine(x, s, 0.0)
    }

    /// `x * s` where `s` is a `1 x 1` node.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.shape() != (1, 1) {
            return Err(shape_err("mul_scalar", format!("scalar operand has shape {:?}", sv.shape())));
        }
        let k = sv.item();
        let out = self.value(x).map(|v| v * k);
        self.push("mul_scalar", out, Op::MulScalar(x, s))
    }

    /// Stacks column vectors (or matrices with equal column counts) vertically.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| shape_err("concat", "no inputs".into()))?;
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &x in xs {
            let v = self.value(x);
            if v.cols() != cols {
                return Err(shape_err("concat", format!("column counts {} and {}", cols, v.cols())));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = NdArray::from_vec(rows, cols, data)?;
        self.push("concat", out, Op::Concat(xs.to_vec()))
    }

    /// Rows `start..start + len`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        if start + len > v.rows() {
            return Err(shape_err("slice", format!("rows {start}..{} of {}", start + len, v.rows())));
        }
        let cols = v.cols();
        let out = NdArray::from_vec(len, cols, v.data()[start * cols..(start + len) * cols].to_vec())?;
        self.push("slice", out, Op::Slice(x, start))
    }

    /// Single entry `index` of a vector as a `1 x 1` node.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        self.slice(x, index, 1)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", NdArray::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push("mean", NdArray::scalar(s), Op::Mean(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::tanh);
        self.push("tanh", out, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push("relu", out, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push("leaky_relu", out, Op::LeakyRelu(x, slope))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::exp);
        self.push("exp", out, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::ln);
        self.push("log", out, Op::Log(x))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let out = NdArray::vector(softmax(self.value(x).data(), None));
        self.push("softmax", out, Op::Softmax(x))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let d = self.value(x).data();
        let lse = log_sum_exp(d, None);
        let out = NdArray::vector(d.iter().map(|v| v - lse).collect());
        self.push("log_softmax", out, Op::LogSoftmax(x))
    }

    /// Euclidean norm as a `1 x 1` node. The gradient at zero is taken as 0.
    pub fn l2_norm(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).data().iter().map(|v| v * v).sum::<f64>().sqrt();
        self.push("l2_norm", NdArray::scalar(n), Op::L2Norm(x))
    }

    /// `-log softmax(logits)[target]`, with `mask[i] == false` treating class
    /// `i` as a `-∞` logit.
    pub fn cross_entropy(&mut self, logits: Var, target: usize, mask: Option<&[bool]>) -> Result<Var> {
        let d = self.value(logits).data();
        if target >= d.len() {
            return Err(Error::Data(format!("target class {target} outside {} logits", d.len())));
        }
        if let Some(m) = mask {
            if m.len() != d.len() {
                return Err(shape_err("cross_entropy", format!("mask of {} for {} logits", m.len(), d.len())));
            }
            if !m[target] {
                return Err(Error::Data(format!("target class {target} is masked out")));
            }
        }
        let probs = softmax(d, mask);
        let lse = log_sum_exp(d, mask);
        let loss = lse - d[target];
        self.push("cross_entropy", NdArray::scalar(loss), Op::Nll { logits, target, probs })
    }

    /// Backpropagates from the scalar `loss`, adding parameter gradients
    /// into `grads`. Calling it twice accumulates twice.
    pub fn backward(&self, loss: Var, grads: &mut Gradients) -> Result<()> {
        if self.value(loss).shape() != (1, 1) {
            return Err(shape_err(
                "backward",
                format!("loss has shape {:?}, expected a scalar", self.value(loss).shape()),
            ));
        }
        let mut adj: Vec<Option<NdArray>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(NdArray::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let out = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => grads.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    acc(&mut adj, *a, g.matmul_t(bv));
                    acc(&mut adj, *b, av.t_matmul(&g));
                }
                Op::ConstMatMul(m, x) => acc(&mut adj, *x, m.t_matmul(&g)),
                Op::Add(a, b) => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, g);
                }
                Op::AddN(xs) => {
                    for &x in xs {
                        acc(&mut adj, x, g.clone());
                    }
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *a, g.clone());
                    acc(&mut adj, *b, g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    acc(&mut adj, *a, g.zip_map(self.value(*b), |x, y| x * y));
                    acc(&mut adj, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
                Op::Affine(x, s) => acc(&mut adj, *x, g.map(|v| v * s)),
                Op::MulScalar(x, s) => {
                    let k = self.value(*s).item();
                    let ds: f64 = g.data().iter().zip(self.value(*x).data()).map(|(a, b)| a * b).sum();
                    acc(&mut adj, *x, g.map(|v| v * k));
                    acc(&mut adj, *s, NdArray::scalar(ds));
                }
                Op::Concat(xs) => {
                    let cols = g.cols();
                    let mut offset = 0;
                    for &x in xs {
                        let rows = self.value(x).rows();
                        let part = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                        acc(&mut adj, x, NdArray::from_vec(rows, cols, part)?);
                        offset += rows;
                    }
                }
                Op::Slice(x, start) => {
                    let xv = self.value(*x);
                    let mut full = NdArray::zeros(xv.rows(), xv.cols());
                    let cols = xv.cols();
                    full.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                    acc(&mut adj, *x, full);
                }
                Op::Sum(x) => {
                    let xv = self.value(*x);
                    let mut full = NdArray::zeros(xv.rows(), xv.cols());
                    full.data_mut().fill(g.item());
                    acc(&mut adj, *x, full);
                }
                Op::Mean(x) => {
                    let xv = self.value(*x);
                    let mut full = NdArray::zeros(xv.rows(), xv.cols());
                    full.data_mut().fill(g.item() / xv.len() as f64);
                    acc(&mut adj, *x, full);
                }
                Op::Tanh(x) => acc(&mut adj, *x, g.zip_map(out, |gv, y| gv * (1.0 - y * y))),
                Op::Sigmoid(x) => acc(&mut adj, *x, g.zip_map(out, |gv, y| gv * y * (1.0 - y))),
                Op::Relu(x) => acc(&mut adj, *x, g.zip_map(self.value(*x), |gv, v| if v > 0.0 { gv } else { 0.0 })),
                Op::LeakyRelu(x, slope) => {
                    acc(&mut adj, *x, g.zip_map(self.value(*x), |gv, v| if v > 0.0 { gv } else { slope * gv }))
                }
                Op::Exp(x) => acc(&mut adj, *x, g.zip_map(out, |gv, y| gv * y)),
                Op::Log(x) => acc(&mut adj, *x, g.zip_map(self.value(*x), |gv, v| gv / v)),
                Op::Softmax(x) => {
                    let dot: f64 = g.data().iter().zip(out.data()).map(|(a, b)| a * b).sum();
                    acc(&mut adj, *x, g.zip_map(out, |gv, s| s * (gv - dot)));
                }
                Op::LogSoftmax(x) => {
                    let total: f64 = g.data().iter().sum();
                    acc(&mut adj, *x, g.zip_map(out, |gv, ls| gv - ls.exp() * total));
                }
                Op::L2Norm(x) => {
                    let norm = out.item();
                    if norm > 0.0 {
                        let k = g.item() / norm;
                        acc(&mut adj, *x, self.value(*x).map(|v| v * k));
                    }
                }
                Op::Nll { logits, target, probs } => {
                    let k = g.item();
                    let mut d: Vec<f64> = probs.iter().map(|p| p * k).collect();
                    d[*target] -= k;
                    acc(&mut adj, *logits, NdArray::vector(d));
                }
            }
        }
        Ok(())
    }
}

fn acc(adj: &mut [Option<NdArray>], v: Var, g: NdArray) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-sum-exp over the allowed entries.
pub fn log_sum_exp(x: &[f64], mask: Option<&[bool]>) -> f64 {
    let allowed = |i: usize| mask.is_none_or(|m| m[i]);
    let max = x.iter().enumerate().filter(|(i, _)| allowed(*i)).map(|(_, &v)| v).fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = x.iter().enumerate().filter(|(i, _)| allowed(*i)).map(|(_, &v)| (v - max).exp()).sum();
    max + s.ln()
}

/// Softmax over the allowed entries; masked entries get probability 0.
pub fn softmax(x: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let lse = log_sum_exp(x, mask);
    x.iter().enumerate().map(|(i, &v)| if mask.is_none_or(|m| m[i]) { (v - lse).exp() } else { 0.0 }).collect()
}
