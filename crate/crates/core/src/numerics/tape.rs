//! Reverse-mode differentiation over an explicit, per-forward-pass tape.
//!
//! A [`Tape`] records every operation in execution order; [`Tape::backward`]
//! consumes it and replays the record in reverse. Leaves can borrow their
//! values (model parameters) so building a tape does not copy weights.

use std::borrow::Cow;

use super::conv::{self, Conv2dSpec, Conv3dSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    /// `max(0, tanh(x))`, the gate squashing function. Capped at the largest
    /// double below one so the range stays `[0, 1)` where `tanh` rounds up.
    RestrictedTanh,
}

const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::RestrictedTanh => x.tanh().clamp(0.0, BELOW_ONE),
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// `x * s[index]` with `s` a differentiable vector.
    ScaleBy {
        x: Var,
        s: Var,
        index: usize,
    },
    /// Copy of `x` with some entries replaced by constants.
    Pin {
        x: Var,
        mask: Vec<bool>,
    },
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    Activation(Var, Activation),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        spec: Conv2dSpec,
    },
    Conv3d {
        x: Var,
        w: Var,
        b: Var,
        spec: Conv3dSpec,
    },
    Sum(Var),
    CrossEntropy {
        logits: Var,
        target: usize,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::ScaleBy { .. } => "scale_by",
            Op::Pin { .. } => "pin",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::Softmax { .. } => "softmax",
            Op::Activation(..) => "activation",
            Op::Linear { .. } => "linear",
            Op::Conv2d { .. } => "conv2d",
            Op::Conv3d { .. } => "conv3d",
            Op::Sum(..) => "sum",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
    visited: Vec<usize>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor; zeros when `v` received no contribution.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match self.get(v) {
            Some(g) => Tensor::from_parts(shape.clone(), g.to_vec()),
            None => Tensor::zeros(shape),
        }
    }

    /// Node indices in the order the backward pass processed them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// `(outer, axis_len, inner)` strides for a reduction along `axis`.
fn axis_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &v)| *a += v),
        None => *slot = Some(g.to_vec()),
    }
}

fn accumulate_owned(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &v)| *a += v),
        None => *slot = Some(g),
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node; stale [`Var`]s become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    /// Operation names in execution order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    fn node(&self, v: Var) -> Result<&Node<'a>> {
        self.nodes.get(v.0).ok_or(Error::UnknownVar(v.0))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Records a leaf. Its gradient is tracked when `requires_grad` is set,
    /// either here or on the tensor itself.
    pub fn leaf(&mut self, value: impl Into<Cow<'a, Tensor>>, requires_grad: bool) -> Var {
        let value = value.into();
        let needs_grad = requires_grad || value.requires_grad();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: impl Into<Cow<'a, Tensor>>) -> Var {
        let value = value.into();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn binary_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.node(a)?.value.shape(), self.node(b)?.value.shape());
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::from_parts(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b)?;
        let out = self.zip_map(a, b, |x, y| x + y);
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b)?;
        let out = self.zip_map(a, b, |x, y| x - y);
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b)?;
        let out = self.zip_map(a, b, |x, y| x * y);
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let out = self.node(x)?.value.map(|v| v * factor);
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::Scale(x, factor), ng))
    }

    /// `x * s[index]` where `s` is a differentiable vector (e.g. a gate).
    pub fn scale_by(&mut self, x: Var, s: Var, index: usize) -> Result<Var> {
        let sv = self.node(s)?.value.data();
        if index >= sv.len() {
            return Err(Error::AxisOutOfRange {
                axis: index,
                rank: sv.len(),
            });
        }
        let factor = sv[index];
        let out = self.node(x)?.value.map(|v| v * factor);
        let ng = self.needs(&[x, s]);
        Ok(self.push(out, Op::ScaleBy { x, s, index }, ng))
    }

    /// Replaces entries of `x` with `Some` pins by constants. Gradients flow
    /// only through the unpinned entries.
    pub fn pin(&mut self, x: Var, pins: &[Option<f64>]) -> Result<Var> {
        let t = &self.node(x)?.value;
        if pins.len() != t.len() {
            return Err(Error::shape("pin", t.shape(), &[pins.len()]));
        }
        let data = t
            .data()
            .iter()
            .zip(pins)
            .map(|(&v, p)| p.unwrap_or(v))
            .collect();
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        let mask = pins.iter().map(|p| p.is_some()).collect();
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::Pin { x, mask }, ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.node(a)?.value, &self.node(b)?.value);
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = Tensor::from_parts(vec![m, n], matmul_raw(ta.data(), tb.data(), m, k, n));
        let ng = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = &self.node(x)?.value;
        let s = t.shape();
        if s.len() != 2 {
            return Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: "transpose expects a matrix".into(),
            });
        }
        let out = Tensor::from_parts(vec![s[1], s[0]], transpose_raw(t.data(), s[0], s[1]));
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::Transpose(x), ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.node(x)?.value.reshape(shape)?;
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::Reshape(x), ng))
    }

    /// Numerically stable softmax along `axis` (max-subtracted).
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = &self.node(x)?.value;
        if axis >= t.rank() {
            return Err(Error::AxisOutOfRange {
                axis,
                rank: t.rank(),
            });
        }
        let (outer, len, inner) = axis_layout(t.shape(), axis);
        let src = t.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let max = (0..len)
                    .map(|j| src[idx(j)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (src[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[idx(j)] /= total;
                }
            }
        }
        let out = Tensor::from_parts(t.shape().to_vec(), out);
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::Softmax { x, axis }, ng))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let out = self.node(x)?.value.map(|v| kind.apply(v));
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::Activation(x, kind), ng))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    /// `x · Wᵀ + b` for `x` of shape `[n]` or `[rows, n]`, `W: [m, n]`, `b: [m]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (
            &self.node(x)?.value,
            &self.node(w)?.value,
            &self.node(b)?.value,
        );
        let (sx, sw) = (tx.shape(), tw.shape());
        if sw.len() != 2 || tb.shape() != [sw[0]] {
            return Err(Error::shape("linear weight/bias", sw, tb.shape()));
        }
        let (m, n) = (sw[0], sw[1]);
        let (rows, out_shape) = match *sx {
            [len] if len == n => (1, vec![m]),
            [r, len] if len == n => (r, vec![r, m]),
            _ => return Err(Error::shape("linear", sx, sw)),
        };
        let (xd, wd, bd) = (tx.data(), tw.data(), tb.data());
        let mut out = vec![0.0; rows * m];
        for r in 0..rows {
            let xr = &xd[r * n..(r + 1) * n];
            for o in 0..m {
                let wr = &wd[o * n..(o + 1) * n];
                let dot: f64 = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
                out[r * m + o] = dot + bd[o];
            }
        }
        let out = Tensor::from_parts(out_shape, out);
        let ng = self.needs(&[x, w, b]);
        Ok(self.push(out, Op::Linear { x, w, b }, ng))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, spec: Conv2dSpec) -> Result<Var> {
        let (tx, tw, tb) = (
            &self.node(x)?.value,
            &self.node(w)?.value,
            &self.node(b)?.value,
        );
        if tw.shape() != spec.weight_shape() || tb.shape() != [spec.out_channels] {
            return Err(Error::shape(
                "conv2d weight",
                tw.shape(),
                &spec.weight_shape(),
            ));
        }
        let out_shape = spec.output_shape(tx.shape())?;
        let data = conv::conv2d_forward(
            tx.data(),
            tx.shape(),
            tw.data(),
            tb.data(),
            &spec,
            &out_shape,
        );
        let out = Tensor::from_parts(out_shape.to_vec(), data);
        let ng = self.needs(&[x, w, b]);
        Ok(self.push(out, Op::Conv2d { x, w, b, spec }, ng))
    }

    pub fn conv3d(&mut self, x: Var, w: Var, b: Var, spec: Conv3dSpec) -> Result<Var> {
        let (tx, tw, tb) = (
            &self.node(x)?.value,
            &self.node(w)?.value,
            &self.node(b)?.value,
        );
        if tw.shape() != spec.weight_shape() || tb.shape() != [spec.out_channels] {
            return Err(Error::shape(
                "conv3d weight",
                tw.shape(),
                &spec.weight_shape(),
            ));
        }
        let out_shape = spec.output_shape(tx.shape())?;
        let data = conv::conv3d_forward(
            tx.data(),
            tx.shape(),
            tw.data(),
            tb.data(),
            &spec,
            &out_shape,
        );
        let out = Tensor::from_parts(out_shape.to_vec(), data);
        let ng = self.needs(&[x, w, b]);
        Ok(self.push(out, Op::Conv3d { x, w, b, spec }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.node(x)?.value.sum());
        let ng = self.needs(&[x]);
        Ok(self.push(out, Op::Sum(x), ng))
    }

    /// Sum of equally shaped values. Fails on an empty slice.
    pub fn add_all(&mut self, xs: &[Var]) -> Result<Var> {
        let (&first, rest) = xs.split_first().ok_or_else(|| Error::InvalidShape {
            shape: vec![],
            reason: "add_all needs at least one input".into(),
        })?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    /// `-log softmax(logits)[target]` with a zero-based `target`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let t = &self.node(logits)?.value;
        if t.rank() != 1 {
            return Err(Error::InvalidShape {
                shape: t.shape().to_vec(),
                reason: "cross_entropy expects a logit vector".into(),
            });
        }
        if target >= t.len() {
            return Err(Error::LabelOutOfRange {
                label: target + 1,
                classes: t.len(),
            });
        }
        let d = t.data();
        let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + d.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let out = Tensor::scalar(lse - d[target]);
        let ng = self.needs(&[logits]);
        Ok(self.push(out, Op::CrossEntropy { logits, target }, ng))
    }

    /// Replays the tape in reverse from a scalar `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        let root = self.node(loss)?;
        if root.value.len() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        let mut visited = Vec::new();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            visited.push(idx);
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        // Drop intermediates that are not leaves; callers only read leaves.
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.needs_grad {
                *slot = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes,
            visited,
        })
    }

    fn backprop_node(&self, node: &Node<'a>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        let val = |v: Var| self.nodes[v.0].value.as_ref();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if needs(*a) {
                    accumulate(&mut grads[a.0], g);
                }
                if needs(*b) {
                    accumulate(&mut grads[b.0], g);
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    accumulate(&mut grads[a.0], g);
                }
                if needs(*b) {
                    accumulate_owned(&mut grads[b.0], g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let gb: Vec<f64> = g.iter().zip(val(*b).data()).map(|(g, y)| g * y).collect();
                    accumulate_owned(&mut grads[a.0], gb);
                }
                if needs(*b) {
                    let ga: Vec<f64> = g.iter().zip(val(*a).data()).map(|(g, x)| g * x).collect();
                    accumulate_owned(&mut grads[b.0], ga);
                }
            }
            Op::Scale(x, f) => {
                if needs(*x) {
                    accumulate_owned(&mut grads[x.0], g.iter().map(|v| v * f).collect());
                }
            }
            Op::ScaleBy { x, s, index } => {
                let factor = val(*s).data()[*index];
                if needs(*x) {
                    accumulate_owned(&mut grads[x.0], g.iter().map(|v| v * factor).collect());
                }
                if needs(*s) {
                    let ds: f64 = g.iter().zip(val(*x).data()).map(|(g, x)| g * x).sum();
                    let mut d = vec![0.0; val(*s).len()];
                    d[*index] = ds;
                    accumulate_owned(&mut grads[s.0], d);
                }
            }
            Op::Pin { x, mask } => {
                if needs(*x) {
                    let d = g
                        .iter()
                        .zip(mask)
                        .map(|(&v, &pinned)| if pinned { 0.0 } else { v })
                        .collect();
                    accumulate_owned(&mut grads[x.0], d);
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if needs(*a) {
                    let bt = transpose_raw(tb.data(), k, n);
                    accumulate_owned(&mut grads[a.0], matmul_raw(g, &bt, m, n, k));
                }
                if needs(*b) {
                    let at = transpose_raw(ta.data(), m, k);
                    accumulate_owned(&mut grads[b.0], matmul_raw(&at, g, k, m, n));
                }
            }
            Op::Transpose(x) => {
                if needs(*x) {
                    let s = val(*x).shape();
                    accumulate_owned(&mut grads[x.0], transpose_raw(g, s[1], s[0]));
                }
            }
            Op::Reshape(x) => {
                if needs(*x) {
                    accumulate(&mut grads[x.0], g);
                }
            }
            Op::Softmax { x, axis } => {
                if needs(*x) {
                    let y = node.value.data();
                    let (outer, len, inner) = axis_layout(node.value.shape(), *axis);
                    let mut d = vec![0.0; y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |j: usize| (o * len + j) * inner + i;
                            let dot: f64 = (0..len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                            for j in 0..len {
                                d[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                            }
                        }
                    }
                    accumulate_owned(&mut grads[x.0], d);
                }
            }
            Op::Activation(x, kind) => {
                if needs(*x) {
                    let xs = val(*x).data();
                    let ys = node.value.data();
                    let d = g
                        .iter()
                        .zip(xs.iter().zip(ys))
                        .map(|(&g, (&x, &y))| match kind {
                            Activation::Relu => {
                                if x > 0.0 {
                                    g
                                } else {
                                    0.0
                                }
                            }
                            Activation::Tanh => g * (1.0 - y * y),
                            Activation::RestrictedTanh => {
                                if x > 0.0 {
                                    g * (1.0 - y * y)
                                } else {
                                    0.0
                                }
                            }
                        })
                        .collect();
                    accumulate_owned(&mut grads[x.0], d);
                }
            }
            Op::Linear { x, w, b } => {
                let (tx, tw) = (val(*x), val(*w));
                let (m, n) = (tw.shape()[0], tw.shape()[1]);
                let rows = tx.len() / n;
                if needs(*x) {
                    accumulate_owned(&mut grads[x.0], matmul_raw(g, tw.data(), rows, m, n));
                }
                if needs(*w) {
                    let gt = transpose_raw(g, rows, m);
                    accumulate_owned(&mut grads[w.0], matmul_raw(&gt, tx.data(), m, rows, n));
                }
                if needs(*b) {
                    let mut db = vec![0.0; m];
                    for r in 0..rows {
                        for o in 0..m {
                            db[o] += g[r * m + o];
                        }
                    }
                    accumulate_owned(&mut grads[b.0], db);
                }
            }
            Op::Conv2d { x, w, b, spec } => {
                let (tx, tw) = (val(*x), val(*w));
                let out_shape: [usize; 3] =
                    node.value.shape().try_into().expect("conv2d output rank");
                let (dx, dw, db) =
                    conv::conv2d_backward(tx.data(), tx.shape(), tw.data(), g, spec, &out_shape);
                if needs(*x) {
                    accumulate_owned(&mut grads[x.0], dx);
                }
                if needs(*w) {
                    accumulate_owned(&mut grads[w.0], dw);
                }
                if needs(*b) {
                    accumulate_owned(&mut grads[b.0], db);
                }
            }
            Op::Conv3d { x, w, b, spec } => {
                let (tx, tw) = (val(*x), val(*w));
                let out_shape: [usize; 4] =
                    node.value.shape().try_into().expect("conv3d output rank");
                let (dx, dw, db) =
                    conv::conv3d_backward(tx.data(), tx.shape(), tw.data(), g, spec, &out_shape);
                if needs(*x) {
                    accumulate_owned(&mut grads[x.0], dx);
                }
                if needs(*w) {
                    accumulate_owned(&mut grads[w.0], dw);
                }
                if needs(*b) {
                    accumulate_owned(&mut grads[b.0], db);
                }
            }
            Op::Sum(x) => {
                if needs(*x) {
                    accumulate_owned(&mut grads[x.0], vec![g[0]; val(*x).len()]);
                }
            }
            Op::CrossEntropy { logits, target } => {
                if needs(*logits) {
                    let d = val(*logits).data();
                    let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = d.iter().map(|v| (v - max).exp()).collect();
                    let total: f64 = exps.iter().sum();
                    let mut out: Vec<f64> = exps.iter().map(|e| g[0] * e / total).collect();
                    out[*target] -= g[0];
                    accumulate_owned(&mut grads[logits.0], out);
                }
            }
        }
    }
}
