//! The recording tape for reverse-mode differentiation.
//!
//! A [`Tape`] owns every intermediate tensor of one forward pass. Operations
//! append nodes in topological order (inputs always precede consumers), so
//! [`Tape::backward`] is a single reverse sweep that accumulates gradients
//! additively into per-node slots. Shared inputs therefore receive the sum
//! of all branch gradients.
//!
//! Rank-3 tensors follow a `[time × node × channel]` layout throughout:
//! temporal convolutions run along axis 0 independently per node, graph
//! mixing runs along axis 1 independently per timestep, and channel mixing
//! runs along the last axis. There is no broadcasting; the only implicit
//! batching is the one spelled out per operation.

use std::sync::Arc;

use super::Tensor;
use crate::{Error, Result};

/// Index of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    Sigmoid(NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    Mse(NodeId, NodeId),
    Reshape(NodeId),
    Conv1d {
        x: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    },
    ConvTranspose1d {
        x: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    },
    GraphMix {
        x: NodeId,
        matrix: Arc<Tensor>,
    },
    ChannelMix {
        x: NodeId,
        weight: NodeId,
    },
    AddBias {
        x: NodeId,
        bias: NodeId,
    },
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Records one forward pass and replays it backwards.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The forward value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Inserts a differentiable leaf (a trainable parameter or an input
    /// whose gradient is wanted).
    pub fn leaf(&mut self, value: Tensor) -> Result<NodeId> {
        value.ensure_finite("leaf")?;
        Ok(self.push(Op::Leaf, value, true))
    }

    /// Inserts a leaf whose gradient is never needed (targets, fixed data).
    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        value.ensure_finite("constant")?;
        Ok(self.push(Op::Leaf, value, false))
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn binary_same_shape(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "{name}: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data: Vec<f64> = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor {
            shape: ta.shape().to_vec(),
            data,
        };
        out.ensure_finite(name)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(op, out, needs))
    }

    /// Elementwise sum of two equally shaped tensors.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    /// Elementwise difference of two equally shaped tensors.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product of two equally shaped tensors.
    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("hadamard", a, b, |x, y| x * y, Op::Hadamard(a, b))
    }

    /// Elementwise logistic sigmoid, `1 / (1 + exp(-x))`.
    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let tx = self.value(x);
        let data: Vec<f64> = tx.data().iter().map(|&v| sigmoid(v)).collect();
        let out = Tensor {
            shape: tx.shape().to_vec(),
            data,
        };
        out.ensure_finite("sigmoid")?;
        let needs = self.needs(x);
        Ok(self.push(Op::Sigmoid(x), out, needs))
    }

    /// Multiplies every element by a fixed finite scalar.
    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        if !factor.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "scale factor must be finite, got {factor}"
            )));
        }
        let tx = self.value(x);
        let data: Vec<f64> = tx.data().iter().map(|&v| v * factor).collect();
        let out = Tensor {
            shape: tx.shape().to_vec(),
            data,
        };
        out.ensure_finite("scale")?;
        let needs = self.needs(x);
        Ok(self.push(Op::Scale(x, factor), out, needs))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let total: f64 = self.value(x).data().iter().sum();
        let out = Tensor::scalar(total);
        out.ensure_finite("sum")?;
        let needs = self.needs(x);
        Ok(self.push(Op::Sum(x), out, needs))
    }

    /// Mean squared error over all elements: `(1/N) Σ (a−b)²`.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "mse: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        if ta.is_empty() {
            return Err(Error::InvalidArgument("mse of empty tensors".into()));
        }
        let n = ta.len() as f64;
        let total: f64 = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let out = Tensor::scalar(total / n);
        out.ensure_finite("mse")?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mse(a, b), out, needs))
    }

    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let tx = self.value(x);
        let expected: usize = shape.iter().product();
        if expected != tx.len() {
            return Err(Error::Shape(format!(
                "reshape {:?} -> {:?}",
                tx.shape(),
                shape
            )));
        }
        let out = Tensor {
            shape,
            data: tx.data().to_vec(),
        };
        let needs = self.needs(x);
        Ok(self.push(Op::Reshape(x), out, needs))
    }

    /// Cross-correlation along axis 0 of `x: [len × batch × ch_in]` with
    /// `kernel: [ch_out × ch_in × k]`, zero padding on both ends.
    ///
    /// Output length is `(len + 2·padding − k)/stride + 1` (floor).
    pub fn conv1d(
        &mut self,
        x: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let out = conv1d_forward(self.value(x), self.value(kernel), stride, padding)?;
        out.ensure_finite("conv1d")?;
        let needs = self.needs(x) || self.needs(kernel);
        Ok(self.push(
            Op::Conv1d {
                x,
                kernel,
                stride,
                padding,
            },
            out,
            needs,
        ))
    }

    /// Transposed convolution along axis 0 of `x: [len × batch × ch_in]`
    /// with `kernel: [ch_in × ch_out × k]`.
    ///
    /// Output length is `(len − 1)·stride − 2·padding + k`; with the model's
    /// `k = 4, stride = 2, padding = 1` this exactly doubles the length that
    /// [`Tape::conv1d`] halved.
    pub fn conv1d_transpose(
        &mut self,
        x: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let out = convt1d_forward(self.value(x), self.value(kernel), stride, padding)?;
        out.ensure_finite("conv1d_transpose")?;
        let needs = self.needs(x) || self.needs(kernel);
        Ok(self.push(
            Op::ConvTranspose1d {
                x,
                kernel,
                stride,
                padding,
            },
            out,
            needs,
        ))
    }

    /// Left-multiplies every timestep of `x: [time × n × ch]` by a fixed
    /// `n × n` matrix: `out[t] = M · x[t]`.
    ///
    /// The matrix is a constant (graph structure is not trainable), so no
    /// gradient flows into it.
    pub fn graph_mix(&mut self, matrix: Arc<Tensor>, x: NodeId) -> Result<NodeId> {
        let tx = self.value(x);
        check_square_vs_axis1(&matrix, tx)?;
        let out = graph_mix_apply(&matrix, tx, false);
        out.ensure_finite("graph_mix")?;
        let needs = self.needs(x);
        Ok(self.push(Op::GraphMix { x, matrix }, out, needs))
    }

    /// Multiplies along the last axis: `x: [... × ch_in] · w: [ch_in × ch_out]`.
    pub fn channel_mix(&mut self, x: NodeId, weight: NodeId) -> Result<NodeId> {
        let (tx, tw) = (self.value(x), self.value(weight));
        if tw.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "channel_mix weight must be rank 2, got {:?}",
                tw.shape()
            )));
        }
        let (ci, co) = (tw.shape()[0], tw.shape()[1]);
        if tx.shape().last().copied() != Some(ci) {
            return Err(Error::Shape(format!(
                "channel_mix: input {:?} vs weight {:?}",
                tx.shape(),
                tw.shape()
            )));
        }
        let rows = tx.len() / ci;
        let data = mat_mul(tx.data(), rows, ci, tw.data(), co);
        let mut shape = tx.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = co;
        let out = Tensor { shape, data };
        out.ensure_finite("channel_mix")?;
        let needs = self.needs(x) || self.needs(weight);
        Ok(self.push(Op::ChannelMix { x, weight }, out, needs))
    }

    /// Adds a rank-1 bias along the last axis of `x`.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.shape().len() != 1 || tx.shape().last() != tb.shape().first() {
            return Err(Error::Shape(format!(
                "add_bias: input {:?} vs bias {:?}",
                tx.shape(),
                tb.shape()
            )));
        }
        let width = tb.len();
        let mut data = tx.data().to_vec();
        for row in data.chunks_mut(width) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let out = Tensor {
            shape: tx.shape().to_vec(),
            data,
        };
        out.ensure_finite("add_bias")?;
        let needs = self.needs(x) || self.needs(bias);
        Ok(self.push(Op::AddBias { x, bias }, out, needs))
    }

    /// Propagates gradients backwards from a scalar loss node.
    ///
    /// Every node reachable from `loss` receives `d loss / d node`; leaves
    /// that do not influence the loss simply keep an absent (zero) gradient.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor {
            shape: self.value(loss).shape().to_vec(),
            data: vec![1.0],
        });

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        Ok(Gradients {
            shapes: self.nodes.iter().map(|n| n.value.shape.clone()).collect(),
            grads,
        })
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], self.value(*a).shape(), g.data());
                }
                if self.needs(*b) {
                    accumulate(&mut grads[b.0], self.value(*b).shape(), g.data());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], self.value(*a).shape(), g.data());
                }
                if self.needs(*b) {
                    let neg: Vec<f64> = g.data().iter().map(|v| -v).collect();
                    accumulate(&mut grads[b.0], self.value(*b).shape(), &neg);
                }
            }
            Op::Hadamard(a, b) => {
                if self.needs(*a) {
                    let da: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(self.value(*b).data())
                        .map(|(&gv, &bv)| gv * bv)
                        .collect();
                    accumulate(&mut grads[a.0], self.value(*a).shape(), &da);
                }
                if self.needs(*b) {
                    let db: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(&gv, &av)| gv * av)
                        .collect();
                    accumulate(&mut grads[b.0], self.value(*b).shape(), &db);
                }
            }
            Op::Sigmoid(x) => {
                if self.needs(*x) {
                    // d/dx σ(x) = σ(x)(1−σ(x)), read from the stored output.
                    let s = self.nodes[id].value.data();
                    let dx: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(s)
                        .map(|(&gv, &sv)| gv * sv * (1.0 - sv))
                        .collect();
                    accumulate(&mut grads[x.0], self.value(*x).shape(), &dx);
                }
            }
            Op::Scale(x, factor) => {
                if self.needs(*x) {
                    let dx: Vec<f64> = g.data().iter().map(|&gv| gv * factor).collect();
                    accumulate(&mut grads[x.0], self.value(*x).shape(), &dx);
                }
            }
            Op::Sum(x) => {
                if self.needs(*x) {
                    let g0 = g.data()[0];
                    let dx = vec![g0; self.value(*x).len()];
                    accumulate(&mut grads[x.0], self.value(*x).shape(), &dx);
                }
            }
            Op::Mse(a, b) => {
                let g0 = g.data()[0];
                let (ta, tb) = (self.value(*a), self.value(*b));
                let scale = 2.0 * g0 / ta.len() as f64;
                if self.needs(*a) {
                    let da: Vec<f64> = ta
                        .data()
                        .iter()
                        .zip(tb.data())
                        .map(|(&x, &y)| scale * (x - y))
                        .collect();
                    accumulate(&mut grads[a.0], ta.shape(), &da);
                }
                if self.needs(*b) {
                    let db: Vec<f64> = ta
                        .data()
                        .iter()
                        .zip(tb.data())
                        .map(|(&x, &y)| -scale * (x - y))
                        .collect();
                    accumulate(&mut grads[b.0], tb.shape(), &db);
                }
            }
            Op::Reshape(x) => {
                if self.needs(*x) {
                    accumulate(&mut grads[x.0], self.value(*x).shape(), g.data());
                }
            }
            Op::Conv1d {
                x,
                kernel,
                stride,
                padding,
            } => {
                let (tx, tk) = (self.value(*x), self.value(*kernel));
                if self.needs(*x) {
                    let dx = conv1d_backward_input(tx, tk, g, *stride, *padding);
                    accumulate(&mut grads[x.0], tx.shape(), &dx);
                }
                if self.needs(*kernel) {
                    let dk = conv1d_backward_kernel(tx, tk, g, *stride, *padding);
                    accumulate(&mut grads[kernel.0], tk.shape(), &dk);
                }
            }
            Op::ConvTranspose1d {
                x,
                kernel,
                stride,
                padding,
            } => {
                let (tx, tk) = (self.value(*x), self.value(*kernel));
                if self.needs(*x) {
                    let dx = convt1d_backward_input(tx, tk, g, *stride, *padding);
                    accumulate(&mut grads[x.0], tx.shape(), &dx);
                }
                if self.needs(*kernel) {
                    let dk = convt1d_backward_kernel(tx, tk, g, *stride, *padding);
                    accumulate(&mut grads[kernel.0], tk.shape(), &dk);
                }
            }
            Op::GraphMix { x, matrix } => {
                if self.needs(*x) {
                    // out = M·x per timestep ⇒ dx = Mᵀ·g per timestep.
                    let dx = graph_mix_apply(matrix, g, true);
                    accumulate(&mut grads[x.0], self.value(*x).shape(), dx.data());
                }
            }
            Op::ChannelMix { x, weight } => {
                let (tx, tw) = (self.value(*x), self.value(*weight));
                let (ci, co) = (tw.shape()[0], tw.shape()[1]);
                let rows = tx.len() / ci;
                if self.needs(*x) {
                    let dx = mat_mul_bt(g.data(), rows, co, tw.data(), ci);
                    accumulate(&mut grads[x.0], tx.shape(), &dx);
                }
                if self.needs(*weight) {
                    let dw = mat_tmul(tx.data(), rows, ci, g.data(), co);
                    accumulate(&mut grads[weight.0], tw.shape(), &dw);
                }
            }
            Op::AddBias { x, bias } => {
                if self.needs(*x) {
                    accumulate(&mut grads[x.0], self.value(*x).shape(), g.data());
                }
                if self.needs(*bias) {
                    let width = self.value(*bias).len();
                    let mut db = vec![0.0; width];
                    for row in g.data().chunks(width) {
                        for (acc, &gv) in db.iter_mut().zip(row) {
                            *acc += gv;
                        }
                    }
                    accumulate(&mut grads[bias.0], self.value(*bias).shape(), &db);
                }
            }
        }
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`NodeId`].
pub struct Gradients {
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// The gradient of the loss with respect to a node, if any flowed there.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    /// Like [`Gradients::get`], but a disconnected node yields exact zeros.
    pub fn dense(&self, id: NodeId) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[id.0].clone()),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn accumulate(slot: &mut Option<Tensor>, shape: &[usize], delta: &[f64]) {
    match slot {
        Some(existing) => {
            for (acc, &d) in existing.data.iter_mut().zip(delta) {
                *acc += d;
            }
        }
        None => {
            *slot = Some(Tensor {
                shape: shape.to_vec(),
                data: delta.to_vec(),
            });
        }
    }
}

fn check_square_vs_axis1(matrix: &Tensor, x: &Tensor) -> Result<()> {
    if matrix.shape().len() != 2 || matrix.shape()[0] != matrix.shape()[1] {
        return Err(Error::Shape(format!(
            "graph_mix matrix must be square, got {:?}",
            matrix.shape()
        )));
    }
    if x.shape().len() != 3 || x.shape()[1] != matrix.shape()[0] {
        return Err(Error::Shape(format!(
            "graph_mix: input {:?} vs matrix {:?}",
            x.shape(),
            matrix.shape()
        )));
    }
    Ok(())
}

/// `out[t] = M·x[t]` (or `Mᵀ·x[t]` when `transpose`), x laid out [T×n×C].
fn graph_mix_apply(matrix: &Tensor, x: &Tensor, transpose: bool) -> Tensor {
    let n = matrix.shape()[0];
    let steps = x.shape()[0];
    let ch = x.shape()[2];
    let m = matrix.data();
    let xd = x.data();
    let mut out = vec![0.0; xd.len()];
    for t in 0..steps {
        let base = t * n * ch;
        for i in 0..n {
            let orow = &mut out[base + i * ch..base + (i + 1) * ch];
            for j in 0..n {
                let w = if transpose {
                    m[j * n + i]
                } else {
                    m[i * n + j]
                };
                if w == 0.0 {
                    continue;
                }
                let xrow = &xd[base + j * ch..base + (j + 1) * ch];
                for (o, &xv) in orow.iter_mut().zip(xrow) {
                    *o += w * xv;
                }
            }
        }
    }
    Tensor {
        shape: x.shape().to_vec(),
        data: out,
    }
}

/// `a: [m×k] · b: [k×n]`, row-major.
fn mat_mul(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `aᵀ·g` where `a: [m×k]`, `g: [m×n]` → `[k×n]`.
fn mat_tmul(a: &[f64], m: usize, k: usize, g: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let grow = &g[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[kk * n..(kk + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}

/// `g·bᵀ` where `g: [m×n]`, `b: [k×n]` → `[m×k]`.
fn mat_mul_bt(g: &[f64], m: usize, n: usize, b: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for (kk, o) in orow.iter_mut().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            *o = grow.iter().zip(brow).map(|(&gv, &bv)| gv * bv).sum();
        }
    }
    out
}

fn conv_dims(x: &Tensor, kernel: &Tensor) -> Result<(usize, usize, usize)> {
    if x.shape().len() != 3 || kernel.shape().len() != 3 {
        return Err(Error::Shape(format!(
            "conv expects rank-3 input and kernel, got {:?} and {:?}",
            x.shape(),
            kernel.shape()
        )));
    }
    Ok((x.shape()[0], x.shape()[1], x.shape()[2]))
}

fn conv1d_forward(x: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (len, batch, ch_in) = conv_dims(x, kernel)?;
    let (ch_out, k_ci, k) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    if k_ci != ch_in {
        return Err(Error::Shape(format!(
            "conv1d: input channels {ch_in} vs kernel {:?}",
            kernel.shape()
        )));
    }
    if stride < 1 {
        return Err(Error::InvalidArgument("conv1d: stride must be >= 1".into()));
    }
    if len + 2 * padding < k {
        return Err(Error::Shape(format!(
            "conv1d: len {len} + 2*padding {padding} < kernel size {k}"
        )));
    }
    let len_out = (len + 2 * padding - k) / stride + 1;
    let (xd, kd) = (x.data(), kernel.data());
    let mut out = vec![0.0; len_out * batch * ch_out];
    for to in 0..len_out {
        for kk in 0..k {
            let ti = (to * stride + kk) as isize - padding as isize;
            if ti < 0 || ti >= len as isize {
                continue;
            }
            let ti = ti as usize;
            for b in 0..batch {
                let xrow = &xd[(ti * batch + b) * ch_in..(ti * batch + b + 1) * ch_in];
                let orow = &mut out[(to * batch + b) * ch_out..(to * batch + b + 1) * ch_out];
                for (co, o) in orow.iter_mut().enumerate() {
                    let kbase = (co * ch_in) * k + kk;
                    let mut acc = 0.0;
                    for (ci, &xv) in xrow.iter().enumerate() {
                        acc += xv * kd[kbase + ci * k];
                    }
                    *o += acc;
                }
            }
        }
    }
    Ok(Tensor {
        shape: vec![len_out, batch, ch_out],
        data: out,
    })
}

fn conv1d_backward_input(
    x: &Tensor,
    kernel: &Tensor,
    g: &Tensor,
    stride: usize,
    padding: usize,
) -> Vec<f64> {
    let (len, batch, ch_in) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (ch_out, _, k) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    let len_out = g.shape()[0];
    let (kd, gd) = (kernel.data(), g.data());
    let mut dx = vec![0.0; len * batch * ch_in];
    for to in 0..len_out {
        for kk in 0..k {
            let ti = (to * stride + kk) as isize - padding as isize;
            if ti < 0 || ti >= len as isize {
                continue;
            }
            let ti = ti as usize;
            for b in 0..batch {
                let grow = &gd[(to * batch + b) * ch_out..(to * batch + b + 1) * ch_out];
                let xrow = &mut dx[(ti * batch + b) * ch_in..(ti * batch + b + 1) * ch_in];
                for (ci, xv) in xrow.iter_mut().enumerate() {
                    let kbase = ci * k + kk;
                    let mut acc = 0.0;
                    for (co, &gv) in grow.iter().enumerate() {
                        acc += gv * kd[co * ch_in * k + kbase];
                    }
                    *xv += acc;
                }
            }
        }
    }
    dx
}

fn conv1d_backward_kernel(
    x: &Tensor,
    kernel: &Tensor,
    g: &Tensor,
    stride: usize,
    padding: usize,
) -> Vec<f64> {
    let (len, batch, ch_in) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (ch_out, _, k) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    let len_out = g.shape()[0];
    let (xd, gd) = (x.data(), g.data());
    let mut dk = vec![0.0; ch_out * ch_in * k];
    for to in 0..len_out {
        for kk in 0..k {
            let ti = (to * stride + kk) as isize - padding as isize;
            if ti < 0 || ti >= len as isize {
                continue;
            }
            let ti = ti as usize;
            for b in 0..batch {
                let xrow = &xd[(ti * batch + b) * ch_in..(ti * batch + b + 1) * ch_in];
                let grow = &gd[(to * batch + b) * ch_out..(to * batch + b + 1) * ch_out];
                for (co, &gv) in grow.iter().enumerate() {
                    let kbase = (co * ch_in) * k + kk;
                    for (ci, &xv) in xrow.iter().enumerate() {
                        dk[kbase + ci * k] += gv * xv;
                    }
                }
            }
        }
    }
    dk
}

fn convt1d_forward(x: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (len, batch, ch_in) = conv_dims(x, kernel)?;
    let (k_ci, ch_out, k) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    if k_ci != ch_in {
        return Err(Error::Shape(format!(
            "conv1d_transpose: input channels {ch_in} vs kernel {:?}",
            kernel.shape()
        )));
    }
    if stride < 1 {
        return Err(Error::InvalidArgument(
            "conv1d_transpose: stride must be >= 1".into(),
        ));
    }
    let len_out_signed = (len as isize - 1) * stride as isize - 2 * padding as isize + k as isize;
    if len_out_signed < 1 {
        return Err(Error::Shape(format!(
            "conv1d_transpose: output length {len_out_signed} for len {len}, stride {stride}, padding {padding}, k {k}"
        )));
    }
    let len_out = len_out_signed as usize;
    let (xd, kd) = (x.data(), kernel.data());
    let mut out = vec![0.0; len_out * batch * ch_out];
    for ti in 0..len {
        for kk in 0..k {
            let to = (ti * stride + kk) as isize - padding as isize;
            if to < 0 || to >= len_out as isize {
                continue;
            }
            let to = to as usize;
            for b in 0..batch {
                let xrow = &xd[(ti * batch + b) * ch_in..(ti * batch + b + 1) * ch_in];
                let orow = &mut out[(to * batch + b) * ch_out..(to * batch + b + 1) * ch_out];
                for (ci, &xv) in xrow.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let kbase = (ci * ch_out) * k + kk;
                    for (co, o) in orow.iter_mut().enumerate() {
                        *o += xv * kd[kbase + co * k];
                    }
                }
            }
        }
    }
    Ok(Tensor {
        shape: vec![len_out, batch, ch_out],
        data: out,
    })
}

fn convt1d_backward_input(
    x: &Tensor,
    kernel: &Tensor,
    g: &Tensor,
    stride: usize,
    padding: usize,
) -> Vec<f64> {
    let (len, batch, ch_in) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (_, ch_out, k) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    let len_out = g.shape()[0];
    let (kd, gd) = (kernel.data(), g.data());
    let mut dx = vec![0.0; len * batch * ch_in];
    for ti in 0..len {
        for kk in 0..k {
            let to = (ti * stride + kk) as isize - padding as isize;
            if to < 0 || to >= len_out as isize {
                continue;
            }
            let to = to as usize;
            for b in 0..batch {
                let grow = &gd[(to * batch + b) * ch_out..(to * batch + b + 1) * ch_out];
                let xrow = &mut dx[(ti * batch + b) * ch_in..(ti * batch + b + 1) * ch_in];
                for (ci, xv) in xrow.iter_mut().enumerate() {
                    let kbase = (ci * ch_out) * k + kk;
                    let mut acc = 0.0;
                    for (co, &gv) in grow.iter().enumerate() {
                        acc += gv * kd[kbase + co * k];
                    }
                    *xv += acc;
                }
            }
        }
    }
    dx
}

fn convt1d_backward_kernel(
    x: &Tensor,
    kernel: &Tensor,
    g: &Tensor,
    stride: usize,
    padding: usize,
) -> Vec<f64> {
    let (len, batch, ch_in) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (_, ch_out, k) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    let len_out = g.shape()[0];
    let (xd, gd) = (x.data(), g.data());
    let mut dk = vec![0.0; ch_in * ch_out * k];
    for ti in 0..len {
        for kk in 0..k {
            let to = (ti * stride + kk) as isize - padding as isize;
            if to < 0 || to >= len_out as isize {
                continue;
            }
            let to = to as usize;
            for b in 0..batch {
                let xrow = &xd[(ti * batch + b) * ch_in..(ti * batch + b + 1) * ch_in];
                let grow = &gd[(to * batch + b) * ch_out..(to * batch + b + 1) * ch_out];
                for (ci, &xv) in xrow.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let kbase = (ci * ch_out) * k + kk;
                    for (co, &gv) in grow.iter().enumerate() {
                        dk[kbase + co * k] += xv * gv;
                    }
                }
            }
        }
    }
    dk
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(data: &[f64]) -> Tensor {
        Tensor::from_vec(vec![data.len()], data.to_vec()).unwrap()
    }

    /// [len × 1 × 1] single-node single-channel series.
    fn series(data: &[f64]) -> Tensor {
        Tensor::from_vec(vec![data.len(), 1, 1], data.to_vec()).unwrap()
    }

    #[test]
    fn conv1d_hand_example() {
        // x=[1,2,3,4], kernel of ones, stride 2, padding 1 over [0,1,2,3,4,0].
        let mut tape = Tape::new();
        let x = tape.constant(series(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        let k = tape
            .constant(Tensor::from_vec(vec![1, 1, 4], vec![1.0; 4]).unwrap())
            .unwrap();
        let y = tape.conv1d(x, k, 2, 1).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 1, 1]);
        assert_eq!(tape.value(y).data(), &[6.0, 9.0]);
    }

    #[test]
    fn conv1d_zero_input_stays_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(series(&[0.0; 12])).unwrap();
        let k = tape
            .constant(Tensor::from_vec(vec![2, 1, 4], (1..=8).map(f64::from).collect()).unwrap())
            .unwrap();
        let y = tape.conv1d(x, k, 2, 1).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv1d_halves_standard_window() {
        let mut tape = Tape::new();
        let x = tape.constant(series(&vec![0.5; 288])).unwrap();
        let k = tape
            .constant(Tensor::from_vec(vec![1, 1, 4], vec![0.25; 4]).unwrap())
            .unwrap();
        let y = tape.conv1d(x, k, 2, 1).unwrap();
        assert_eq!(tape.value(y).shape()[0], 144);
    }

    #[test]
    fn conv1d_transpose_restores_length() {
        let mut tape = Tape::new();
        let x = tape.constant(series(&vec![1.0; 144])).unwrap();
        let k = tape
            .constant(Tensor::from_vec(vec![1, 1, 4], vec![0.5; 4]).unwrap())
            .unwrap();
        let y = tape.conv1d_transpose(x, k, 2, 1).unwrap();
        assert_eq!(tape.value(y).shape()[0], 288);

        let zeros = tape.constant(series(&[0.0; 10])).unwrap();
        let z = tape.conv1d_transpose(zeros, k, 2, 1).unwrap();
        assert!(tape.value(z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_round_trip_preserves_even_lengths() {
        // (len + 2 − 4)/2 + 1 = len/2, then (len/2 − 1)·2 − 2 + 4 = len.
        for len in (4..=64).step_by(2) {
            let mut tape = Tape::new();
            let x = tape.constant(series(&vec![1.0; len])).unwrap();
            let k = tape
                .constant(Tensor::from_vec(vec![1, 1, 4], vec![1.0; 4]).unwrap())
                .unwrap();
            let kt = tape
                .constant(Tensor::from_vec(vec![1, 1, 4], vec![1.0; 4]).unwrap())
                .unwrap();
            let down = tape.conv1d(x, k, 2, 1).unwrap();
            assert_eq!(tape.value(down).shape()[0], len / 2);
            let up = tape.conv1d_transpose(down, kt, 2, 1).unwrap();
            assert_eq!(tape.value(up).shape()[0], len);
        }
    }

    #[test]
    fn elementwise_examples() {
        let mut tape = Tape::new();
        let zero = tape.constant(t1(&[0.0])).unwrap();
        let one = tape.constant(t1(&[1.0])).unwrap();
        let s0 = tape.sigmoid(zero).unwrap();
        assert_eq!(tape.value(s0).data(), &[0.5]);
        let s1 = tape.sigmoid(one).unwrap();
        assert!((tape.value(s1).data()[0] - 0.73106).abs() < 1e-5);

        let a = tape.constant(t1(&[2.0, 3.0])).unwrap();
        let b = tape.constant(t1(&[4.0, 5.0])).unwrap();
        let h = tape.hadamard(a, b).unwrap();
        assert_eq!(tape.value(h).data(), &[8.0, 15.0]);

        let bad = tape.constant(t1(&[1.0])).unwrap();
        assert!(tape.hadamard(a, bad).is_err());
    }

    #[test]
    fn mse_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(t1(&[0.0, 0.0])).unwrap();
        let b = tape.constant(t1(&[1.0, 1.0])).unwrap();
        let m = tape.mse(a, b).unwrap();
        assert_eq!(tape.value(m).item().unwrap(), 1.0);

        let c = tape.constant(t1(&[0.0, 1.0])).unwrap();
        let m2 = tape.mse(c, b).unwrap();
        assert_eq!(tape.value(m2).item().unwrap(), 0.5);

        let m3 = tape.mse(b, b).unwrap();
        assert_eq!(tape.value(m3).item().unwrap(), 0.0);
    }

    #[test]
    fn mse_gradient_is_two_times_residual() {
        // loss = mse(p, c) with scalar p ⇒ dloss/dp = 2(p − c).
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::scalar(5.0)).unwrap();
        let c = tape.constant(Tensor::scalar(2.0)).unwrap();
        let loss = tape.mse(p, c).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[2.0 * (5.0 - 2.0)]);
        // Constants never get a slot.
        assert!(grads.get(c).is_none());
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::scalar(5.0)).unwrap();
        let unused = tape.leaf(t1(&[1.0, 2.0])).unwrap();
        let c = tape.constant(Tensor::scalar(1.0)).unwrap();
        let loss = tape.mse(p, c).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.dense(unused).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let p = tape.leaf(t1(&[1.0, 2.0])).unwrap();
        assert!(tape.backward(p).is_err());
    }

    #[test]
    fn shared_input_accumulates_both_branches() {
        // loss_a(x) uses x twice; loss_b rebuilds it with duplicated leaves.
        let build_shared = |x0: f64| {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::scalar(x0)).unwrap();
            let s = tape.sigmoid(x).unwrap();
            let d = tape.scale(x, 2.0).unwrap();
            let y = tape.add(s, d).unwrap();
            let loss = tape.sum(y).unwrap();
            let grads = tape.backward(loss).unwrap();
            grads.dense(x).data()[0]
        };
        let build_split = |x0: f64| {
            let mut tape = Tape::new();
            let x1 = tape.leaf(Tensor::scalar(x0)).unwrap();
            let x2 = tape.leaf(Tensor::scalar(x0)).unwrap();
            let s = tape.sigmoid(x1).unwrap();
            let d = tape.scale(x2, 2.0).unwrap();
            let y = tape.add(s, d).unwrap();
            let loss = tape.sum(y).unwrap();
            let grads = tape.backward(loss).unwrap();
            grads.dense(x1).data()[0] + grads.dense(x2).data()[0]
        };
        let shared = build_shared(0.37);
        let split = build_split(0.37);
        assert!((shared - split).abs() < 1e-14, "{shared} vs {split}");
    }

    #[test]
    fn forward_rejects_non_finite_results() {
        let mut tape = Tape::new();
        let big = tape.constant(t1(&[1e308])).unwrap();
        // 1e308 + 1e308 overflows to infinity.
        assert!(tape.add(big, big).is_err());
    }

    #[test]
    fn graph_mix_applies_matrix_per_timestep() {
        let mut tape = Tape::new();
        // 2 timesteps, 2 nodes, 1 channel.
        let x = tape
            .constant(Tensor::from_vec(vec![2, 2, 1], vec![1.0, 0.0, 0.5, 2.0]).unwrap())
            .unwrap();
        let m = Arc::new(Tensor::from_vec(vec![2, 2], vec![0.0, -1.0, -1.0, 0.0]).unwrap());
        let y = tape.graph_mix(m, x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, -1.0, -2.0, -0.5]);
    }

    #[test]
    fn channel_mix_matches_hand_matmul() {
        let mut tape = Tape::new();
        let x = tape
            .constant(Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        let w = tape
            .constant(Tensor::from_vec(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap())
            .unwrap();
        let y = tape.channel_mix(x, w).unwrap();
        assert_eq!(tape.value(y).data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    /// Central finite differences on a scalar-valued graph builder.
    fn finite_difference_check(
        inputs: &[Tensor],
        build: impl Fn(&mut Tape, &[NodeId]) -> NodeId,
        rel_tol: f64,
    ) {
        let eval = |tensors: &[Tensor]| -> (f64, Vec<Tensor>) {
            let mut tape = Tape::new();
            let ids: Vec<NodeId> = tensors
                .iter()
                .map(|t| tape.leaf(t.clone()).unwrap())
                .collect();
            let loss = build(&mut tape, &ids);
            let value = tape.value(loss).item().unwrap();
            let grads = tape.backward(loss).unwrap();
            let dense: Vec<Tensor> = ids.iter().map(|&id| grads.dense(id)).collect();
            (value, dense)
        };
        let (_, analytic) = eval(inputs);
        let h = 1e-5;
        for (ti, tensor) in inputs.iter().enumerate() {
            for ei in 0..tensor.len() {
                let mut plus = inputs.to_vec();
                plus[ti].data_mut()[ei] += h;
                let mut minus = inputs.to_vec();
                minus[ti].data_mut()[ei] -= h;
                let fd = (eval(&plus).0 - eval(&minus).0) / (2.0 * h);
                let an = analytic[ti].data()[ei];
                let denom = an.abs().max(fd.abs()).max(1e-6);
                assert!(
                    (fd - an).abs() / denom < rel_tol,
                    "input {ti} element {ei}: fd {fd} vs analytic {an}"
                );
            }
        }
    }

    fn ramp(shape: Vec<usize>, scale: f64, offset: f64) -> Tensor {
        let len: usize = shape.iter().product();
        let data = (0..len)
            .map(|i| ((i * 7919 + 13) % 101) as f64 / 101.0 * scale + offset)
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn gradients_match_finite_differences_per_op() {
        // conv1d over both inputs.
        finite_difference_check(
            &[
                ramp(vec![6, 2, 2], 1.0, -0.4),
                ramp(vec![3, 2, 4], 0.5, -0.2),
            ],
            |tape, ids| {
                let y = tape.conv1d(ids[0], ids[1], 2, 1).unwrap();
                let r = tape.constant(ramp(vec![3, 2, 3], 1.0, 0.1)).unwrap();
                let w = tape.hadamard(y, r).unwrap();
                tape.sum(w).unwrap()
            },
            1e-4,
        );
        // conv1d_transpose over both inputs.
        finite_difference_check(
            &[
                ramp(vec![4, 2, 3], 1.0, -0.5),
                ramp(vec![3, 2, 4], 0.7, -0.3),
            ],
            |tape, ids| {
                let y = tape.conv1d_transpose(ids[0], ids[1], 2, 1).unwrap();
                let shape = tape.value(y).shape().to_vec();
                let r = tape.constant(ramp(shape, 1.0, 0.2)).unwrap();
                let w = tape.hadamard(y, r).unwrap();
                tape.sum(w).unwrap()
            },
            1e-4,
        );
        // sigmoid/hadamard/add/sub/scale chain.
        finite_difference_check(
            &[ramp(vec![5], 2.0, -1.0), ramp(vec![5], 1.0, 0.3)],
            |tape, ids| {
                let s = tape.sigmoid(ids[0]).unwrap();
                let h = tape.hadamard(s, ids[1]).unwrap();
                let d = tape.sub(h, ids[1]).unwrap();
                let a = tape.add(d, ids[0]).unwrap();
                let sc = tape.scale(a, 1.7).unwrap();
                tape.sum(sc).unwrap()
            },
            1e-4,
        );
        // mse over both sides.
        finite_difference_check(
            &[ramp(vec![7], 1.0, 0.0), ramp(vec![7], 1.0, 0.5)],
            |tape, ids| tape.mse(ids[0], ids[1]).unwrap(),
            1e-4,
        );
        // graph_mix + channel_mix + add_bias + reshape.
        let m = Arc::new(
            Tensor::from_vec(
                vec![3, 3],
                vec![0.0, 0.6, 0.1, 0.6, 0.0, 0.3, 0.1, 0.3, 0.0],
            )
            .unwrap(),
        );
        finite_difference_check(
            &[
                ramp(vec![2, 3, 2], 1.0, -0.5),
                ramp(vec![2, 4], 0.8, -0.4),
                ramp(vec![4], 0.5, 0.0),
            ],
            move |tape, ids| {
                let gm = tape.graph_mix(Arc::clone(&m), ids[0]).unwrap();
                let cm = tape.channel_mix(gm, ids[1]).unwrap();
                let flat = tape.reshape(cm, vec![6, 4]).unwrap();
                let biased = tape.add_bias(flat, ids[2]).unwrap();
                let r = tape.constant(ramp(vec![6, 4], 1.0, 0.1)).unwrap();
                let w = tape.hadamard(biased, r).unwrap();
                tape.sum(w).unwrap()
            },
            1e-4,
        );
    }
}
