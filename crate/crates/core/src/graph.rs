//! Reverse-mode automatic differentiation tape.
//!
//! A [`Graph`] is an append-only list of nodes. Each node stores its forward
//! value and whatever the backward rule needs; inputs always have smaller ids
//! than the node that consumes them. [`Graph::backward`] sweeps ids in
//! descending order, so gradient accumulation order is fixed.

use crate::error::{Error, Result};
use crate::kernels::{self, Geometry, NormCache, Wanted};
use crate::rng::RngState;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu(alpha) => {
                if x > 0.0 {
                    x
                } else {
                    alpha * x
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }
}

/// Deliberate derivative errors for exercising the gradient checker.
/// The switch is per thread and off by default.
#[doc(hidden)]
pub mod fault {
    use std::cell::Cell;

    thread_local! {
        static TANH: Cell<bool> = const { Cell::new(false) };
    }

    /// Scales the tanh derivative by 1.1 on this thread while enabled.
    pub fn break_tanh_derivative(on: bool) {
        TANH.with(|c| c.set(on));
    }

    pub(crate) fn tanh_factor() -> f64 {
        if TANH.with(Cell::get) {
            1.1
        } else {
            1.0
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug)]
enum Op<S: Scalar> {
    Leaf,
    Conv2d(Geometry),
    ConvTranspose2d(Geometry),
    BatchNorm {
        cache: NormCache<S>,
        frozen: bool,
    },
    Activation(Activation),
    Dropout(Vec<S>),
    Concat,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Abs,
    Sum,
    Mean,
    BceWithLogits(f64),
}

#[derive(Clone, Debug)]
struct Node<S: Scalar> {
    op: Op<S>,
    inputs: Vec<NodeId>,
    value: Tensor<S>,
    requires_grad: bool,
}

/// Operation tape plus per-node values and gradients.
#[derive(Clone, Debug, Default)]
pub struct Graph<S: Scalar = f32> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<S>, inputs: Vec<NodeId>, value: Tensor<S>) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.push_with(op, inputs, value, requires_grad)
    }

    fn push_with(
        &mut self,
        op: Op<S>,
        inputs: Vec<NodeId>,
        value: Tensor<S>,
        requires_grad: bool,
    ) -> NodeId {
        let id = NodeId(self.nodes.len());
        debug_assert!(inputs.iter().all(|i| i.0 < id.0));
        self.nodes.push(Node {
            op,
            inputs,
            value,
            requires_grad,
        });
        self.grads.push(None);
        id
    }

    /// A constant leaf; no gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor<S>) -> NodeId {
        self.push_with(Op::Leaf, Vec::new(), value, false)
    }

    /// A trainable leaf; its gradient is available after [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<S>) -> NodeId {
        self.push_with(Op::Leaf, Vec::new(), value, true)
    }

    /// Copies a node's value into a fresh constant, cutting gradient flow.
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let value = self.nodes[id.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor<S>> {
        self.grads[id.0].as_ref()
    }

    pub fn take_grad(&mut self, id: NodeId) -> Option<Tensor<S>> {
        self.grads[id.0].take()
    }

    /// Per-channel `(mean, biased variance)` of an NCHW node.
    pub fn channel_stats(&self, id: NodeId) -> Result<Vec<(f64, f64)>> {
        let v = self.value(id);
        Ok(kernels::channel_stats(v.data(), v.dims4("channel_stats")?))
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        const OP: &str = "conv2d";
        let [n, c, h, w] = self.value(input).dims4(OP)?;
        let [f, wc, kh, kw] = self.value(weight).dims4(OP)?;
        if wc != c {
            return Err(Error::shape(OP, format!("input channels {c} vs weight channels {wc}")));
        }
        check_bias(OP, self.value(bias), f)?;
        if stride == 0 {
            return Err(Error::shape(OP, "stride must be at least 1"));
        }
        if kh > h + 2 * pad {
            return Err(Error::shape(OP, format!("kernel height {kh} exceeds padded height {}", h + 2 * pad)));
        }
        if kw > w + 2 * pad {
            return Err(Error::shape(OP, format!("kernel width {kw} exceeds padded width {}", w + 2 * pad)));
        }
        let geom = Geometry {
            channels: c,
            height: h,
            width: w,
            kh,
            kw,
            stride,
            pad,
            out_h: (h + 2 * pad - kh) / stride + 1,
            out_w: (w + 2 * pad - kw) / stride + 1,
        };
        let out = kernels::conv2d_forward(
            &geom,
            n,
            f,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new(&[n, f, geom.out_h, geom.out_w], out)?;
        Ok(self.push(Op::Conv2d(geom), vec![input, weight, bias], value))
    }

    /// Transposed convolution; `weight` is `[in_channels, out_channels, kh, kw]`.
    pub fn conv_transpose2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        const OP: &str = "conv_transpose2d";
        let [n, c, h, w] = self.value(input).dims4(OP)?;
        let [wc, f, kh, kw] = self.value(weight).dims4(OP)?;
        if wc != c {
            return Err(Error::shape(OP, format!("input channels {c} vs weight channels {wc}")));
        }
        check_bias(OP, self.value(bias), f)?;
        if stride == 0 {
            return Err(Error::shape(OP, "stride must be at least 1"));
        }
        let out_h = ((h - 1) * stride + kh).checked_sub(2 * pad).filter(|&v| v > 0);
        let out_w = ((w - 1) * stride + kw).checked_sub(2 * pad).filter(|&v| v > 0);
        let (Some(out_h), Some(out_w)) = (out_h, out_w) else {
            return Err(Error::shape(OP, format!("padding {pad} leaves no output for {h}x{w} input")));
        };
        let geom = Geometry {
            channels: f,
            height: out_h,
            width: out_w,
            kh,
            kw,
            stride,
            pad,
            out_h: h,
            out_w: w,
        };
        let out = kernels::conv_transpose2d_forward(
            &geom,
            n,
            c,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new(&[n, f, out_h, out_w], out)?;
        Ok(self.push(Op::ConvTranspose2d(geom), vec![input, weight, bias], value))
    }

    /// Batch normalization with statistics from the current batch.
    pub fn batch_norm2d(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        const OP: &str = "batch_norm2d";
        let dims = self.check_norm(input, gamma, beta)?;
        let [n, _, h, w] = dims;
        if n * h * w < 2 {
            return Err(Error::Degenerate {
                op: OP,
                detail: format!("need at least 2 values per channel, got {}", n * h * w),
            });
        }
        let stats = self.channel_stats(input)?;
        if eps == 0.0 {
            if let Some(ch) = stats.iter().position(|&(_, var)| var == 0.0) {
                return Err(Error::Degenerate {
                    op: OP,
                    detail: format!("channel {ch} has zero variance and eps is 0"),
                });
            }
        }
        self.norm_node(input, gamma, beta, eps, &stats, false)
    }

    /// Batch normalization with externally supplied statistics, which are
    /// treated as constants by the backward pass.
    pub fn batch_norm2d_frozen(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
        stats: &[(f64, f64)],
    ) -> Result<NodeId> {
        let [_, c, _, _] = self.check_norm(input, gamma, beta)?;
        if stats.len() != c {
            return Err(Error::shape(
                "batch_norm2d",
                format!("{} frozen statistics for {c} channels", stats.len()),
            ));
        }
        self.norm_node(input, gamma, beta, eps, stats, true)
    }

    fn check_norm(&self, input: NodeId, gamma: NodeId, beta: NodeId) -> Result<[usize; 4]> {
        const OP: &str = "batch_norm2d";
        let dims = self.value(input).dims4(OP)?;
        for (name, id) in [("gamma", gamma), ("beta", beta)] {
            if self.value(id).shape() != [dims[1]] {
                return Err(Error::shape(
                    OP,
                    format!("{name} shape {:?} for {} channels", self.value(id).shape(), dims[1]),
                ));
            }
        }
        Ok(dims)
    }

    fn norm_node(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
        stats: &[(f64, f64)],
        frozen: bool,
    ) -> Result<NodeId> {
        let x = self.value(input);
        let dims = x.dims4("batch_norm2d")?;
        let (out, cache) = kernels::batch_norm_forward(
            x.data(),
            dims,
            stats,
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        );
        let value = Tensor::new(&dims, out)?;
        Ok(self.push(Op::BatchNorm { cache, frozen }, vec![input, gamma, beta], value))
    }

    pub fn activation(&mut self, input: NodeId, kind: Activation) -> Result<NodeId> {
        if let Activation::LeakyRelu(alpha) = kind {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::Config(format!("leaky_relu slope {alpha} outside (0, 1)")));
            }
        }
        let value = self
            .value(input)
            .map(|v| S::from_f64(kind.apply(v.as_f64())));
        Ok(self.push(Op::Activation(kind), vec![input], value))
    }

    /// Inverted dropout: zeroes each element with probability `rate` and
    /// scales survivors by `1 / (1 - rate)`. One uniform draw per element.
    pub fn dropout(&mut self, input: NodeId, rate: f64, rng: &mut RngState) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            let value = self.value(input).clone();
            let mask = vec![S::one(); value.numel()];
            return Ok(self.push(Op::Dropout(mask), vec![input], value));
        }
        let keep = S::from_f64(1.0 / (1.0 - rate));
        let rate = rate as f32;
        let x = self.value(input);
        let mask: Vec<S> = (0..x.numel())
            .map(|_| if rng.uniform_f32() >= rate { keep } else { S::zero() })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(x.shape(), data)?;
        Ok(self.push(Op::Dropout(mask), vec![input], value))
    }

    /// Channel-wise concatenation of two NCHW tensors; `a` comes first.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        const OP: &str = "concat_channels";
        let [n, ca, h, w] = self.value(a).dims4(OP)?;
        let [nb, cb, hb, wb] = self.value(b).dims4(OP)?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::shape(
                OP,
                format!("N,H,W differ: {:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let plane = h * w;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(n * (ca + cb) * plane);
        for i in 0..n {
            data.extend_from_slice(&va[i * ca * plane..(i + 1) * ca * plane]);
            data.extend_from_slice(&vb[i * cb * plane..(i + 1) * cb * plane]);
        }
        let value = Tensor::new(&[n, ca + cb, h, w], data)?;
        Ok(self.push(Op::Concat, vec![a, b], value))
    }

    fn binary(
        &mut self,
        op: Op<S>,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(S, S) -> S,
    ) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(name, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape(), data)?;
        Ok(self.push(op, vec![a, b], value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Add, "add", a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Sub, "sub", a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(Op::Mul, "mul", a, b, |x, y| x * y)
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> NodeId {
        let f = S::from_f64(factor);
        let value = self.value(input).map(|v| v * f);
        self.push(Op::Scale(factor), vec![input], value)
    }

    pub fn abs(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).map(|v| v.abs());
        self.push(Op::Abs, vec![input], value)
    }

    /// Sum of all elements, accumulated in `f64`.
    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let s: f64 = self.value(input).data().iter().map(|v| v.as_f64()).sum();
        self.push(Op::Sum, vec![input], Tensor::scalar(S::from_f64(s)))
    }

    pub fn mean(&mut self, input: NodeId) -> NodeId {
        let m = self.value(input).mean();
        self.push(Op::Mean, vec![input], Tensor::scalar(S::from_f64(m)))
    }

    /// Mean binary cross-entropy of raw scores against a constant label,
    /// evaluated as `max(s,0) - s·t + ln(1 + exp(-|s|))`.
    pub fn bce_with_logits(&mut self, scores: NodeId, target: f64) -> NodeId {
        let v = self.value(scores);
        let total: f64 = v
            .data()
            .iter()
            .map(|s| {
                let s = s.as_f64();
                s.max(0.0) - s * target + (-s.abs()).exp().ln_1p()
            })
            .sum();
        let value = Tensor::scalar(S::from_f64(total / v.numel() as f64));
        self.push(Op::BceWithLogits(target), vec![scores], value)
    }

    /// Hash of the sign pattern at every non-differentiable point the graph
    /// has evaluated: inputs of relu-like activations and of `abs`. Two
    /// graphs with equal signatures lie in the same linear piece.
    pub fn kink_signature(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for node in &self.nodes {
            let kinked = matches!(
                node.op,
                Op::Abs | Op::Activation(Activation::Relu | Activation::LeakyRelu(_))
            );
            if kinked {
                for v in self.value(node.inputs[0]).data() {
                    (*v > S::zero()).hash(&mut h);
                    (*v < S::zero()).hash(&mut h);
                }
            }
        }
        h.finish()
    }

    /// Back-propagates from a scalar root. Gradients are stored for every
    /// node that depends on a [`Graph::param`] leaf; earlier gradients are
    /// cleared first.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        let root_shape = self.value(root).shape().to_vec();
        if root_shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarRoot(root_shape));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        self.grads[root.0] = Some(Tensor::ones(&root_shape));
        for id in (0..=root.0).rev() {
            let Some(grad) = self.grads[id].take() else {
                continue;
            };
            if self.nodes[id].requires_grad {
                let contributions = self.node_backward(id, &grad)?;
                for (input, g) in contributions {
                    self.accumulate(input, g);
                }
            }
            self.grads[id] = Some(grad);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, g: Tensor<S>) {
        match &mut self.grads[id.0] {
            Some(existing) => {
                for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                    *a = *a + *b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn node_backward(&self, id: usize, grad: &Tensor<S>) -> Result<Vec<(NodeId, Tensor<S>)>> {
        let node = &self.nodes[id];
        let ins = &node.inputs;
        let mut out = Vec::with_capacity(ins.len());
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d(geom) | Op::ConvTranspose2d(geom) => {
                let (x, w) = (self.value(ins[0]), self.value(ins[1]));
                let want = Wanted {
                    input: self.needs(ins[0]),
                    params: self.needs(ins[1]) || self.needs(ins[2]),
                };
                let n = x.shape()[0];
                let grads = if matches!(node.op, Op::Conv2d(_)) {
                    kernels::conv2d_backward(geom, n, w.shape()[0], x.data(), w.data(), grad.data(), want)
                } else {
                    kernels::conv_transpose2d_backward(geom, n, x.shape()[1], x.data(), w.data(), grad.data(), want)
                };
                if let Some(dx) = grads.input {
                    out.push((ins[0], Tensor::new(x.shape(), dx)?));
                }
                if let (Some(dw), Some(db)) = (grads.weight, grads.bias) {
                    out.push((ins[1], Tensor::new(w.shape(), dw)?));
                    out.push((ins[2], Tensor::new(self.value(ins[2]).shape(), db)?));
                }
            }
            Op::BatchNorm { cache, frozen } => {
                let x = self.value(ins[0]);
                let gamma = self.value(ins[1]);
                let (dx, dg, db) = kernels::batch_norm_backward(
                    cache,
                    x.dims4("batch_norm2d")?,
                    gamma.data(),
                    grad.data(),
                    *frozen,
                );
                out.push((ins[0], Tensor::new(x.shape(), dx)?));
                out.push((ins[1], Tensor::new(gamma.shape(), dg)?));
                out.push((ins[2], Tensor::new(gamma.shape(), db)?));
            }
            Op::Activation(kind) => {
                let x = self.value(ins[0]);
                let y = &node.value;
                let tanh_factor = S::from_f64(fault::tanh_factor());
                let data = x
                    .data()
                    .iter()
                    .zip(y.data())
                    .zip(grad.data())
                    .map(|((&xv, &yv), &g)| {
                        let d = match kind {
                            Activation::LeakyRelu(alpha) => {
                                if xv > S::zero() {
                                    S::one()
                                } else {
                                    S::from_f64(*alpha)
                                }
                            }
                            Activation::Relu => {
                                if xv > S::zero() {
                                    S::one()
                                } else {
                                    S::zero()
                                }
                            }
                            Activation::Tanh => (S::one() - yv * yv) * tanh_factor,
                            Activation::Sigmoid => yv * (S::one() - yv),
                        };
                        d * g
                    })
                    .collect();
                out.push((ins[0], Tensor::new(x.shape(), data)?));
            }
            Op::Dropout(mask) => {
                let data = grad.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                out.push((ins[0], Tensor::new(grad.shape(), data)?));
            }
            Op::Concat => {
                let [n, ca, h, w] = self.value(ins[0]).dims4("concat_channels")?;
                let cb = self.value(ins[1]).shape()[1];
                let plane = h * w;
                let mut ga = Vec::with_capacity(n * ca * plane);
                let mut gb = Vec::with_capacity(n * cb * plane);
                for sample in grad.data().chunks((ca + cb) * plane) {
                    ga.extend_from_slice(&sample[..ca * plane]);
                    gb.extend_from_slice(&sample[ca * plane..]);
                }
                out.push((ins[0], Tensor::new(&[n, ca, h, w], ga)?));
                out.push((ins[1], Tensor::new(&[n, cb, h, w], gb)?));
            }
            Op::Add => {
                out.push((ins[0], grad.clone()));
                out.push((ins[1], grad.clone()));
            }
            Op::Sub => {
                out.push((ins[0], grad.clone()));
                out.push((ins[1], grad.map(|g| -g)));
            }
            Op::Mul => {
                let (a, b) = (self.value(ins[0]), self.value(ins[1]));
                let da = grad.data().iter().zip(b.data()).map(|(&g, &v)| g * v).collect();
                let db = grad.data().iter().zip(a.data()).map(|(&g, &v)| g * v).collect();
                out.push((ins[0], Tensor::new(a.shape(), da)?));
                out.push((ins[1], Tensor::new(b.shape(), db)?));
            }
            Op::Scale(factor) => {
                let f = S::from_f64(*factor);
                out.push((ins[0], grad.map(|g| g * f)));
            }
            Op::Abs => {
                let x = self.value(ins[0]);
                let data = x
                    .data()
                    .iter()
                    .zip(grad.data())
                    .map(|(&v, &g)| {
                        if v > S::zero() {
                            g
                        } else if v < S::zero() {
                            -g
                        } else {
                            S::zero()
                        }
                    })
                    .collect();
                out.push((ins[0], Tensor::new(x.shape(), data)?));
            }
            Op::Sum => {
                out.push((ins[0], Tensor::full(self.value(ins[0]).shape(), grad.item())));
            }
            Op::Mean => {
                let x = self.value(ins[0]);
                let g = S::from_f64(grad.item().as_f64() / x.numel() as f64);
                out.push((ins[0], Tensor::full(x.shape(), g)));
            }
            Op::BceWithLogits(target) => {
                let s = self.value(ins[0]);
                let scale = grad.item().as_f64() / s.numel() as f64;
                let g = s.map(|v| S::from_f64((sigmoid(v.as_f64()) - target) * scale));
                out.push((ins[0], g));
            }
        }
        Ok(out
            .into_iter()
            .filter(|(input, _)| self.needs(*input))
            .collect())
    }
}

fn check_bias<S: Scalar>(op: &'static str, bias: &Tensor<S>, channels: usize) -> Result<()> {
    if bias.shape() != [channels] {
        return Err(Error::shape(
            op,
            format!("bias shape {:?} for {channels} output channels", bias.shape()),
        ));
    }
    Ok(())
}
