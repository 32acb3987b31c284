//! Reverse-mode automatic differentiation over a recorded operation tape.
//!
//! A [`TapeGraph`] is built once from named inputs and primitive operations,
//! then evaluated any number of times with fresh bindings. Nodes are appended
//! in construction order, so the node list is always a valid topological
//! order. Forward evaluation keeps every intermediate value on the tape;
//! [`TapeGraph::backward`] walks the tape in reverse and returns the gradient
//! of the scalar loss with respect to every node.
//!
//! [`Op::Tap`] is an identity node marking a noise-injection site. During a
//! forward pass a hook may rewrite the tapped value in place; the gradient
//! reported for the tap node is the gradient with respect to the tensor
//! entering that site.
//!
//! ReLU uses the subgradient 0 at exactly 0.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index of a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(index: usize) -> Self {
        Self(index)
    }
}

/// Primitive operations.
#[derive(Clone, Debug)]
pub enum Op {
    /// Free input bound at evaluation time; `slot` is its position in the
    /// graph's input list.
    Input {
        name: String,
        slot: usize,
    },
    Constant(Tensor),
    /// `[m,k] x [k]` or `[m,k] x [k,n]`.
    MatMul(NodeId, NodeId),
    /// Input `[c,h,w]`, kernel `[o,c,kh,kw]`, zero padding.
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Adds `bias[c]` to every element of channel `c` (leading axis).
    BiasAdd(NodeId, NodeId),
    Relu(NodeId),
    /// `[c, ...]` to `[c]` by averaging each channel.
    GlobalAvgPool(NodeId),
    Flatten(NodeId),
    /// `-sum_i target_i * log_softmax(logits)_i`.
    SoftmaxCrossEntropy {
        logits: NodeId,
        target: NodeId,
    },
    /// `0.5 * ||prediction - target||^2`.
    SquaredError {
        prediction: NodeId,
        target: NodeId,
    },
    /// Identity marking noise site `site`.
    Tap {
        input: NodeId,
        site: usize,
    },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Constant(_) => "constant",
            Op::MatMul(..) => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::BiasAdd(..) => "bias_add",
            Op::Relu(_) => "relu",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::Flatten(_) => "flatten",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::SquaredError { .. } => "squared_error",
            Op::Tap { .. } => "tap",
        }
    }

    fn parents(&self) -> Vec<NodeId> {
        match *self {
            Op::Input { .. } | Op::Constant(_) => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) | Op::BiasAdd(a, b) => vec![a, b],
            Op::Conv2d { input, kernel, .. } => vec![input, kernel],
            Op::Scale(a, _) | Op::Relu(a) | Op::GlobalAvgPool(a) | Op::Flatten(a) | Op::Tap { input: a, .. } => vec![a],
            Op::SoftmaxCrossEntropy { logits, target } => vec![logits, target],
            Op::SquaredError { prediction, target } => vec![prediction, target],
        }
    }
}

/// Gradients of the loss with respect to every node, indexed by [`NodeId`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn take(&mut self, id: NodeId) -> Tensor {
        core::mem::replace(&mut self.grads[id.0], Tensor::scalar(0.0))
    }

    /// Gradients of every node in tape order.
    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// A recorded computation with one scalar sink.
#[derive(Clone, Debug, Default)]
pub struct TapeGraph {
    ops: Vec<Op>,
    inputs: Vec<NodeId>,
    loss: Option<NodeId>,
    values: Vec<Tensor>,
    evaluated: bool,
}

impl TapeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op) -> NodeId {
        for p in op.parents() {
            assert!(p.0 < self.ops.len(), "operand {} not yet on the tape", p.0);
        }
        self.evaluated = false;
        self.ops.push(op);
        NodeId(self.ops.len() - 1)
    }

    pub fn input(&mut self, name: &str) -> NodeId {
        let slot = self.inputs.len();
        let id = self.push(Op::Input {
            name: name.to_string(),
            slot,
        });
        self.inputs.push(id);
        id
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant(value))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, stride: usize, padding: usize) -> NodeId {
        self.push(Op::Conv2d {
            input,
            kernel,
            stride,
            padding,
        })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        self.push(Op::Scale(a, factor))
    }

    pub fn bias_add(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        self.push(Op::BiasAdd(x, bias))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Relu(x))
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        self.push(Op::GlobalAvgPool(x))
    }

    pub fn flatten(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Flatten(x))
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, target: NodeId) -> NodeId {
        self.push(Op::SoftmaxCrossEntropy { logits, target })
    }

    pub fn squared_error(&mut self, prediction: NodeId, target: NodeId) -> NodeId {
        self.push(Op::SquaredError { prediction, target })
    }

    pub fn tap(&mut self, input: NodeId, site: usize) -> NodeId {
        self.push(Op::Tap { input, site })
    }

    pub fn set_loss(&mut self, id: NodeId) {
        assert!(id.0 < self.ops.len(), "loss node {} not on the tape", id.0);
        self.loss = Some(id);
        self.evaluated = false;
    }

    pub fn loss_node(&self) -> Option<NodeId> {
        self.loss
    }

    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    pub fn input_names(&self) -> impl Iterator<Item = &str> {
        self.inputs.iter().map(|id| match &self.ops[id.0] {
            Op::Input { name, .. } => name.as_str(),
            _ => unreachable!(),
        })
    }

    /// Value computed for `id` by the last successful forward pass.
    pub fn value(&self, id: NodeId) -> Option<&Tensor> {
        if self.evaluated {
            self.values.get(id.0)
        } else {
            None
        }
    }

    /// Evaluates the graph with inputs bound by name and returns the scalar loss.
    pub fn evaluate(&mut self, bindings: &BTreeMap<String, Tensor>) -> Result<Tensor> {
        let mut bound = Vec::with_capacity(self.inputs.len());
        for name in self.input_names() {
            bound.push(bindings.get(name).ok_or_else(|| Error::Unbound(name.to_string()))?);
        }
        // The borrow of `self` through `input_names` ends before evaluation.
        let bound: Vec<Tensor> = bound.into_iter().cloned().collect();
        let refs: Vec<&Tensor> = bound.iter().collect();
        self.evaluate_inputs(&refs).map(Tensor::scalar)
    }

    /// Evaluates with inputs given in declaration order.
    pub fn evaluate_inputs(&mut self, inputs: &[&Tensor]) -> Result<f64> {
        self.run(inputs, &mut |_, _| {})
    }

    /// Like [`evaluate_inputs`](Self::evaluate_inputs), calling `hook(site, value)`
    /// on every tap node so the value entering that site can be rewritten.
    pub fn evaluate_with_hook(&mut self, inputs: &[&Tensor], hook: &mut dyn FnMut(usize, &mut Tensor)) -> Result<f64> {
        self.run(inputs, hook)
    }

    fn run(&mut self, inputs: &[&Tensor], hook: &mut dyn FnMut(usize, &mut Tensor)) -> Result<f64> {
        self.evaluated = false;
        let loss = self.loss.ok_or(Error::NoLoss)?;
        if inputs.len() != self.inputs.len() {
            return Err(Error::InputCount {
                expected: self.inputs.len(),
                found: inputs.len(),
            });
        }
        let mut values = core::mem::take(&mut self.values);
        values.clear();
        for (id, op) in self.ops.iter().enumerate() {
            let mut v = forward(id, op, &values, inputs)?;
            if let Op::Tap { site, .. } = *op {
                hook(site, &mut v);
            }
            values.push(v);
        }
        let out = &values[loss.0];
        if out.len() != 1 {
            let shape = out.shape().to_vec();
            self.values = values;
            return Err(Error::NonScalarLoss { node: loss.0, shape });
        }
        let result = out.data()[0];
        self.values = values;
        self.evaluated = true;
        Ok(result)
    }

    /// Gradient of the loss with respect to every node of the last forward pass.
    pub fn backward(&self) -> Result<Gradients> {
        self.backward_scaled(1.0)
    }

    /// Backward pass seeded with `seed` instead of 1.
    pub fn backward_scaled(&self, seed: f64) -> Result<Gradients> {
        if !self.evaluated {
            return Err(Error::BackwardBeforeForward);
        }
        let loss = self.loss.ok_or(Error::NoLoss)?;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.ops.len()];
        grads[loss.0] = Some(vec![seed]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            backward_op(&self.ops[id], &g, &self.values, &mut grads);
            grads[id] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.values)
            .map(|(g, v)| match g {
                Some(g) => Tensor::from_raw(v.shape().to_vec(), g),
                None => Tensor::zeros(v.shape()),
            })
            .collect();
        Ok(Gradients { grads })
    }
}

fn shape_err(node: usize, op: &Op, detail: String) -> Error {
    Error::NodeShape {
        node,
        op: op.name(),
        detail,
    }
}

fn conv_out(extent: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = extent + 2 * padding;
    if stride == 0 || padded < kernel {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

fn forward(id: usize, op: &Op, values: &[Tensor], inputs: &[&Tensor]) -> Result<Tensor> {
    let v = |n: NodeId| &values[n.0];
    Ok(match *op {
        Op::Input { slot, .. } => inputs[slot].clone(),
        Op::Constant(ref t) => t.clone(),
        Op::MatMul(a, b) => {
            let (a, b) = (v(a), v(b));
            let (sa, sb) = (a.shape(), b.shape());
            if sa.len() != 2 || sb.is_empty() || sb.len() > 2 || sa[1] != sb[0] {
                return Err(shape_err(id, op, format!("cannot multiply {sa:?} by {sb:?}")));
            }
            let (m, k) = (sa[0], sa[1]);
            let n = if sb.len() == 2 { sb[1] } else { 1 };
            let (ad, bd) = (a.data(), b.data());
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for l in 0..k {
                    let av = ad[i * k + l];
                    for j in 0..n {
                        out[i * n + j] += av * bd[l * n + j];
                    }
                }
            }
            let shape = if sb.len() == 2 { vec![m, n] } else { vec![m] };
            Tensor::from_raw(shape, out)
        }
        Op::Conv2d {
            input,
            kernel,
            stride,
            padding,
        } => {
            let (x, k) = (v(input), v(kernel));
            let (sx, sk) = (x.shape(), k.shape());
            if sx.len() != 3 || sk.len() != 4 || sx[0] != sk[1] {
                return Err(shape_err(
                    id,
                    op,
                    format!("input {sx:?} incompatible with kernel {sk:?}"),
                ));
            }
            let (c, h, w) = (sx[0], sx[1], sx[2]);
            let (o, kh, kw) = (sk[0], sk[2], sk[3]);
            let (Some(oh), Some(ow)) = (conv_out(h, kh, stride, padding), conv_out(w, kw, stride, padding)) else {
                return Err(shape_err(
                    id,
                    op,
                    format!("kernel {sk:?} with stride {stride} does not fit {sx:?}"),
                ));
            };
            let (xd, kd) = (x.data(), k.data());
            let mut out = vec![0.0; o * oh * ow];
            for oc in 0..o {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = 0.0;
                        for ic in 0..c {
                            for i in 0..kh {
                                let iy = (y * stride + i) as isize - padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for j in 0..kw {
                                    let ix = (xx * stride + j) as isize - padding as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    acc += kd[((oc * c + ic) * kh + i) * kw + j]
                                        * xd[(ic * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                        out[(oc * oh + y) * ow + xx] = acc;
                    }
                }
            }
            Tensor::from_raw(vec![o, oh, ow], out)
        }
        Op::Add(a, b) | Op::Mul(a, b) => {
            let (a, b) = (v(a), v(b));
            if a.shape() != b.shape() {
                return Err(shape_err(
                    id,
                    op,
                    format!("operand shapes {:?} and {:?} differ", a.shape(), b.shape()),
                ));
            }
            let mul = matches!(op, Op::Mul(..));
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| if mul { x * y } else { x + y })
                .collect();
            Tensor::from_raw(a.shape().to_vec(), data)
        }
        Op::Scale(a, c) => v(a).map(|x| c * x),
        Op::BiasAdd(x, b) => {
            let (x, b) = (v(x), v(b));
            let channels = x.shape().first().copied().unwrap_or(1);
            if b.shape().len() != 1 || b.len() != channels || x.shape().is_empty() {
                return Err(shape_err(
                    id,
                    op,
                    format!("bias {:?} does not match input {:?}", b.shape(), x.shape()),
                ));
            }
            let block = x.len() / channels;
            let data = x
                .data()
                .iter()
                .enumerate()
                .map(|(i, val)| val + b.data()[i / block])
                .collect();
            Tensor::from_raw(x.shape().to_vec(), data)
        }
        Op::Relu(a) => v(a).map(|x| if x > 0.0 { x } else { 0.0 }),
        Op::GlobalAvgPool(a) => {
            let a = v(a);
            if a.shape().len() < 2 {
                return Err(shape_err(
                    id,
                    op,
                    format!("needs a channel axis plus spatial axes, got {:?}", a.shape()),
                ));
            }
            let c = a.shape()[0];
            let block = a.len() / c;
            let data = a
                .data()
                .chunks(block)
                .map(|ch| ch.iter().sum::<f64>() / block as f64)
                .collect();
            Tensor::from_raw(vec![c], data)
        }
        Op::Flatten(a) => {
            let a = v(a);
            Tensor::from_raw(vec![a.len()], a.data().to_vec())
        }
        Op::SoftmaxCrossEntropy { logits, target } => {
            let (z, t) = (v(logits), v(target));
            if z.shape().len() != 1 || z.shape() != t.shape() {
                return Err(shape_err(
                    id,
                    op,
                    format!("logits {:?} vs target {:?}", z.shape(), t.shape()),
                ));
            }
            let lse = log_sum_exp(z.data());
            let loss = z.data().iter().zip(t.data()).map(|(zi, ti)| ti * (lse - zi)).sum();
            Tensor::scalar(loss)
        }
        Op::SquaredError { prediction, target } => {
            let (p, t) = (v(prediction), v(target));
            if p.len() != t.len() {
                return Err(shape_err(
                    id,
                    op,
                    format!("prediction {:?} vs target {:?}", p.shape(), t.shape()),
                ));
            }
            let sq: f64 = p.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum();
            Tensor::scalar(0.5 * sq)
        }
        Op::Tap { input, .. } => v(input).clone(),
    })
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + libm::log(z.iter().map(|&x| libm::exp(x - max)).sum::<f64>())
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
    grads[id.0].get_or_insert_with(|| vec![0.0; len])
}

fn backward_op(op: &Op, g: &[f64], values: &[Tensor], grads: &mut [Option<Vec<f64>>]) {
    let v = |n: NodeId| &values[n.0];
    match *op {
        Op::Input { .. } | Op::Constant(_) => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (v(a), v(b));
            let (m, k) = (av.shape()[0], av.shape()[1]);
            let n = if bv.shape().len() == 2 { bv.shape()[1] } else { 1 };
            let (ad, bd) = (av.data(), bv.data());
            {
                let ga = accumulate(grads, a, m * k);
                for i in 0..m {
                    for l in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += g[i * n + j] * bd[l * n + j];
                        }
                        ga[i * k + l] += acc;
                    }
                }
            }
            let gb = accumulate(grads, b, k * n);
            for i in 0..m {
                for l in 0..k {
                    let aval = ad[i * k + l];
                    for j in 0..n {
                        gb[l * n + j] += aval * g[i * n + j];
                    }
                }
            }
        }
        Op::Conv2d {
            input,
            kernel,
            stride,
            padding,
        } => {
            let (x, k) = (v(input), v(kernel));
            let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let (o, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
            let oh = conv_out(h, kh, stride, padding).unwrap_or(0);
            let ow = conv_out(w, kw, stride, padding).unwrap_or(0);
            let (xd, kd) = (x.data(), k.data());
            let mut gx = vec![0.0; x.len()];
            let mut gk = vec![0.0; k.len()];
            for oc in 0..o {
                for y in 0..oh {
                    for xx in 0..ow {
                        let go = g[(oc * oh + y) * ow + xx];
                        if go == 0.0 {
                            continue;
                        }
                        for ic in 0..c {
                            for i in 0..kh {
                                let iy = (y * stride + i) as isize - padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for j in 0..kw {
                                    let ix = (xx * stride + j) as isize - padding as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let xi = (ic * h + iy as usize) * w + ix as usize;
                                    let ki = ((oc * c + ic) * kh + i) * kw + j;
                                    gx[xi] += kd[ki] * go;
                                    gk[ki] += xd[xi] * go;
                                }
                            }
                        }
                    }
                }
            }
            add_into(accumulate(grads, input, gx.len()), &gx);
            add_into(accumulate(grads, kernel, gk.len()), &gk);
        }
        Op::Add(a, b) => {
            add_into(accumulate(grads, a, g.len()), g);
            add_into(accumulate(grads, b, g.len()), g);
        }
        Op::Mul(a, b) => {
            let (ad, bd) = (v(a).data(), v(b).data());
            {
                let ga = accumulate(grads, a, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * bd[i];
                }
            }
            let gb = accumulate(grads, b, g.len());
            for i in 0..g.len() {
                gb[i] += g[i] * ad[i];
            }
        }
        Op::Scale(a, c) => {
            let ga = accumulate(grads, a, g.len());
            for i in 0..g.len() {
                ga[i] += c * g[i];
            }
        }
        Op::BiasAdd(x, b) => {
            add_into(accumulate(grads, x, g.len()), g);
            let channels = v(b).len();
            let block = g.len() / channels;
            let gb = accumulate(grads, b, channels);
            for (c, chunk) in g.chunks(block).enumerate() {
                gb[c] += chunk.iter().sum::<f64>();
            }
        }
        Op::Relu(a) => {
            let xd = v(a).data();
            let ga = accumulate(grads, a, g.len());
            for i in 0..g.len() {
                if xd[i] > 0.0 {
                    ga[i] += g[i];
                }
            }
        }
        Op::GlobalAvgPool(a) => {
            let len = v(a).len();
            let block = len / g.len();
            let ga = accumulate(grads, a, len);
            for (i, gi) in ga.iter_mut().enumerate() {
                *gi += g[i / block] / block as f64;
            }
        }
        Op::Flatten(a) | Op::Tap { input: a, .. } => {
            add_into(accumulate(grads, a, g.len()), g);
        }
        Op::SoftmaxCrossEntropy { logits, target } => {
            let (z, t) = (v(logits).data(), v(target).data());
            let lse = log_sum_exp(z);
            let mass: f64 = t.iter().sum();
            let seed = g[0];
            {
                let gz = accumulate(grads, logits, z.len());
                for i in 0..z.len() {
                    gz[i] += seed * (libm::exp(z[i] - lse) * mass - t[i]);
                }
            }
            let gt = accumulate(grads, target, t.len());
            for i in 0..t.len() {
                gt[i] += seed * (lse - z[i]);
            }
        }
        Op::SquaredError { prediction, target } => {
            let (p, t) = (v(prediction).data(), v(target).data());
            let seed = g[0];
            {
                let gp = accumulate(grads, prediction, p.len());
                for i in 0..p.len() {
                    gp[i] += seed * (p[i] - t[i]);
                }
            }
            let gt = accumulate(grads, target, t.len());
            for i in 0..t.len() {
                gt[i] -= seed * (p[i] - t[i]);
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bind(pairs: &[(&str, f64)]) -> BTreeMap<String, Tensor> {
        pairs.iter().map(|&(k, v)| (k.to_string(), Tensor::scalar(v))).collect()
    }

    fn half_square_residual() -> (TapeGraph, NodeId, NodeId, NodeId) {
        let mut g = TapeGraph::new();
        let w = g.input("w");
        let x = g.input("x");
        let t = g.input("t");
        let wx = g.mul(w, x);
        let loss = g.squared_error(wx, t);
        g.set_loss(loss);
        (g, w, x, t)
    }

    #[test]
    fn evaluates_half_squared_residual() {
        let (mut g, w, x, _) = half_square_residual();
        let loss = g.evaluate(&bind(&[("w", 2.0), ("x", 1.0), ("t", 0.0)])).unwrap();
        assert_eq!(loss.item(), Some(2.0));
        let grads = g.backward().unwrap();
        assert_eq!(grads.get(w).item(), Some(2.0));
        assert_eq!(grads.get(x).item(), Some(4.0));
    }

    #[test]
    fn identity_of_scalar() {
        let mut g = TapeGraph::new();
        let a = g.input("a");
        g.set_loss(a);
        assert_eq!(g.evaluate(&bind(&[("a", 3.5)])).unwrap().item(), Some(3.5));
        assert_eq!(g.backward().unwrap().get(a).item(), Some(1.0));
    }

    #[test]
    fn uniform_softmax_cross_entropy() {
        let mut g = TapeGraph::new();
        let z = g.constant(Tensor::vector(&[0.0, 0.0]).unwrap());
        let t = g.constant(Tensor::vector(&[1.0, 0.0]).unwrap());
        let l = g.softmax_cross_entropy(z, t);
        g.set_loss(l);
        let v = g.evaluate_inputs(&[]).unwrap();
        assert!((v - core::f64::consts::LN_2).abs() < 1e-15);
        let grads = g.backward().unwrap();
        assert_eq!(grads.get(z).data(), &[-0.5, 0.5]);
    }

    #[test]
    fn constant_graph_has_zero_gradients() {
        let mut g = TapeGraph::new();
        let x = g.input("x");
        let c = g.constant(Tensor::scalar(4.0));
        let zero = g.scale(x, 0.0);
        let sum = g.add(zero, c);
        g.set_loss(sum);
        g.evaluate(&bind(&[("x", 9.0)])).unwrap();
        let grads = g.backward().unwrap();
        assert_eq!(grads.get(x).item(), Some(0.0));
        assert_eq!(grads.get(c).item(), Some(1.0));
    }

    #[test]
    fn backward_before_forward_fails() {
        let (g, ..) = half_square_residual();
        assert_eq!(g.backward().unwrap_err(), Error::BackwardBeforeForward);
    }

    #[test]
    fn non_scalar_sink_is_rejected() {
        let mut g = TapeGraph::new();
        let x = g.input("x");
        g.set_loss(x);
        let v = Tensor::vector(&[1.0, 2.0]).unwrap();
        assert!(matches!(g.evaluate_inputs(&[&v]), Err(Error::NonScalarLoss { .. })));
        assert!(g.backward().is_err());
    }

    #[test]
    fn shape_mismatch_names_the_node() {
        let mut g = TapeGraph::new();
        let a = g.input("a");
        let b = g.input("b");
        let s = g.add(a, b);
        let t = g.constant(Tensor::scalar(0.0));
        let l = g.squared_error(s, t);
        g.set_loss(l);
        let x = Tensor::vector(&[1.0, 2.0]).unwrap();
        let y = Tensor::vector(&[1.0, 2.0, 3.0]).unwrap();
        match g.evaluate_inputs(&[&x, &y]) {
            Err(Error::NodeShape { node, op, .. }) => {
                assert_eq!(node, s.index());
                assert_eq!(op, "add");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unbound_input_is_reported() {
        let (mut g, ..) = half_square_residual();
        assert_eq!(
            g.evaluate(&bind(&[("w", 1.0), ("x", 1.0)])).unwrap_err(),
            Error::Unbound("t".to_string())
        );
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut g = TapeGraph::new();
        let x = g.input("x");
        let r = g.relu(x);
        g.set_loss(r);
        g.evaluate_inputs(&[&Tensor::scalar(0.0)]).unwrap();
        assert_eq!(g.backward().unwrap().get(x).item(), Some(0.0));
    }

    #[test]
    fn tap_hook_rewrites_value_and_passes_gradient() {
        let mut g = TapeGraph::new();
        let x = g.input("x");
        let tapped = g.tap(x, 0);
        let t = g.constant(Tensor::scalar(0.0));
        let l = g.squared_error(tapped, t);
        g.set_loss(l);
        let v = g
            .evaluate_with_hook(&[&Tensor::scalar(2.0)], &mut |site, val| {
                assert_eq!(site, 0);
                val.data_mut()[0] += 1.0;
            })
            .unwrap();
        assert_eq!(v, 4.5);
        let grads = g.backward().unwrap();
        assert_eq!(grads.get(tapped).item(), Some(3.0));
        assert_eq!(grads.get(x).item(), Some(3.0));
    }
}
