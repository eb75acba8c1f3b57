//! Define-then-run computation graphs with reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only list of op records. Leaves are named and are
//! bound to tensors at evaluation time through [`Bindings`], so one graph can
//! be evaluated many times (and from many threads) with different values.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Parameters of the additive/multiplicative angular-margin logit transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AngularMargin {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub scale: f64,
}

#[derive(Clone, Debug)]
pub enum Op {
    Leaf(String),
    Constant(Tensor),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Shift(NodeId, f64),
    MatMul(NodeId, NodeId),
    /// `x[.., j] + b[j]` for a bias vector over the last axis.
    AddBias(NodeId, NodeId),
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad: usize,
    },
    Relu(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sqrt(NodeId),
    Concat {
        inputs: Vec<NodeId>,
        axis: usize,
    },
    Slice {
        input: NodeId,
        axis: usize,
        start: usize,
        end: usize,
    },
    Reshape(NodeId, Vec<usize>),
    GatherRows(NodeId, Vec<usize>),
    /// Euclidean norm over the last axis.
    L2Norm(NodeId),
    /// Cosine similarity over the last axis.
    Cosine(NodeId, NodeId),
    /// Unit-normalize a rank-2 tensor along `axis` (0: columns, 1: rows).
    Normalize(NodeId, usize),
    /// Mean cross-entropy of rank-2 logits against class labels.
    SoftmaxCrossEntropy(NodeId, Vec<usize>),
    /// Rewrites the label column of a cosine matrix into margin logits and
    /// scales all other columns.
    AngularMarginLogits(NodeId, Vec<usize>, AngularMargin),
    /// `log(mean(exp(x)))` over all elements, computed with max-subtraction.
    LogMeanExp(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf(_) => "leaf",
            Op::Constant(_) => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Shift(..) => "shift",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu(_) => "relu",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sqrt(_) => "sqrt",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape(..) => "reshape",
            Op::GatherRows(..) => "gather_rows",
            Op::L2Norm(_) => "l2_norm",
            Op::Cosine(..) => "cosine",
            Op::Normalize(..) => "normalize",
            Op::SoftmaxCrossEntropy(..) => "softmax_cross_entropy",
            Op::AngularMarginLogits(..) => "angular_margin_logits",
            Op::LogMeanExp(_) => "log_mean_exp",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf(_) | Op::Constant(_) => Vec::new(),
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MatMul(a, b)
            | Op::AddBias(a, b)
            | Op::Cosine(a, b) => vec![*a, *b],
            Op::Conv2d {
                input,
                weight,
                bias,
                ..
            } => {
                let mut v = vec![*input, *weight];
                v.extend(bias.iter().copied());
                v
            }
            Op::Scale(a, _)
            | Op::Shift(a, _)
            | Op::Relu(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sqrt(a)
            | Op::Reshape(a, _)
            | Op::GatherRows(a, _)
            | Op::L2Norm(a)
            | Op::Normalize(a, _)
            | Op::SoftmaxCrossEntropy(a, _)
            | Op::AngularMarginLogits(a, _, _)
            | Op::LogMeanExp(a) => vec![*a],
            Op::Slice { input, .. } => vec![*input],
            Op::Concat { inputs, .. } => inputs.clone(),
        }
    }
}

/// Tensors bound to leaf names for one evaluation.
#[derive(Clone, Default)]
pub struct Bindings<'a> {
    values: HashMap<String, Cow<'a, Tensor>>,
}

impl<'a> Bindings<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, name: impl Into<String>, value: &'a Tensor) -> &mut Self {
        self.values.insert(name.into(), Cow::Borrowed(value));
        self
    }

    pub fn bind_owned(&mut self, name: impl Into<String>, value: Tensor) -> &mut Self {
        self.values.insert(name.into(), Cow::Owned(value));
        self
    }

    pub fn bind_all<I>(&mut self, entries: I) -> &mut Self
    where
        I: IntoIterator<Item = (&'a String, &'a Tensor)>,
    {
        for (k, v) in entries {
            self.values.insert(k.clone(), Cow::Borrowed(v));
        }
        self
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.values.get(name).map(|c| c.as_ref())
    }
}

/// Forward values of every node, kept for the backward pass.
pub struct Trace {
    values: Vec<Tensor>,
    output: NodeId,
}

impl Trace {
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn output(&self) -> &Tensor {
        &self.values[self.output.0]
    }
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Op>,
    leaves: BTreeMap<String, NodeId>,
    output: Option<NodeId>,
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

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0]
    }

    pub fn leaf_names(&self) -> impl Iterator<Item = &str> {
        self.leaves.keys().map(String::as_str)
    }

    pub fn leaf_id(&self, name: &str) -> Option<NodeId> {
        self.leaves.get(name).copied()
    }

    pub fn set_output(&mut self, id: NodeId) {
        self.output = Some(id);
    }

    pub fn output(&self) -> Option<NodeId> {
        self.output
    }

    fn push(&mut self, op: Op) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(op);
        id
    }

    /// Named leaf; repeated calls with one name return the same node.
    pub fn leaf(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.leaves.get(name) {
            return id;
        }
        let id = self.push(Op::Leaf(name.to_string()));
        self.leaves.insert(name.to_string(), id);
        id
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Constant(t))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.push(Op::Scale(a, c))
    }

    pub fn shift(&mut self, a: NodeId, c: f64) -> NodeId {
        self.push(Op::Shift(a, c))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.scale(a, -1.0)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        self.push(Op::AddBias(a, bias))
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> NodeId {
        self.push(Op::Conv2d {
            input,
            weight,
            bias,
            stride,
            pad,
        })
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a))
    }

    /// `max(0, x)`; identical to [`Graph::relu`].
    pub fn hinge(&mut self, a: NodeId) -> NodeId {
        self.relu(a)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Log(a))
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sqrt(a))
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> NodeId {
        self.push(Op::Concat {
            inputs: inputs.to_vec(),
            axis,
        })
    }

    pub fn slice(&mut self, input: NodeId, axis: usize, start: usize, end: usize) -> NodeId {
        self.push(Op::Slice {
            input,
            axis,
            start,
            end,
        })
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> NodeId {
        self.push(Op::Reshape(input, shape.to_vec()))
    }

    pub fn gather_rows(&mut self, input: NodeId, rows: &[usize]) -> NodeId {
        self.push(Op::GatherRows(input, rows.to_vec()))
    }

    pub fn l2_norm(&mut self, a: NodeId) -> NodeId {
        self.push(Op::L2Norm(a))
    }

    pub fn cosine(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Cosine(a, b))
    }

    pub fn normalize(&mut self, a: NodeId, axis: usize) -> NodeId {
        self.push(Op::Normalize(a, axis))
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> NodeId {
        self.push(Op::SoftmaxCrossEntropy(logits, labels.to_vec()))
    }

    pub fn angular_margin_logits(
        &mut self,
        cosines: NodeId,
        labels: &[usize],
        margin: AngularMargin,
    ) -> NodeId {
        self.push(Op::AngularMarginLogits(cosines, labels.to_vec(), margin))
    }

    pub fn log_mean_exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::LogMeanExp(a))
    }

    fn output_id(&self) -> Result<NodeId> {
        self.output
            .or_else(|| self.nodes.len().checked_sub(1).map(NodeId))
            .ok_or_else(|| Error::invalid("empty graph"))
    }

    /// Forward value of the output node.
    pub fn evaluate(&self, bindings: &Bindings) -> Result<Tensor> {
        let mut trace = self.forward(bindings, None)?;
        let out = trace.output;
        Ok(trace.values.swap_remove(out.0))
    }

    /// Forward pass keeping every intermediate value. `patch` overrides one
    /// leaf binding without copying the rest.
    pub fn forward(&self, bindings: &Bindings, patch: Option<(&str, &Tensor)>) -> Result<Trace> {
        let output = self.output_id()?;
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for op in &self.nodes {
            let v = match op {
                Op::Leaf(name) => {
                    let bound = match patch {
                        Some((p, t)) if p == name => Some(t),
                        _ => bindings.get(name),
                    };
                    bound.cloned().ok_or_else(|| Error::Unbound(name.clone()))?
                }
                _ => forward_op(op, &values)?,
            };
            if !v.is_finite() {
                return Err(Error::NonFinite(op.name()));
            }
            values.push(v);
        }
        Ok(Trace { values, output })
    }

    /// Reverse-mode gradients of the scalar output with respect to `wrt`.
    pub fn gradient(&self, bindings: &Bindings, wrt: &[&str]) -> Result<Gradients> {
        let trace = self.forward(bindings, None)?;
        self.backward(&trace, wrt)
    }

    pub fn backward(&self, trace: &Trace, wrt: &[&str]) -> Result<Gradients> {
        let output = trace.output;
        let out_val = &trace.values[output.0];
        if out_val.len() != 1 {
            return Err(Error::NonScalarOutput(out_val.shape().to_vec()));
        }
        let mut targets = Vec::with_capacity(wrt.len());
        for name in wrt {
            let id = self
                .leaves
                .get(*name)
                .copied()
                .ok_or_else(|| Error::Unbound(name.to_string()))?;
            targets.push((name.to_string(), id));
        }

        // Which nodes lie on a path from a requested leaf.
        let mut needs = vec![false; self.nodes.len()];
        for (_, id) in &targets {
            needs[id.0] = true;
        }
        for (i, op) in self.nodes.iter().enumerate() {
            if !needs[i] && op.inputs().iter().any(|j| needs[j.0]) {
                needs[i] = true;
            }
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::full(out_val.shape(), 1.0));
        for i in (0..=output.0).rev() {
            if !needs[i] {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            let op = &self.nodes[i];
            if let Op::Leaf(_) = op {
                grads[i] = Some(g);
                continue;
            }
            for (input, contrib) in backward_op(op, &trace.values, &trace.values[i], &g, &needs)? {
                accumulate(&mut grads[input.0], contrib);
            }
        }

        let mut out = BTreeMap::new();
        for (name, id) in targets {
            let g = grads[id.0]
                .clone()
                .unwrap_or_else(|| Tensor::zeros(trace.values[id.0].shape()));
            if !g.is_finite() {
                return Err(Error::NonFinite("gradient"));
            }
            out.insert(name, g);
        }
        Ok(Gradients {
            value: out_val.data()[0],
            grads: out,
        })
    }

    /// Branch pattern of every non-smooth op at a forward trace. Two traces
    /// with different patterns straddle a kink.
    pub fn branch_pattern(&self, trace: &Trace) -> Vec<u8> {
        let mut pattern = Vec::new();
        for op in &self.nodes {
            match op {
                Op::Relu(a) => {
                    pattern.extend(trace.values[a.0].data().iter().map(|&v| u8::from(v > 0.0)));
                }
                Op::AngularMarginLogits(a, labels, m) => {
                    let cos = &trace.values[a.0];
                    let k = cos.shape()[1];
                    for (i, &y) in labels.iter().enumerate() {
                        let (_, state) = margin_angle(cos.data()[i * k + y], m);
                        pattern.push(state as u8);
                    }
                }
                _ => {}
            }
        }
        pattern
    }
}

/// Scalar value of a graph together with gradients of requested leaves.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub value: f64,
    pub grads: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }
}

fn accumulate(slot: &mut Option<Tensor>, contrib: Tensor) {
    match slot {
        Some(acc) => {
            for (a, c) in acc.data_mut().iter_mut().zip(contrib.data()) {
                *a += c;
            }
        }
        None => *slot = Some(contrib),
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum MarginState {
    Interior = 0,
    ClampedLow = 1,
    ClampedHigh = 2,
    Saturated = 3,
}

/// Returns `m1 * acos(c) + m2` clamped to `[0, pi]`, with its clamp state.
fn margin_angle(c: f64, m: &AngularMargin) -> (f64, MarginState) {
    if c >= 1.0 || c <= -1.0 {
        let theta = if c >= 1.0 { 0.0 } else { PI };
        let phi = (m.m1 * theta + m.m2).clamp(0.0, PI);
        return (phi, MarginState::Saturated);
    }
    let phi = m.m1 * c.acos() + m.m2;
    if phi < 0.0 {
        (0.0, MarginState::ClampedLow)
    } else if phi > PI {
        (PI, MarginState::ClampedHigh)
    } else {
        (phi, MarginState::Interior)
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn broadcast_binary(
    name: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::from_parts(a.shape().to_vec(), data))
    } else if b.len() == 1 {
        let y = b.data()[0];
        Ok(a.map(|x| f(x, y)))
    } else if a.len() == 1 {
        let x = a.data()[0];
        Ok(b.map(|y| f(x, y)))
    } else {
        Err(Error::shape(name, format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

/// Sum a full-shape gradient down to the shape of a broadcast operand.
fn unbroadcast(g: Tensor, target: &Tensor) -> Tensor {
    if g.shape() == target.shape() {
        g
    } else {
        let s: f64 = g.data().iter().sum();
        Tensor::from_parts(target.shape().to_vec(), vec![s])
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

fn last_axis(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    let d = *t
        .shape()
        .last()
        .ok_or_else(|| Error::shape(op, "needs rank >= 1"))?;
    if d == 0 {
        return Err(Error::shape(op, "empty last axis"));
    }
    Ok((t.len() / d, d))
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    oh: usize,
    ow: usize,
}

fn conv_geom(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<ConvGeom> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || ws[2] != ws[3] || stride == 0 {
        return Err(Error::shape(
            "conv2d",
            format!("input {:?}, weight {:?}, stride {}", xs, ws, stride),
        ));
    }
    let k = ws[2];
    if xs[2] + 2 * pad < k || xs[3] + 2 * pad < k {
        return Err(Error::shape("conv2d", "kernel larger than padded input"));
    }
    Ok(ConvGeom {
        n: xs[0],
        c: xs[1],
        h: xs[2],
        w: xs[3],
        o: ws[0],
        k,
        oh: (xs[2] + 2 * pad - k) / stride + 1,
        ow: (xs[3] + 2 * pad - k) / stride + 1,
    })
}

/// Output column range `[lo, hi)` for which `ox * stride + kx - pad` lies in `[0, w)`.
fn valid_range(kx: usize, pad: usize, stride: usize, w: usize, ow: usize) -> (usize, usize) {
    let lo = if kx >= pad { 0 } else { (pad - kx).div_ceil(stride) };
    // largest ox with ox*stride + kx - pad <= w - 1
    let hi = if w + pad > kx {
        ((w - 1 + pad - kx) / stride + 1).min(ow)
    } else {
        0
    };
    (lo.min(hi), hi)
}

fn conv_forward(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
    let g = conv_geom(x, w, stride, pad)?;
    if let Some(b) = b {
        if b.len() != g.o {
            return Err(Error::shape("conv2d", "bias length != output channels"));
        }
    }
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![0.0; g.n * g.o * g.oh * g.ow];
    for n in 0..g.n {
        for o in 0..g.o {
            let obase = (n * g.o + o) * g.oh * g.ow;
            let plane = &mut out[obase..obase + g.oh * g.ow];
            if let Some(b) = b {
                plane.iter_mut().for_each(|v| *v = b.data()[o]);
            }
            for c in 0..g.c {
                let xbase = (n * g.c + c) * g.h * g.w;
                for ky in 0..g.k {
                    let (ylo, yhi) = valid_range(ky, pad, stride, g.h, g.oh);
                    for kx in 0..g.k {
                        let wv = wd[((o * g.c + c) * g.k + ky) * g.k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (xlo, xhi) = valid_range(kx, pad, stride, g.w, g.ow);
                        for oy in ylo..yhi {
                            let iy = oy * stride + ky - pad;
                            let xrow = &xd[xbase + iy * g.w..xbase + (iy + 1) * g.w];
                            let orow = &mut plane[oy * g.ow..(oy + 1) * g.ow];
                            for ox in xlo..xhi {
                                orow[ox] += wv * xrow[ox * stride + kx - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![g.n, g.o, g.oh, g.ow], out))
}

/// Gradients of conv2d with respect to (input, weight, bias).
fn conv_backward(
    x: &Tensor,
    w: &Tensor,
    gout: &Tensor,
    stride: usize,
    pad: usize,
    need_x: bool,
    need_w: bool,
) -> Result<(Option<Tensor>, Option<Tensor>, Tensor)> {
    let g = conv_geom(x, w, stride, pad)?;
    let (xd, wd, gd) = (x.data(), w.data(), gout.data());
    let mut dx = need_x.then(|| vec![0.0; xd.len()]);
    let mut dw = need_w.then(|| vec![0.0; wd.len()]);
    let mut db = vec![0.0; g.o];
    for n in 0..g.n {
        for o in 0..g.o {
            let gbase = (n * g.o + o) * g.oh * g.ow;
            let gplane = &gd[gbase..gbase + g.oh * g.ow];
            db[o] += gplane.iter().sum::<f64>();
            for c in 0..g.c {
                let xbase = (n * g.c + c) * g.h * g.w;
                for ky in 0..g.k {
                    let (ylo, yhi) = valid_range(ky, pad, stride, g.h, g.oh);
                    for kx in 0..g.k {
                        let widx = ((o * g.c + c) * g.k + ky) * g.k + kx;
                        let wv = wd[widx];
                        let (xlo, xhi) = valid_range(kx, pad, stride, g.w, g.ow);
                        let mut acc = 0.0;
                        for oy in ylo..yhi {
                            let iy = oy * stride + ky - pad;
                            let grow = &gplane[oy * g.ow..(oy + 1) * g.ow];
                            let rowbase = xbase + iy * g.w;
                            if need_w {
                                let xrow = &xd[rowbase..rowbase + g.w];
                                for ox in xlo..xhi {
                                    acc += grow[ox] * xrow[ox * stride + kx - pad];
                                }
                            }
                            if let Some(dx) = dx.as_mut() {
                                if wv != 0.0 {
                                    let drow = &mut dx[rowbase..rowbase + g.w];
                                    for ox in xlo..xhi {
                                        drow[ox * stride + kx - pad] += wv * grow[ox];
                                    }
                                }
                            }
                        }
                        if let Some(dw) = dw.as_mut() {
                            dw[widx] += acc;
                        }
                    }
                }
            }
        }
    }
    Ok((
        dx.map(|d| Tensor::from_parts(x.shape().to_vec(), d)),
        dw.map(|d| Tensor::from_parts(w.shape().to_vec(), d)),
        Tensor::from_parts(vec![g.o], db),
    ))
}

fn forward_op(op: &Op, vals: &[Tensor]) -> Result<Tensor> {
    let v = |id: &NodeId| &vals[id.0];
    Ok(match op {
        Op::Leaf(_) => unreachable!("leaves are bound by the caller"),
        Op::Constant(t) => t.clone(),
        Op::Add(a, b) => broadcast_binary("add", v(a), v(b), |x, y| x + y)?,
        Op::Sub(a, b) => broadcast_binary("sub", v(a), v(b), |x, y| x - y)?,
        Op::Mul(a, b) => broadcast_binary("mul", v(a), v(b), |x, y| x * y)?,
        Op::Scale(a, c) => v(a).map(|x| x * c),
        Op::Shift(a, c) => v(a).map(|x| x + c),
        Op::MatMul(a, b) => {
            let (a, b) = (v(a), v(b));
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(Error::shape(
                    "matmul",
                    format!("{:?} x {:?}", a.shape(), b.shape()),
                ));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            Tensor::from_parts(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n))
        }
        Op::AddBias(a, b) => {
            let (a, b) = (v(a), v(b));
            let (_, d) = last_axis(a, "add_bias")?;
            if b.len() != d {
                return Err(Error::shape(
                    "add_bias",
                    format!("{:?} + bias {:?}", a.shape(), b.shape()),
                ));
            }
            let mut out = a.clone();
            for row in out.data_mut().chunks_mut(d) {
                for (x, bv) in row.iter_mut().zip(b.data()) {
                    *x += bv;
                }
            }
            out
        }
        Op::Conv2d {
            input,
            weight,
            bias,
            stride,
            pad,
        } => conv_forward(v(input), v(weight), bias.map(|b| &vals[b.0]), *stride, *pad)?,
        Op::Relu(a) => v(a).map(|x| x.max(0.0)),
        Op::Sum(a) => Tensor::scalar(v(a).data().iter().sum()),
        Op::Mean(a) => {
            let a = v(a);
            if a.is_empty() {
                return Err(Error::shape("mean", "empty tensor"));
            }
            Tensor::scalar(a.data().iter().sum::<f64>() / a.len() as f64)
        }
        Op::Exp(a) => v(a).map(f64::exp),
        Op::Log(a) => v(a).map(f64::ln),
        Op::Sqrt(a) => v(a).map(f64::sqrt),
        Op::Concat { inputs, axis } => {
            let first = v(&inputs[0]);
            let rank = first.rank();
            if *axis >= rank {
                return Err(Error::shape("concat", "axis out of range"));
            }
            let mut shape = first.shape().to_vec();
            shape[*axis] = 0;
            for id in inputs {
                let s = v(id).shape();
                let ok = s.len() == rank
                    && s.iter()
                        .zip(first.shape())
                        .enumerate()
                        .all(|(i, (x, y))| i == *axis || x == y);
                if !ok {
                    return Err(Error::shape(
                        "concat",
                        format!("{:?} vs {:?}", s, first.shape()),
                    ));
                }
                shape[*axis] += s[*axis];
            }
            let (outer, _, inner) = split_axis(&shape, *axis);
            let mut data = Vec::with_capacity(numel(&shape));
            for o in 0..outer {
                for id in inputs {
                    let t = v(id);
                    let block = t.shape()[*axis] * inner;
                    data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
                }
            }
            Tensor::from_parts(shape, data)
        }
        Op::Slice {
            input,
            axis,
            start,
            end,
        } => {
            let a = v(input);
            if *axis >= a.rank() || start > end || *end > a.shape()[*axis] {
                return Err(Error::shape(
                    "slice",
                    format!("{:?} axis {} [{}, {})", a.shape(), axis, start, end),
                ));
            }
            let (outer, len, inner) = split_axis(a.shape(), *axis);
            let mut shape = a.shape().to_vec();
            shape[*axis] = end - start;
            let mut data = Vec::with_capacity(numel(&shape));
            for o in 0..outer {
                let base = o * len * inner;
                data.extend_from_slice(&a.data()[base + start * inner..base + end * inner]);
            }
            Tensor::from_parts(shape, data)
        }
        Op::Reshape(a, shape) => v(a).clone().reshaped(shape.clone())?,
        Op::GatherRows(a, rows) => {
            let a = v(a);
            if a.rank() == 0 {
                return Err(Error::shape("gather_rows", "scalar input"));
            }
            let n = a.shape()[0];
            let inner = a.len() / n.max(1);
            let mut data = Vec::with_capacity(rows.len() * inner);
            for &r in rows {
                if r >= n {
                    return Err(Error::shape("gather_rows", format!("row {} of {}", r, n)));
                }
                data.extend_from_slice(&a.data()[r * inner..(r + 1) * inner]);
            }
            let mut shape = a.shape().to_vec();
            shape[0] = rows.len();
            Tensor::from_parts(shape, data)
        }
        Op::L2Norm(a) => {
            let a = v(a);
            let (rows, d) = last_axis(a, "l2_norm")?;
            let data = (0..rows)
                .map(|r| a.data()[r * d..(r + 1) * d].iter().map(|x| x * x).sum::<f64>().sqrt())
                .collect();
            Tensor::from_parts(a.shape()[..a.rank() - 1].to_vec(), data)
        }
        Op::Cosine(a, b) => {
            let (a, b) = (v(a), v(b));
            if a.shape() != b.shape() {
                return Err(Error::shape(
                    "cosine",
                    format!("{:?} vs {:?}", a.shape(), b.shape()),
                ));
            }
            let (rows, d) = last_axis(a, "cosine")?;
            let mut data = Vec::with_capacity(rows);
            for r in 0..rows {
                let (u, w) = (&a.data()[r * d..(r + 1) * d], &b.data()[r * d..(r + 1) * d]);
                data.push(cosine_raw(u, w)?);
            }
            Tensor::from_parts(a.shape()[..a.rank() - 1].to_vec(), data)
        }
        Op::Normalize(a, axis) => {
            let a = v(a);
            let norms = axis_norms(a, *axis)?;
            let mut out = a.clone();
            let cols = a.shape()[1];
            for (idx, x) in out.data_mut().iter_mut().enumerate() {
                let (i, j) = (idx / cols, idx % cols);
                *x /= if *axis == 0 { norms[j] } else { norms[i] };
            }
            out
        }
        Op::SoftmaxCrossEntropy(a, labels) => {
            let a = v(a);
            let (n, k) = check_labels(a, labels, "softmax_cross_entropy")?;
            let mut total = 0.0;
            for i in 0..n {
                let row = &a.data()[i * k..(i + 1) * k];
                total += log_sum_exp(row) - row[labels[i]];
            }
            Tensor::scalar(total / n as f64)
        }
        Op::AngularMarginLogits(a, labels, m) => {
            let a = v(a);
            let (n, k) = check_labels(a, labels, "angular_margin_logits")?;
            let mut out = a.map(|c| m.scale * c);
            for i in 0..n {
                let (phi, _) = margin_angle(a.data()[i * k + labels[i]], m);
                out.data_mut()[i * k + labels[i]] = m.scale * (phi.cos() - m.m3);
            }
            out
        }
        Op::LogMeanExp(a) => {
            let a = v(a);
            if a.is_empty() {
                return Err(Error::shape("log_mean_exp", "empty tensor"));
            }
            Tensor::scalar(log_sum_exp(a.data()) - (a.len() as f64).ln())
        }
    })
}

fn check_labels(a: &Tensor, labels: &[usize], op: &'static str) -> Result<(usize, usize)> {
    if a.rank() != 2 || a.shape()[0] != labels.len() || a.shape()[0] == 0 {
        return Err(Error::shape(
            op,
            format!("logits {:?} with {} labels", a.shape(), labels.len()),
        ));
    }
    let k = a.shape()[1];
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::shape(op, format!("label {} >= {} classes", bad, k)));
    }
    Ok((a.shape()[0], k))
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn norm(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn cosine_raw(u: &[f64], w: &[f64]) -> Result<f64> {
    let (nu, nw) = (norm(u), norm(w));
    if nu == 0.0 || nw == 0.0 {
        return Err(Error::Degenerate("cosine of a zero-norm vector".into()));
    }
    let dot: f64 = u.iter().zip(w).map(|(a, b)| a * b).sum();
    Ok(dot / (nu * nw))
}

fn axis_norms(a: &Tensor, axis: usize) -> Result<Vec<f64>> {
    if a.rank() != 2 || axis > 1 {
        return Err(Error::shape("normalize", format!("{:?} axis {}", a.shape(), axis)));
    }
    let (r, c) = (a.shape()[0], a.shape()[1]);
    let norms: Vec<f64> = if axis == 1 {
        (0..r).map(|i| norm(&a.data()[i * c..(i + 1) * c])).collect()
    } else {
        (0..c)
            .map(|j| (0..r).map(|i| a.data()[i * c + j].powi(2)).sum::<f64>().sqrt())
            .collect()
    };
    if norms.iter().any(|&n| n == 0.0) {
        return Err(Error::Degenerate("normalize of a zero-norm vector".into()));
    }
    Ok(norms)
}

fn backward_op(
    op: &Op,
    vals: &[Tensor],
    out: &Tensor,
    g: &Tensor,
    needs: &[bool],
) -> Result<Vec<(NodeId, Tensor)>> {
    let v = |id: &NodeId| &vals[id.0];
    let need = |id: &NodeId| needs[id.0];
    let mut res = Vec::new();
    match op {
        Op::Leaf(_) | Op::Constant(_) => {}
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
            if need(a) {
                res.push((*a, unbroadcast(g.clone(), v(a))));
            }
            if need(b) {
                res.push((*b, unbroadcast(g.map(|x| sign * x), v(b))));
            }
        }
        Op::Mul(a, b) => {
            if need(a) {
                let ga = broadcast_binary("mul", g, v(b), |x, y| x * y)?;
                res.push((*a, unbroadcast(ga, v(a))));
            }
            if need(b) {
                let gb = broadcast_binary("mul", g, v(a), |x, y| x * y)?;
                res.push((*b, unbroadcast(gb, v(b))));
            }
        }
        Op::Scale(a, c) => res.push((*a, g.map(|x| x * c))),
        Op::Shift(a, _) => res.push((*a, g.clone())),
        Op::MatMul(a, b) => {
            let (av, bv) = (v(a), v(b));
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            if need(a) {
                let bt = transpose(bv.data(), k, n);
                res.push((*a, Tensor::from_parts(vec![m, k], matmul_raw(g.data(), &bt, m, n, k))));
            }
            if need(b) {
                let at = transpose(av.data(), m, k);
                res.push((*b, Tensor::from_parts(vec![k, n], matmul_raw(&at, g.data(), k, m, n))));
            }
        }
        Op::AddBias(a, b) => {
            if need(a) {
                res.push((*a, g.clone()));
            }
            if need(b) {
                let d = v(b).len();
                let mut gb = vec![0.0; d];
                for row in g.data().chunks(d) {
                    for (acc, x) in gb.iter_mut().zip(row) {
                        *acc += x;
                    }
                }
                res.push((*b, Tensor::from_parts(v(b).shape().to_vec(), gb)));
            }
        }
        Op::Conv2d {
            input,
            weight,
            bias,
            stride,
            pad,
        } => {
            let (dx, dw, db) = conv_backward(
                v(input),
                v(weight),
                g,
                *stride,
                *pad,
                need(input),
                need(weight),
            )?;
            if let Some(dx) = dx {
                res.push((*input, dx));
            }
            if let Some(dw) = dw {
                res.push((*weight, dw));
            }
            if let Some(b) = bias {
                if need(b) {
                    res.push((*b, db.reshaped(v(b).shape().to_vec())?));
                }
            }
        }
        Op::Relu(a) => {
            let data = v(a)
                .data()
                .iter()
                .zip(g.data())
                .map(|(&x, &gv)| if x > 0.0 { gv } else { 0.0 })
                .collect();
            res.push((*a, Tensor::from_parts(g.shape().to_vec(), data)));
        }
        Op::Sum(a) => res.push((*a, Tensor::full(v(a).shape(), g.data()[0]))),
        Op::Mean(a) => {
            let n = v(a).len() as f64;
            res.push((*a, Tensor::full(v(a).shape(), g.data()[0] / n)));
        }
        Op::Exp(a) => {
            let data = out.data().iter().zip(g.data()).map(|(y, gv)| y * gv).collect();
            res.push((*a, Tensor::from_parts(g.shape().to_vec(), data)));
        }
        Op::Log(a) => {
            let data = v(a).data().iter().zip(g.data()).map(|(x, gv)| gv / x).collect();
            res.push((*a, Tensor::from_parts(g.shape().to_vec(), data)));
        }
        Op::Sqrt(a) => {
            let data = out
                .data()
                .iter()
                .zip(g.data())
                .map(|(y, gv)| gv / (2.0 * y))
                .collect();
            res.push((*a, Tensor::from_parts(g.shape().to_vec(), data)));
        }
        Op::Concat { inputs, axis } => {
            let (outer, _, inner) = split_axis(out.shape(), *axis);
            let mut offset = 0;
            let total = out.shape()[*axis];
            for id in inputs {
                let t = v(id);
                let len = t.shape()[*axis];
                if need(id) {
                    let mut data = Vec::with_capacity(t.len());
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        data.extend_from_slice(&g.data()[base..base + len * inner]);
                    }
                    res.push((*id, Tensor::from_parts(t.shape().to_vec(), data)));
                }
                offset += len;
            }
        }
        Op::Slice {
            input,
            axis,
            start,
            end,
        } => {
            let a = v(input);
            let (outer, len, inner) = split_axis(a.shape(), *axis);
            let mut data = vec![0.0; a.len()];
            let width = (end - start) * inner;
            for o in 0..outer {
                let dst = o * len * inner + start * inner;
                data[dst..dst + width].copy_from_slice(&g.data()[o * width..(o + 1) * width]);
            }
            res.push((*input, Tensor::from_parts(a.shape().to_vec(), data)));
        }
        Op::Reshape(a, _) => res.push((*a, g.clone().reshaped(v(a).shape().to_vec())?)),
        Op::GatherRows(a, rows) => {
            let av = v(a);
            let inner = av.len() / av.shape()[0].max(1);
            let mut data = vec![0.0; av.len()];
            for (i, &r) in rows.iter().enumerate() {
                for (d, s) in data[r * inner..(r + 1) * inner]
                    .iter_mut()
                    .zip(&g.data()[i * inner..(i + 1) * inner])
                {
                    *d += s;
                }
            }
            res.push((*a, Tensor::from_parts(av.shape().to_vec(), data)));
        }
        Op::L2Norm(a) => {
            let av = v(a);
            let (rows, d) = last_axis(av, "l2_norm")?;
            let mut data = vec![0.0; av.len()];
            for r in 0..rows {
                let n = out.data()[r];
                if n == 0.0 {
                    return Err(Error::Degenerate("gradient of l2 norm at zero".into()));
                }
                for j in 0..d {
                    data[r * d + j] = g.data()[r] * av.data()[r * d + j] / n;
                }
            }
            res.push((*a, Tensor::from_parts(av.shape().to_vec(), data)));
        }
        Op::Cosine(a, b) => {
            let (av, bv) = (v(a), v(b));
            let (rows, d) = last_axis(av, "cosine")?;
            let mut ga = vec![0.0; av.len()];
            let mut gb = vec![0.0; bv.len()];
            for r in 0..rows {
                let (u, w) = (&av.data()[r * d..(r + 1) * d], &bv.data()[r * d..(r + 1) * d]);
                let (nu, nw) = (norm(u), norm(w));
                let c = out.data()[r];
                let gr = g.data()[r];
                for j in 0..d {
                    ga[r * d + j] = gr * (w[j] / (nu * nw) - c * u[j] / (nu * nu));
                    gb[r * d + j] = gr * (u[j] / (nu * nw) - c * w[j] / (nw * nw));
                }
            }
            if need(a) {
                res.push((*a, Tensor::from_parts(av.shape().to_vec(), ga)));
            }
            if need(b) {
                res.push((*b, Tensor::from_parts(bv.shape().to_vec(), gb)));
            }
        }
        Op::Normalize(a, axis) => {
            let av = v(a);
            let norms = axis_norms(av, *axis)?;
            let (r, c) = (av.shape()[0], av.shape()[1]);
            let mut data = vec![0.0; av.len()];
            if *axis == 1 {
                for i in 0..r {
                    let y = &out.data()[i * c..(i + 1) * c];
                    let gy = &g.data()[i * c..(i + 1) * c];
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        data[i * c + j] = (gy[j] - y[j] * dot) / norms[i];
                    }
                }
            } else {
                for j in 0..c {
                    let dot: f64 = (0..r).map(|i| out.data()[i * c + j] * g.data()[i * c + j]).sum();
                    for i in 0..r {
                        data[i * c + j] =
                            (g.data()[i * c + j] - out.data()[i * c + j] * dot) / norms[j];
                    }
                }
            }
            res.push((*a, Tensor::from_parts(av.shape().to_vec(), data)));
        }
        Op::SoftmaxCrossEntropy(a, labels) => {
            let av = v(a);
            let (n, k) = (av.shape()[0], av.shape()[1]);
            let scale = g.data()[0] / n as f64;
            let mut data = Vec::with_capacity(av.len());
            for i in 0..n {
                let mut p = softmax(&av.data()[i * k..(i + 1) * k]);
                p[labels[i]] -= 1.0;
                data.extend(p.into_iter().map(|x| x * scale));
            }
            res.push((*a, Tensor::from_parts(av.shape().to_vec(), data)));
        }
        Op::AngularMarginLogits(a, labels, m) => {
            let av = v(a);
            let k = av.shape()[1];
            let mut data = g.map(|x| x * m.scale);
            for (i, &y) in labels.iter().enumerate() {
                let idx = i * k + y;
                let c = av.data()[idx];
                let (phi, state) = margin_angle(c, m);
                // d/dc [s cos(m1 acos c + m2)] = s m1 sin(phi) / sqrt(1 - c^2)
                data.data_mut()[idx] = match state {
                    MarginState::Interior => {
                        g.data()[idx] * m.scale * m.m1 * phi.sin() / (1.0 - c * c).sqrt()
                    }
                    _ => 0.0,
                };
            }
            res.push((*a, data));
        }
        Op::LogMeanExp(a) => {
            let p = softmax(v(a).data());
            let gv = g.data()[0];
            res.push((
                *a,
                Tensor::from_parts(v(a).shape().to_vec(), p.into_iter().map(|x| x * gv).collect()),
            ));
        }
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval1(g: &Graph, name: &str, t: Tensor) -> Tensor {
        let mut b = Bindings::new();
        b.bind_owned(name, t);
        g.evaluate(&b).unwrap()
    }

    #[test]
    fn identity_graph() {
        let mut g = Graph::new();
        let x = g.leaf("x");
        g.set_output(x);
        let out = eval1(&g, "x", Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert_eq!(out.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn cosine_self_is_one() {
        let mut g = Graph::new();
        let x = g.leaf("x");
        let c = g.cosine(x, x);
        g.set_output(c);
        let out = eval1(&g, "x", Tensor::vector(vec![0.3, -2.0, 5.5]));
        assert!((out.data()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identity_matmul() {
        let mut g = Graph::new();
        let i = g.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let m = g.leaf("m");
        let p = g.matmul(i, m);
        g.set_output(p);
        let out = eval1(&g, "m", Tensor::matrix(2, 2, vec![1.5, -2.0, 3.0, 4.25]).unwrap());
        assert_eq!(out.data(), &[1.5, -2.0, 3.0, 4.25]);
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.leaf("x");
        let y = g.mul(x, x);
        g.set_output(y);
        let mut b = Bindings::new();
        b.bind_owned("x", Tensor::scalar(3.0));
        let grads = g.gradient(&b, &["x"]).unwrap();
        assert_eq!(grads.value, 9.0);
        assert_eq!(grads.get("x").unwrap().data(), &[6.0]);
    }

    #[test]
    fn mean_gradient_is_uniform() {
        let mut g = Graph::new();
        let x = g.leaf("v");
        let m = g.mean(x);
        g.set_output(m);
        let mut b = Bindings::new();
        b.bind_owned("v", Tensor::vector(vec![1.0, 5.0, -2.0, 0.5]));
        let grads = g.gradient(&b, &["v"]).unwrap();
        assert_eq!(grads.get("v").unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn non_scalar_output_rejected() {
        let mut g = Graph::new();
        let x = g.leaf("x");
        g.set_output(x);
        let mut b = Bindings::new();
        b.bind_owned("x", Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(
            g.gradient(&b, &["x"]),
            Err(Error::NonScalarOutput(_))
        ));
    }

    #[test]
    fn unbound_leaf_rejected() {
        let mut g = Graph::new();
        let x = g.leaf("x");
        let y = g.leaf("y");
        let s = g.add(x, y);
        g.set_output(s);
        let mut b = Bindings::new();
        b.bind_owned("x", Tensor::scalar(1.0));
        assert!(matches!(g.evaluate(&b), Err(Error::Unbound(n)) if n == "y"));
        b.bind_owned("y", Tensor::scalar(1.0));
        assert!(matches!(g.gradient(&b, &["z"]), Err(Error::Unbound(_))));
    }

    #[test]
    fn non_finite_aborts() {
        let mut g = Graph::new();
        let x = g.leaf("x");
        let l = g.log(x);
        g.set_output(l);
        let mut b = Bindings::new();
        b.bind_owned("x", Tensor::scalar(-1.0));
        assert!(matches!(g.evaluate(&b), Err(Error::NonFinite("log"))));
    }

    #[test]
    fn shape_mismatch_reported() {
        let mut g = Graph::new();
        let a = g.leaf("a");
        let b = g.leaf("b");
        let s = g.add(a, b);
        g.set_output(s);
        let mut bind = Bindings::new();
        bind.bind_owned("a", Tensor::vector(vec![1.0, 2.0]));
        bind.bind_owned("b", Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert!(matches!(g.evaluate(&bind), Err(Error::Shape { .. })));
    }

    #[test]
    fn conv_matches_direct_sum() {
        // 1x1x3x3 input, 1x1x2x2 kernel, stride 1, no pad
        let x = Tensor::new(vec![1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let w = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, -1.0]).unwrap();
        let out = conv_forward(&x, &w, None, 1, 0).unwrap();
        assert_eq!(out.shape(), &[1, 1, 2, 2]);
        assert_eq!(out.data(), &[-4.0, -4.0, -4.0, -4.0]);
        // stride 2, pad 1 keeps corners only
        let w1 = Tensor::new(vec![1, 1, 3, 3], {
            let mut v = vec![0.0; 9];
            v[4] = 1.0;
            v
        })
        .unwrap();
        let out = conv_forward(&x, &w1, None, 2, 1).unwrap();
        assert_eq!(out.shape(), &[1, 1, 2, 2]);
        assert_eq!(out.data(), &[1.0, 3.0, 7.0, 9.0]);
    }

    #[test]
    fn log_mean_exp_is_stable() {
        let mut g = Graph::new();
        let x = g.leaf("x");
        let l = g.log_mean_exp(x);
        g.set_output(l);
        let out = eval1(&g, "x", Tensor::vector(vec![1000.0, 1000.0]));
        assert!((out.data()[0] - 1000.0).abs() < 1e-9);
    }
}
