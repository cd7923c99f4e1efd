//! Static computation graphs with reverse-mode differentiation.
//!
//! A [`Graph`] is built once per batch shape: declare inputs, parameters and
//! ops (shapes are inferred and checked while building), then call
//! [`Graph::forward`] with concrete inputs and [`Graph::backward`] from a
//! scalar node. Nodes are appended in evaluation order, so insertion order is
//! a topological order.

use crate::error::{Error, Result};
use crate::nn::functional::{self as f, BnLayout, ConvDims, ConvGeom};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum BnStats {
    Batch,
    Running { mean: Vec<f64>, var: Vec<f64> },
}

#[derive(Debug, Clone)]
enum Op {
    Input { slot: usize },
    Param,
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `[.., f] + [f]`
    AddRow(NodeId, NodeId),
    /// `[.., f] * [f]`
    MulRow(NodeId, NodeId),
    /// `[n, c, l] + [c]`
    AddChannel(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    Conv1d { x: NodeId, w: NodeId, geom: ConvGeom },
    ConvTranspose1d { x: NodeId, w: NodeId, geom: ConvGeom },
    BatchNorm { x: NodeId, gamma: NodeId, beta: NodeId, eps: f64, stats: BnStats },
    LeakyRelu(NodeId, f64),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Reshape(NodeId),
    RoundSte(NodeId),
    MinibatchDisc { x: NodeId, t: NodeId, b: usize, c: usize },
    Sum(NodeId),
    Mean(NodeId),
    Bce { p: NodeId, target: NodeId },
    BceLogits { logits: NodeId, target: NodeId },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Param => "param",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::AddChannel(..) => "add_channel",
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::Conv1d { .. } => "conv1d",
            Op::ConvTranspose1d { .. } => "conv1d_transpose",
            Op::BatchNorm { .. } => "batchnorm1d",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Reshape(..) => "reshape",
            Op::RoundSte(..) => "round",
            Op::MinibatchDisc { .. } => "minibatch_discrimination",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Bce { .. } => "bce",
            Op::BceLogits { .. } => "bce_with_logits",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    requires_grad: bool,
}

/// Forward-pass caches needed by backward.
#[derive(Debug, Clone, Default)]
enum Aux {
    #[default]
    None,
    BatchNorm { xhat: Vec<f64>, inv_std: Vec<f64>, mean: Vec<f64>, var: Vec<f64> },
    Projection(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Built,
    Forwarded,
    Backwarded,
}

#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    values: Vec<Option<Tensor>>,
    aux: Vec<Aux>,
    grads: Vec<Option<Vec<f64>>>,
    inputs: Vec<NodeId>,
    stage: Stage,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn sh(s: &[usize]) -> String {
    format!("{s:?}")
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            values: Vec::new(),
            aux: Vec::new(),
            grads: Vec::new(),
            inputs: Vec::new(),
            stage: Stage::Built,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, requires_grad: bool, value: Option<Tensor>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, shape, requires_grad });
        self.values.push(value);
        self.aux.push(Aux::None);
        self.grads.push(None);
        self.stage = Stage::Built;
        id
    }

    fn shape_of(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].requires_grad)
    }

    fn check_ids(&self, op: &'static str, ids: &[NodeId]) -> Result<()> {
        match ids.iter().find(|i| i.0 >= self.nodes.len()) {
            Some(i) => Err(Error::State(format!("{op}: node {} is not part of this graph", i.0))),
            None => Ok(()),
        }
    }

    /// Declares a placeholder fed positionally by [`Graph::forward`].
    pub fn input(&mut self, shape: &[usize]) -> NodeId {
        let slot = self.inputs.len();
        let id = self.push(Op::Input { slot }, shape.to_vec(), false, None);
        self.inputs.push(id);
        id
    }

    /// An input placeholder whose gradient is tracked.
    pub fn input_with_grad(&mut self, shape: &[usize]) -> NodeId {
        let id = self.input(shape);
        self.nodes[id.0].requires_grad = true;
        id
    }

    pub fn param(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Param, shape, true, Some(value))
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Constant, shape, false, Some(value))
    }

    /// Replaces the value of a parameter or constant leaf.
    pub fn set_value(&mut self, id: NodeId, value: &Tensor) -> Result<()> {
        self.check_ids("set_value", &[id])?;
        let node = &self.nodes[id.0];
        if !matches!(node.op, Op::Param | Op::Constant) {
            return Err(Error::State(format!("node {} is not a parameter or constant", id.0)));
        }
        if node.shape != value.shape() {
            return Err(Error::shape(
                "set_value",
                format!("expected {}, got {}", sh(&node.shape), sh(value.shape())),
            ));
        }
        match self.values[id.0].as_mut() {
            Some(v) => v.data_mut().copy_from_slice(value.data()),
            None => self.values[id.0] = Some(value.clone()),
        }
        self.stage = Stage::Built;
        Ok(())
    }

    fn binary_same(&mut self, name: &'static str, a: NodeId, b: NodeId, mk: fn(NodeId, NodeId) -> Op) -> Result<NodeId> {
        self.check_ids(name, &[a, b])?;
        if self.shape_of(a) != self.shape_of(b) {
            return Err(Error::shape(
                name,
                format!("operands {} and {} differ", sh(self.shape_of(a)), sh(self.shape_of(b))),
            ));
        }
        let shape = self.shape_of(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(mk(a, b), shape, rg, None))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same("add", a, b, Op::Add)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same("sub", a, b, Op::Sub)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same("mul", a, b, Op::Mul)
    }

    fn row_broadcast(&mut self, name: &'static str, x: NodeId, b: NodeId, mk: fn(NodeId, NodeId) -> Op) -> Result<NodeId> {
        self.check_ids(name, &[x, b])?;
        let xs = self.shape_of(x);
        let bs = self.shape_of(b);
        if bs.len() != 1 || xs.last() != Some(&bs[0]) {
            return Err(Error::shape(name, format!("cannot broadcast {} over rows of {}", sh(bs), sh(xs))));
        }
        let shape = xs.to_vec();
        let rg = self.rg(&[x, b]);
        Ok(self.push(mk(x, b), shape, rg, None))
    }

    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        self.row_broadcast("add_row", x, bias, Op::AddRow)
    }

    pub fn mul_row(&mut self, x: NodeId, scale: NodeId) -> Result<NodeId> {
        self.row_broadcast("mul_row", x, scale, Op::MulRow)
    }

    pub fn add_channel(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        self.check_ids("add_channel", &[x, bias])?;
        let (xs, bs) = (self.shape_of(x), self.shape_of(bias));
        if xs.len() != 3 || bs.len() != 1 || xs[1] != bs[0] {
            return Err(Error::shape("add_channel", format!("bias {} vs input {}", sh(bs), sh(xs))));
        }
        let shape = xs.to_vec();
        let rg = self.rg(&[x, bias]);
        Ok(self.push(Op::AddChannel(x, bias), shape, rg, None))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        self.unary("scale", x, |x| Op::Scale(x, factor))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_ids("matmul", &[a, b])?;
        let (as_, bs) = (self.shape_of(a), self.shape_of(b));
        if as_.len() != 2 || bs.len() != 2 || as_[1] != bs[0] {
            return Err(Error::shape("matmul", format!("cannot multiply {} by {}", sh(as_), sh(bs))));
        }
        let shape = vec![as_[0], bs[1]];
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), shape, rg, None))
    }

    fn conv_shape(&self, name: &'static str, x: NodeId, w: NodeId, geom: ConvGeom, transpose: bool) -> Result<Vec<usize>> {
        let (xs, ws) = (self.shape_of(x), self.shape_of(w));
        if xs.len() != 3 || ws.len() != 3 {
            return Err(Error::shape(name, format!("expected 3-d input and kernel, got {} and {}", sh(xs), sh(ws))));
        }
        if geom.stride == 0 || geom.kernel == 0 {
            return Err(Error::shape(name, "stride and kernel size must be >= 1"));
        }
        let (in_ch, out_ch) = if transpose { (ws[0], ws[1]) } else { (ws[1], ws[0]) };
        if xs[1] != in_ch {
            return Err(Error::shape(name, format!("input {} has {} channels, kernel {} expects {in_ch}", sh(xs), xs[1], sh(ws))));
        }
        let len = if transpose { geom.transpose_out_len(xs[2]) } else { geom.conv_out_len(xs[2]) };
        let len = len.ok_or_else(|| {
            Error::shape(name, format!("length {} incompatible with kernel {} stride {} padding {}", xs[2], geom.kernel, geom.stride, geom.padding))
        })?;
        Ok(vec![xs[0], out_ch, len])
    }

    pub fn conv1d(&mut self, x: NodeId, w: NodeId, stride: usize, padding: usize) -> Result<NodeId> {
        self.check_ids("conv1d", &[x, w])?;
        let geom = ConvGeom { stride, padding, kernel: self.shape_of(w).get(2).copied().unwrap_or(0) };
        let shape = self.conv_shape("conv1d", x, w, geom, false)?;
        let rg = self.rg(&[x, w]);
        Ok(self.push(Op::Conv1d { x, w, geom }, shape, rg, None))
    }

    pub fn conv1d_transpose(&mut self, x: NodeId, w: NodeId, stride: usize, padding: usize) -> Result<NodeId> {
        self.check_ids("conv1d_transpose", &[x, w])?;
        let geom = ConvGeom { stride, padding, kernel: self.shape_of(w).get(2).copied().unwrap_or(0) };
        let shape = self.conv_shape("conv1d_transpose", x, w, geom, true)?;
        let rg = self.rg(&[x, w]);
        Ok(self.push(Op::ConvTranspose1d { x, w, geom }, shape, rg, None))
    }

    /// Batch normalization over `[batch, features]` or `[batch, channels, length]`.
    /// `running = None` normalizes with batch statistics (training mode).
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
        running: Option<(&[f64], &[f64])>,
    ) -> Result<NodeId> {
        self.check_ids("batchnorm1d", &[x, gamma, beta])?;
        let xs = self.shape_of(x).to_vec();
        let lay = BnLayout::of(&xs).ok_or_else(|| Error::shape("batchnorm1d", format!("expected 2-d or 3-d input, got {}", sh(&xs))))?;
        for p in [gamma, beta] {
            if self.shape_of(p) != [lay.channels] {
                return Err(Error::shape("batchnorm1d", format!("affine {} vs {} channels", sh(self.shape_of(p)), lay.channels)));
            }
        }
        let stats = match running {
            None => {
                if lay.batch < 2 {
                    return Err(Error::Precondition("batch normalization in training mode needs batch >= 2".into()));
                }
                BnStats::Batch
            }
            Some((mean, var)) => {
                if mean.len() != lay.channels || var.len() != lay.channels {
                    return Err(Error::shape("batchnorm1d", "running statistics width mismatch"));
                }
                BnStats::Running { mean: mean.to_vec(), var: var.to_vec() }
            }
        };
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(Op::BatchNorm { x, gamma, beta, eps, stats }, xs, rg, None))
    }

    fn unary(&mut self, name: &'static str, x: NodeId, mk: impl FnOnce(NodeId) -> Op) -> Result<NodeId> {
        self.check_ids(name, &[x])?;
        let shape = self.shape_of(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(mk(x), shape, rg, None))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        self.unary("leaky_relu", x, |x| Op::LeakyRelu(x, slope))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("relu", x, Op::Relu)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("sigmoid", x, Op::Sigmoid)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("tanh", x, Op::Tanh)
    }

    /// Rounds half-up in the forward pass; the backward pass treats it as identity.
    pub fn round_ste(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("round", x, Op::RoundSte)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.check_ids("reshape", &[x])?;
        let n: usize = self.shape_of(x).iter().product();
        if shape.iter().product::<usize>() != n || shape.contains(&0) {
            return Err(Error::shape("reshape", format!("cannot view {} as {}", sh(self.shape_of(x)), sh(shape))));
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Op::Reshape(x), shape.to_vec(), rg, None))
    }

    /// Minibatch discrimination with projection `t [a, b, c]`; output `[batch, a + b]`.
    pub fn minibatch_discrimination(&mut self, x: NodeId, t: NodeId) -> Result<NodeId> {
        self.check_ids("minibatch_discrimination", &[x, t])?;
        let (xs, ts) = (self.shape_of(x), self.shape_of(t));
        if xs.len() != 2 || ts.len() != 3 || ts[0] != xs[1] {
            return Err(Error::shape("minibatch_discrimination", format!("features {} vs projection {}", sh(xs), sh(ts))));
        }
        if xs[0] < 2 {
            return Err(Error::Precondition("minibatch discrimination needs batch >= 2".into()));
        }
        let (b, c) = (ts[1], ts[2]);
        let shape = vec![xs[0], xs[1] + b];
        let rg = self.rg(&[x, t]);
        Ok(self.push(Op::MinibatchDisc { x, t, b, c }, shape, rg, None))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_ids("sum", &[x])?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::Sum(x), vec![1], rg, None))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_ids("mean", &[x])?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::Mean(x), vec![1], rg, None))
    }

    /// Mean binary cross-entropy of probabilities `p` against `target`.
    pub fn bce(&mut self, p: NodeId, target: NodeId) -> Result<NodeId> {
        self.check_ids("bce", &[p, target])?;
        if self.shape_of(p) != self.shape_of(target) {
            return Err(Error::shape("bce", format!("{} vs {}", sh(self.shape_of(p)), sh(self.shape_of(target)))));
        }
        let rg = self.rg(&[p]);
        Ok(self.push(Op::Bce { p, target }, vec![1], rg, None))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `target`.
    pub fn bce_with_logits(&mut self, logits: NodeId, target: NodeId) -> Result<NodeId> {
        self.check_ids("bce_with_logits", &[logits, target])?;
        if self.shape_of(logits) != self.shape_of(target) {
            return Err(Error::shape(
                "bce_with_logits",
                format!("{} vs {}", sh(self.shape_of(logits)), sh(self.shape_of(target))),
            ));
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(Op::BceLogits { logits, target }, vec![1], rg, None))
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.shape_of(id)
    }

    /// Evaluates every node given the declared inputs, in declaration order.
    pub fn forward(&mut self, inputs: &[Tensor]) -> Result<&Tensor> {
        if inputs.len() != self.inputs.len() {
            return Err(Error::State(format!("graph declares {} inputs, got {}", self.inputs.len(), inputs.len())));
        }
        if self.nodes.is_empty() {
            return Err(Error::State("empty graph".into()));
        }
        for (slot, (&id, t)) in self.inputs.iter().zip(inputs).enumerate() {
            if self.nodes[id.0].shape != t.shape() {
                return Err(Error::shape(
                    "forward",
                    format!("input {slot} declared {} but got {}", sh(&self.nodes[id.0].shape), sh(t.shape())),
                ));
            }
        }
        for i in 0..self.nodes.len() {
            if let Op::Input { slot } = self.nodes[i].op {
                self.values[i] = Some(inputs[slot].clone());
                continue;
            }
            if matches!(self.nodes[i].op, Op::Param | Op::Constant) {
                continue;
            }
            let (value, aux) = self.eval(i)?;
            if !value.iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric { op: format!("{} (node {i})", self.nodes[i].op.name()) });
            }
            self.values[i] = Some(Tensor::new(&self.nodes[i].shape, value)?);
            self.aux[i] = aux;
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.stage = Stage::Forwarded;
        Ok(self.values.last().and_then(Option::as_ref).expect("evaluated"))
    }

    fn v(&self, id: NodeId) -> &[f64] {
        self.values[id.0].as_ref().expect("value computed before use").data()
    }

    fn eval(&self, i: usize) -> Result<(Vec<f64>, Aux)> {
        let node = &self.nodes[i];
        let plain = |v: Vec<f64>| Ok((v, Aux::None));
        match &node.op {
            Op::Input { .. } | Op::Param | Op::Constant => unreachable!(),
            Op::Add(a, b) => plain(self.v(*a).iter().zip(self.v(*b)).map(|(x, y)| x + y).collect()),
            Op::Sub(a, b) => plain(self.v(*a).iter().zip(self.v(*b)).map(|(x, y)| x - y).collect()),
            Op::Mul(a, b) => plain(self.v(*a).iter().zip(self.v(*b)).map(|(x, y)| x * y).collect()),
            Op::AddRow(x, b) => {
                let bv = self.v(*b);
                plain(self.v(*x).chunks(bv.len()).flat_map(|r| r.iter().zip(bv).map(|(p, q)| p + q)).collect())
            }
            Op::MulRow(x, b) => {
                let bv = self.v(*b);
                plain(self.v(*x).chunks(bv.len()).flat_map(|r| r.iter().zip(bv).map(|(p, q)| p * q)).collect())
            }
            Op::AddChannel(x, b) => {
                let bv = self.v(*b);
                let l = node.shape[2];
                let mut out = self.v(*x).to_vec();
                for (k, chunk) in out.chunks_mut(l).enumerate() {
                    let c = bv[k % bv.len()];
                    chunk.iter_mut().for_each(|v| *v += c);
                }
                plain(out)
            }
            Op::Scale(x, s) => plain(self.v(*x).iter().map(|v| v * s).collect()),
            Op::MatMul(a, b) => {
                let (n, k) = (self.shape_of(*a)[0], self.shape_of(*a)[1]);
                let m = self.shape_of(*b)[1];
                let mut out = vec![0.0; n * m];
                f::matmul_acc(self.v(*a), self.v(*b), &mut out, n, k, m);
                plain(out)
            }
            Op::Conv1d { x, w, geom } => {
                let d = self.conv_dims(*x, i, false);
                plain(f::conv1d_forward(self.v(*x), self.v(*w), &d, *geom))
            }
            Op::ConvTranspose1d { x, w, geom } => {
                let d = self.conv_dims(*x, i, true);
                plain(f::conv_transpose1d_forward(self.v(*x), self.v(*w), &d, *geom))
            }
            Op::BatchNorm { x, gamma, beta, eps, stats } => {
                let lay = BnLayout::of(&node.shape).expect("checked at build");
                let xv = self.v(*x);
                let (mean, var) = match stats {
                    BnStats::Batch => f::channel_moments(xv, lay),
                    BnStats::Running { mean, var } => (mean.clone(), var.clone()),
                };
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                let (g, b) = (self.v(*gamma), self.v(*beta));
                let mut xhat = vec![0.0; xv.len()];
                let mut out = vec![0.0; xv.len()];
                for c in 0..lay.channels {
                    lay.for_each_index(c, |k| {
                        xhat[k] = (xv[k] - mean[c]) * inv_std[c];
                        out[k] = g[c] * xhat[k] + b[c];
                    });
                }
                Ok((out, Aux::BatchNorm { xhat, inv_std, mean, var }))
            }
            Op::LeakyRelu(x, s) => plain(self.v(*x).iter().map(|&v| f::leaky_relu_scalar(v, *s)).collect()),
            Op::Relu(x) => plain(self.v(*x).iter().map(|&v| v.max(0.0)).collect()),
            Op::Sigmoid(x) => plain(self.v(*x).iter().map(|&v| f::sigmoid_scalar(v)).collect()),
            Op::Tanh(x) => plain(self.v(*x).iter().map(|v| v.tanh()).collect()),
            Op::Reshape(x) => plain(self.v(*x).to_vec()),
            Op::RoundSte(x) => plain(self.v(*x).iter().map(|&v| round_half_up(v)).collect()),
            Op::MinibatchDisc { x, t, b, c } => {
                let (n, a) = (self.shape_of(*x)[0], self.shape_of(*x)[1]);
                let xv = self.v(*x);
                let mut m = vec![0.0; n * b * c];
                f::matmul_acc(xv, self.v(*t), &mut m, n, a, b * c);
                let o = f::mbd_closeness(&m, n, *b, *c);
                let mut out = Vec::with_capacity(n * (a + b));
                for r in 0..n {
                    out.extend_from_slice(&xv[r * a..(r + 1) * a]);
                    out.extend_from_slice(&o[r * b..(r + 1) * b]);
                }
                Ok((out, Aux::Projection(m)))
            }
            Op::Sum(x) => plain(vec![self.v(*x).iter().sum()]),
            Op::Mean(x) => {
                let v = self.v(*x);
                plain(vec![v.iter().sum::<f64>() / v.len() as f64])
            }
            Op::Bce { p, target } => {
                let (pv, tv) = (self.v(*p), self.v(*target));
                let n = pv.len() as f64;
                let s: f64 = pv.iter().zip(tv).map(|(&p, &t)| bce_term(p, t)).sum();
                plain(vec![s / n])
            }
            Op::BceLogits { logits, target } => {
                let (lv, tv) = (self.v(*logits), self.v(*target));
                let n = lv.len() as f64;
                let s: f64 = lv.iter().zip(tv).map(|(&l, &t)| l.max(0.0) - l * t + (-l.abs()).exp().ln_1p()).sum();
                plain(vec![s / n])
            }
        }
    }

    fn conv_dims(&self, x: NodeId, out: usize, transpose: bool) -> ConvDims {
        let xs = self.shape_of(x);
        let os = &self.nodes[out].shape;
        let _ = transpose;
        ConvDims { batch: xs[0], in_ch: xs[1], out_ch: os[1], in_len: xs[2], out_len: os[2] }
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor> {
        self.check_ids("value", &[id])?;
        self.values[id.0]
            .as_ref()
            .ok_or_else(|| Error::State(format!("node {} has no value; run forward first", id.0)))
    }

    /// Batch mean and biased variance seen by a training-mode batch-norm node.
    pub fn batch_stats(&self, id: NodeId) -> Option<(&[f64], &[f64])> {
        match self.aux.get(id.0)? {
            Aux::BatchNorm { mean, var, .. } => Some((mean, var)),
            _ => None,
        }
    }

    /// Reverse pass from a scalar node. Gradients from an earlier backward are discarded.
    pub fn backward(&mut self, output: NodeId) -> Result<()> {
        self.check_ids("backward", &[output])?;
        if self.stage == Stage::Built || self.values[output.0].is_none() {
            return Err(Error::State("backward called before forward".into()));
        }
        if self.nodes[output.0].shape.iter().product::<usize>() != 1 {
            return Err(Error::State(format!(
                "backward needs a scalar output, node {} has shape {}",
                output.0,
                sh(&self.nodes[output.0].shape)
            )));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[output.0] = Some(vec![1.0]);
        for i in (0..=output.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gy) = self.grads[i].take() else { continue };
            self.backprop(i, &gy)?;
            self.grads[i] = Some(gy);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Param | Op::Input { .. }) {
                match &self.grads[i] {
                    None => self.grads[i] = Some(vec![0.0; node.shape.iter().product()]),
                    Some(g) if !g.iter().all(|v| v.is_finite()) => {
                        return Err(Error::Numeric { op: format!("backward (node {i})") })
                    }
                    _ => {}
                }
            }
        }
        self.stage = Stage::Backwarded;
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, g: Vec<f64>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut self.grads[id.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn backprop(&mut self, i: usize, gy: &[f64]) -> Result<()> {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Input { .. } | Op::Param | Op::Constant => {}
            Op::Add(a, b) => {
                self.accumulate(a, gy.to_vec());
                self.accumulate(b, gy.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(a, gy.to_vec());
                self.accumulate(b, gy.iter().map(|g| -g).collect());
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    let g = gy.iter().zip(self.v(b)).map(|(g, y)| g * y).collect();
                    self.accumulate(a, g);
                }
                if self.needs(b) {
                    let g = gy.iter().zip(self.v(a)).map(|(g, x)| g * x).collect();
                    self.accumulate(b, g);
                }
            }
            Op::AddRow(x, b) => {
                let w = self.shape_of(b)[0];
                if self.needs(b) {
                    let mut gb = vec![0.0; w];
                    for r in gy.chunks(w) {
                        gb.iter_mut().zip(r).for_each(|(a, v)| *a += v);
                    }
                    self.accumulate(b, gb);
                }
                self.accumulate(x, gy.to_vec());
            }
            Op::MulRow(x, b) => {
                let w = self.shape_of(b)[0];
                if self.needs(b) {
                    let mut gb = vec![0.0; w];
                    for (r, xr) in gy.chunks(w).zip(self.v(x).chunks(w)) {
                        for k in 0..w {
                            gb[k] += r[k] * xr[k];
                        }
                    }
                    self.accumulate(b, gb);
                }
                if self.needs(x) {
                    let bv = self.v(b);
                    let g = gy.chunks(w).flat_map(|r| r.iter().zip(bv).map(|(g, s)| g * s)).collect();
                    self.accumulate(x, g);
                }
            }
            Op::AddChannel(x, b) => {
                if self.needs(b) {
                    let (c, l) = (self.shape_of(x)[1], self.shape_of(x)[2]);
                    let mut gb = vec![0.0; c];
                    for (k, chunk) in gy.chunks(l).enumerate() {
                        gb[k % c] += chunk.iter().sum::<f64>();
                    }
                    self.accumulate(b, gb);
                }
                self.accumulate(x, gy.to_vec());
            }
            Op::Scale(x, s) => self.accumulate(x, gy.iter().map(|g| g * s).collect()),
            Op::MatMul(a, b) => {
                let (n, k) = (self.shape_of(a)[0], self.shape_of(a)[1]);
                let m = self.shape_of(b)[1];
                if self.needs(a) {
                    let mut ga = vec![0.0; n * k];
                    f::matmul_a_bt_acc(gy, self.v(b), &mut ga, n, m, k);
                    self.accumulate(a, ga);
                }
                if self.needs(b) {
                    let mut gb = vec![0.0; k * m];
                    f::matmul_at_b_acc(self.v(a), gy, &mut gb, n, k, m);
                    self.accumulate(b, gb);
                }
            }
            Op::Conv1d { x, w, geom } => {
                let d = self.conv_dims(x, i, false);
                let (dx, dw) = f::conv1d_backward(self.v(x), self.v(w), gy, &d, geom, self.needs(x), self.needs(w));
                if let Some(dx) = dx {
                    self.accumulate(x, dx);
                }
                if let Some(dw) = dw {
                    self.accumulate(w, dw);
                }
            }
            Op::ConvTranspose1d { x, w, geom } => {
                let d = self.conv_dims(x, i, true);
                let (dx, dw) =
                    f::conv_transpose1d_backward(self.v(x), self.v(w), gy, &d, geom, self.needs(x), self.needs(w));
                if let Some(dx) = dx {
                    self.accumulate(x, dx);
                }
                if let Some(dw) = dw {
                    self.accumulate(w, dw);
                }
            }
            Op::BatchNorm { x, gamma, beta, stats, .. } => {
                let lay = BnLayout::of(&self.nodes[i].shape).expect("checked at build");
                let Aux::BatchNorm { xhat, inv_std, .. } = &self.aux[i] else {
                    return Err(Error::State("batch norm cache missing".into()));
                };
                let gv = self.v(gamma);
                let m = lay.count() as f64;
                let mut dgamma = vec![0.0; lay.channels];
                let mut dbeta = vec![0.0; lay.channels];
                let mut dx = vec![0.0; gy.len()];
                for c in 0..lay.channels {
                    let (mut sg, mut sgx) = (0.0, 0.0);
                    lay.for_each_index(c, |k| {
                        sg += gy[k];
                        sgx += gy[k] * xhat[k];
                    });
                    dgamma[c] = sgx;
                    dbeta[c] = sg;
                    match stats {
                        BnStats::Batch => {
                            let scale = gv[c] * inv_std[c] / m;
                            lay.for_each_index(c, |k| {
                                dx[k] = scale * (m * gy[k] - sg - xhat[k] * sgx);
                            });
                        }
                        BnStats::Running { .. } => {
                            let scale = gv[c] * inv_std[c];
                            lay.for_each_index(c, |k| dx[k] = scale * gy[k]);
                        }
                    }
                }
                self.accumulate(x, dx);
                self.accumulate(gamma, dgamma);
                self.accumulate(beta, dbeta);
            }
            Op::LeakyRelu(x, s) => {
                let g = gy.iter().zip(self.v(x)).map(|(g, &v)| if v >= 0.0 { *g } else { g * s }).collect();
                self.accumulate(x, g);
            }
            Op::Relu(x) => {
                let g = gy.iter().zip(self.v(x)).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect();
                self.accumulate(x, g);
            }
            Op::Sigmoid(x) => {
                let y = self.values[i].as_ref().expect("forward ran").data();
                let g = gy.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                self.accumulate(x, g);
            }
            Op::Tanh(x) => {
                let y = self.values[i].as_ref().expect("forward ran").data();
                let g = gy.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                self.accumulate(x, g);
            }
            Op::Reshape(x) | Op::RoundSte(x) => self.accumulate(x, gy.to_vec()),
            Op::MinibatchDisc { x, t, b, c } => {
                let (n, a) = (self.shape_of(x)[0], self.shape_of(x)[1]);
                let Aux::Projection(m) = &self.aux[i] else {
                    return Err(Error::State("minibatch discrimination cache missing".into()));
                };
                let mut d_o = vec![0.0; n * b];
                let mut dx = vec![0.0; n * a];
                for r in 0..n {
                    dx[r * a..(r + 1) * a].copy_from_slice(&gy[r * (a + b)..r * (a + b) + a]);
                    d_o[r * b..(r + 1) * b].copy_from_slice(&gy[r * (a + b) + a..(r + 1) * (a + b)]);
                }
                let dm = f::mbd_closeness_backward(m, &d_o, n, b, c);
                if self.needs(x) {
                    f::matmul_a_bt_acc(&dm, self.v(t), &mut dx, n, b * c, a);
                    self.accumulate(x, dx);
                }
                if self.needs(t) {
                    let mut dt = vec![0.0; a * b * c];
                    f::matmul_at_b_acc(self.v(x), &dm, &mut dt, n, a, b * c);
                    self.accumulate(t, dt);
                }
            }
            Op::Sum(x) => {
                let n = self.v(x).len();
                self.accumulate(x, vec![gy[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.v(x).len();
                self.accumulate(x, vec![gy[0] / n as f64; n]);
            }
            Op::Bce { p, target } => {
                let n = self.v(p).len() as f64;
                let g = self
                    .v(p)
                    .iter()
                    .zip(self.v(target))
                    .map(|(&p, &t)| {
                        if (BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
                            gy[0] * (p - t) / (p * (1.0 - p)) / n
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.accumulate(p, g);
            }
            Op::BceLogits { logits, target } => {
                let n = self.v(logits).len() as f64;
                let g = self
                    .v(logits)
                    .iter()
                    .zip(self.v(target))
                    .map(|(&l, &t)| gy[0] * (f::sigmoid_scalar(l) - t) / n)
                    .collect();
                self.accumulate(logits, g);
            }
        }
        Ok(())
    }

    /// Gradient of the last backward output with respect to `id`.
    pub fn grad(&self, id: NodeId) -> Result<&[f64]> {
        self.check_ids("grad", &[id])?;
        if self.stage != Stage::Backwarded {
            return Err(Error::State("no gradients: run forward and backward first".into()));
        }
        self.grads[id.0]
            .as_deref()
            .ok_or_else(|| Error::State(format!("node {} does not track gradients", id.0)))
    }
}

/// Nearest-integer rounding with ties going up.
/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-7;

/// Binary cross-entropy of one probability against one target, with clamping.
pub fn bce_term(p: f64, t: f64) -> f64 {
    let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

pub fn round_half_up(v: f64) -> f64 {
    (v + 0.5).floor()
}
