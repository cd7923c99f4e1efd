//! Layer vocabulary and sequential networks built on [`Graph`].

pub mod functional;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

pub use functional::{conv1d, conv1d_transpose, leaky_relu, minibatch_discrimination};

pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
    },
    Conv1dTranspose {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
    },
    Batchnorm1d {
        features: usize,
    },
    LeakyRelu {
        slope: f64,
    },
    Relu,
    Sigmoid,
    Tanh,
    /// Zeroes each entry with probability `prob` in training mode (no rescaling).
    Dropout {
        prob: f64,
    },
    /// `kernels` is B (rows of each projected matrix), `kernel_dim` is C.
    MinibatchDiscrimination {
        features: usize,
        kernels: usize,
        kernel_dim: usize,
    },
    /// `[batch, channels * length]` to `[batch, channels, length]`.
    Reshape {
        channels: usize,
        length: usize,
    },
    Flatten,
    /// Maps `(-1, 1)` affinely onto per-feature `[lo, hi]` held as buffers.
    RangeAffine {
        width: usize,
    },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match *self {
            LayerSpec::Dense { inputs, outputs } if inputs == 0 || outputs == 0 => {
                bad(format!("dense widths must be positive: {inputs}->{outputs}"))
            }
            LayerSpec::Conv1d { in_channels, out_channels, kernel_size, stride, .. }
            | LayerSpec::Conv1dTranspose { in_channels, out_channels, kernel_size, stride, .. } => {
                if in_channels == 0 || out_channels == 0 {
                    bad("convolution channels must be positive".into())
                } else if kernel_size == 0 || stride == 0 {
                    bad(format!("kernel size {kernel_size} and stride {stride} must be >= 1"))
                } else {
                    Ok(())
                }
            }
            LayerSpec::LeakyRelu { slope } if !(slope > 0.0 && slope < 1.0) => {
                bad(format!("leaky_relu slope {slope} outside (0,1)"))
            }
            LayerSpec::Dropout { prob } if !(0.0..1.0).contains(&prob) => {
                bad(format!("dropout probability {prob} outside [0,1)"))
            }
            LayerSpec::MinibatchDiscrimination { features, kernels, kernel_dim }
                if features == 0 || kernels == 0 || kernel_dim == 0 =>
            {
                bad("minibatch discrimination dims must be positive".into())
            }
            LayerSpec::Batchnorm1d { features: 0 } | LayerSpec::RangeAffine { width: 0 } => {
                bad("zero-width layer".into())
            }
            LayerSpec::Reshape { channels, length } if channels == 0 || length == 0 => {
                bad("reshape extents must be positive".into())
            }
            _ => Ok(()),
        }
    }

    fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Conv1dTranspose { .. } => "conv1d_transpose",
            LayerSpec::Batchnorm1d { .. } => "batchnorm1d",
            LayerSpec::LeakyRelu { .. } => "leaky_relu",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Tanh => "tanh",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::MinibatchDiscrimination { .. } => "minibatch_discrimination",
            LayerSpec::Reshape { .. } => "reshape",
            LayerSpec::Flatten => "flatten",
            LayerSpec::RangeAffine { .. } => "range_affine",
        }
    }

    /// Trainable parameter shapes with their names.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            LayerSpec::Dense { inputs, outputs } => vec![("weight", vec![inputs, outputs]), ("bias", vec![outputs])],
            LayerSpec::Conv1d { in_channels, out_channels, kernel_size, .. } => vec![
                ("weight", vec![out_channels, in_channels, kernel_size]),
                ("bias", vec![out_channels]),
            ],
            LayerSpec::Conv1dTranspose { in_channels, out_channels, kernel_size, .. } => vec![
                ("weight", vec![in_channels, out_channels, kernel_size]),
                ("bias", vec![out_channels]),
            ],
            LayerSpec::Batchnorm1d { features } => vec![("gamma", vec![features]), ("beta", vec![features])],
            LayerSpec::MinibatchDiscrimination { features, kernels, kernel_dim } => {
                vec![("projection", vec![features, kernels, kernel_dim])]
            }
            _ => Vec::new(),
        }
    }

    fn buffer_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            LayerSpec::Batchnorm1d { features } => {
                vec![("running_mean", vec![features]), ("running_var", vec![features])]
            }
            LayerSpec::RangeAffine { width } => vec![("lo", vec![width]), ("hi", vec![width])],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, .. } => inputs,
            LayerSpec::Conv1d { in_channels, kernel_size, .. }
            | LayerSpec::Conv1dTranspose { in_channels, kernel_size, .. } => in_channels * kernel_size,
            LayerSpec::MinibatchDiscrimination { features, .. } => features,
            _ => 1,
        }
    }

    /// Output shape (excluding batch) for a given input shape (excluding batch).
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = || {
            Error::Config(format!("{} layer cannot accept per-record shape {input:?}", self.kind_name()))
        };
        match *self {
            LayerSpec::Dense { inputs, outputs } => (input == [inputs]).then(|| vec![outputs]).ok_or_else(mismatch),
            LayerSpec::Conv1d { in_channels, out_channels, kernel_size, stride, padding } => match *input {
                [c, l] if c == in_channels => functional::ConvGeom { stride, padding, kernel: kernel_size }
                    .conv_out_len(l)
                    .map(|lo| vec![out_channels, lo])
                    .ok_or_else(mismatch),
                _ => Err(mismatch()),
            },
            LayerSpec::Conv1dTranspose { in_channels, out_channels, kernel_size, stride, padding } => match *input {
                [c, l] if c == in_channels => functional::ConvGeom { stride, padding, kernel: kernel_size }
                    .transpose_out_len(l)
                    .map(|lo| vec![out_channels, lo])
                    .ok_or_else(mismatch),
                _ => Err(mismatch()),
            },
            LayerSpec::Batchnorm1d { features } => {
                (input.first() == Some(&features) && input.len() <= 2).then(|| input.to_vec()).ok_or_else(mismatch)
            }
            LayerSpec::MinibatchDiscrimination { features, kernels, .. } => {
                (input == [features]).then(|| vec![features + kernels]).ok_or_else(mismatch)
            }
            LayerSpec::Reshape { channels, length } => {
                (input == [channels * length]).then(|| vec![channels, length]).ok_or_else(mismatch)
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::RangeAffine { width } => (input == [width]).then(|| input.to_vec()).ok_or_else(mismatch),
            _ => Ok(input.to_vec()),
        }
    }
}

/// One layer's trainable parameters and non-trainable buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub params: Vec<Tensor>,
    pub buffers: Vec<Tensor>,
}

impl Layer {
    pub fn init<R: Rng + ?Sized>(spec: LayerSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let scale = 1.0 / (spec.fan_in() as f64).sqrt();
        let params = spec
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| match name {
                "gamma" => Tensor::ones(&shape),
                "beta" => Tensor::zeros(&shape),
                _ => Tensor::uniform(&shape, scale, rng),
            })
            .collect();
        let buffers = spec
            .buffer_shapes()
            .into_iter()
            .map(|(name, shape)| match name {
                "running_var" | "hi" => Tensor::ones(&shape),
                "lo" => Tensor::full(&shape, -1.0),
                _ => Tensor::zeros(&shape),
            })
            .collect();
        Ok(Layer { spec, params, buffers })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A feed-forward stack of layers applied to `[batch, ...]` activations.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
}

/// Graph node ids for a network's parameters.
#[derive(Debug, Clone)]
pub struct Binding {
    ids: Vec<Vec<NodeId>>,
    trainable: bool,
}

/// Result of wiring a network into a graph.
#[derive(Debug, Clone)]
pub struct Trace {
    pub output: NodeId,
    /// Pre-activation of a trailing sigmoid, when the network ends in one.
    pub logits: Option<NodeId>,
    batch_norms: Vec<(usize, NodeId)>,
    dropout_masks: Vec<(usize, NodeId)>,
}

impl Binding {
    /// Parameter leaves in parameter order.
    pub fn nodes(&self) -> Vec<NodeId> {
        self.ids.iter().flatten().copied().collect()
    }
}

impl Network {
    pub fn new<R: Rng + ?Sized>(specs: &[LayerSpec], input_shape: &[usize], rng: &mut R) -> Result<Self> {
        let mut shape = input_shape.to_vec();
        for spec in specs {
            spec.validate()?;
            shape = spec.output_shape(&shape)?;
        }
        let layers = specs.iter().map(|s| Layer::init(s.clone(), rng)).collect::<Result<_>>()?;
        Ok(Network { layers, input_shape: input_shape.to_vec() })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> Vec<usize> {
        let mut shape = self.input_shape.clone();
        for l in &self.layers {
            shape = l.spec.output_shape(&shape).expect("validated at construction");
        }
        shape
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().flat_map(|l| &l.params).map(Tensor::len).sum()
    }

    /// Named parameter and buffer tensors, in a stable order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            for ((name, _), t) in l.spec.param_shapes().iter().zip(&l.params) {
                out.push((format!("{i}.{name}"), t));
            }
            for ((name, _), t) in l.spec.buffer_shapes().iter().zip(&l.buffers) {
                out.push((format!("{i}.{name}"), t));
            }
        }
        out
    }

    /// Mutable view over the same tensors as [`Network::named_tensors`].
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            let pnames = l.spec.param_shapes();
            let bnames = l.spec.buffer_shapes();
            for ((name, _), t) in pnames.iter().zip(l.params.iter_mut()) {
                out.push((format!("{i}.{name}"), t));
            }
            for ((name, _), t) in bnames.iter().zip(l.buffers.iter_mut()) {
                out.push((format!("{i}.{name}"), t));
            }
        }
        out
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| &l.params)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut())
    }

    /// Sets the `[lo, hi]` target of every range-affine layer.
    pub fn set_range(&mut self, lo: &[f64], hi: &[f64]) -> Result<()> {
        for l in &mut self.layers {
            if let LayerSpec::RangeAffine { width } = l.spec {
                if lo.len() != width || hi.len() != width {
                    return Err(Error::shape("range_affine", format!("width {width}, bounds {}", lo.len())));
                }
                l.buffers[0] = Tensor::new(&[width], lo.to_vec())?;
                l.buffers[1] = Tensor::new(&[width], hi.to_vec())?;
            }
        }
        Ok(())
    }

    /// Registers parameters as graph leaves; frozen bindings use constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Binding {
        let ids = self
            .layers
            .iter()
            .map(|l| {
                l.params
                    .iter()
                    .map(|p| if trainable { g.param(p.clone()) } else { g.constant(p.clone()) })
                    .collect()
            })
            .collect();
        Binding { ids, trainable }
    }

    /// Copies current parameter values into a previously bound graph.
    pub fn load(&self, g: &mut Graph, binding: &Binding) -> Result<()> {
        for (l, ids) in self.layers.iter().zip(&binding.ids) {
            for (p, &id) in l.params.iter().zip(ids) {
                g.set_value(id, p)?;
            }
        }
        Ok(())
    }

    /// Wires the network onto `x`. Eval mode bakes current running statistics
    /// into the graph, so rebuild after they change.
    pub fn build(&self, g: &mut Graph, binding: &Binding, x: NodeId, mode: Mode) -> Result<Trace> {
        let mut h = x;
        let mut logits = None;
        let mut batch_norms = Vec::new();
        let mut dropout_masks = Vec::new();
        let batch = g.shape(x)[0];
        for (i, (layer, ids)) in self.layers.iter().zip(&binding.ids).enumerate() {
            logits = None;
            h = match layer.spec {
                LayerSpec::Dense { .. } => {
                    let y = g.matmul(h, ids[0])?;
                    g.add_row(y, ids[1])?
                }
                LayerSpec::Conv1d { stride, padding, .. } => {
                    let y = g.conv1d(h, ids[0], stride, padding)?;
                    g.add_channel(y, ids[1])?
                }
                LayerSpec::Conv1dTranspose { stride, padding, .. } => {
                    let y = g.conv1d_transpose(h, ids[0], stride, padding)?;
                    g.add_channel(y, ids[1])?
                }
                LayerSpec::Batchnorm1d { .. } => match mode {
                    Mode::Train => {
                        let y = g.batch_norm(h, ids[0], ids[1], BATCHNORM_EPS, None)?;
                        batch_norms.push((i, y));
                        y
                    }
                    Mode::Eval => {
                        let running = (layer.buffers[0].data(), layer.buffers[1].data());
                        g.batch_norm(h, ids[0], ids[1], BATCHNORM_EPS, Some(running))?
                    }
                },
                LayerSpec::LeakyRelu { slope } => g.leaky_relu(h, slope)?,
                LayerSpec::Relu => g.relu(h)?,
                LayerSpec::Sigmoid => {
                    logits = Some(h);
                    g.sigmoid(h)?
                }
                LayerSpec::Tanh => g.tanh(h)?,
                LayerSpec::Dropout { .. } => match mode {
                    Mode::Train => {
                        let mask = g.constant(Tensor::ones(g.shape(h)));
                        dropout_masks.push((i, mask));
                        g.mul(h, mask)?
                    }
                    Mode::Eval => h,
                },
                LayerSpec::MinibatchDiscrimination { .. } => g.minibatch_discrimination(h, ids[0])?,
                LayerSpec::Reshape { channels, length } => g.reshape(h, &[batch, channels, length])?,
                LayerSpec::Flatten => {
                    let n: usize = g.shape(h)[1..].iter().product();
                    g.reshape(h, &[batch, n])?
                }
                LayerSpec::RangeAffine { .. } => {
                    let (lo, hi) = (layer.buffers[0].data(), layer.buffers[1].data());
                    let scale: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| (h - l) / 2.0).collect();
                    let shift: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| (h + l) / 2.0).collect();
                    let s = g.constant(Tensor::new(&[scale.len()], scale)?);
                    let b = g.constant(Tensor::new(&[shift.len()], shift)?);
                    let y = g.mul_row(h, s)?;
                    g.add_row(y, b)?
                }
            };
        }
        Ok(Trace { output: h, logits, batch_norms, dropout_masks })
    }

    /// Draws fresh dropout masks for a training-mode trace.
    pub fn resample_masks<R: Rng + ?Sized>(&self, g: &mut Graph, trace: &Trace, rng: &mut R) -> Result<()> {
        for &(i, node) in &trace.dropout_masks {
            let LayerSpec::Dropout { prob } = self.layers[i].spec else { continue };
            let shape = g.shape(node).to_vec();
            let n: usize = shape.iter().product();
            let mask = (0..n).map(|_| if rng.random::<f64>() < prob { 0.0 } else { 1.0 }).collect();
            g.set_value(node, &Tensor::new(&shape, mask)?)?;
        }
        Ok(())
    }

    /// Folds the batch statistics observed in the last forward pass into the
    /// running estimates (unbiased variance, momentum [`BATCHNORM_MOMENTUM`]).
    pub fn update_running_stats(&mut self, g: &Graph, trace: &Trace) {
        for &(i, node) in &trace.batch_norms {
            let Some((mean, var)) = g.batch_stats(node) else { continue };
            let shape = g.shape(node);
            let count: usize = shape[0] * shape.get(2).copied().unwrap_or(1);
            let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
            let layer = &mut self.layers[i];
            let m = BATCHNORM_MOMENTUM;
            for (r, v) in layer.buffers[0].data_mut().iter_mut().zip(mean) {
                *r = (1.0 - m) * *r + m * v;
            }
            for (r, v) in layer.buffers[1].data_mut().iter_mut().zip(var) {
                *r = (1.0 - m) * *r + m * v * unbias;
            }
        }
    }

    /// Parameter gradients from the graph's last backward pass, in parameter order.
    pub fn grads<'g>(&self, g: &'g Graph, binding: &Binding) -> Result<Vec<&'g [f64]>> {
        if !binding.trainable {
            return Err(Error::State("network was bound frozen; no parameter gradients".into()));
        }
        binding.ids.iter().flatten().map(|&id| g.grad(id)).collect()
    }
}

/// Zeroes each entry of `input` independently with probability `drop_prob`.
pub fn corrupt<R: Rng + ?Sized>(input: &Tensor, drop_prob: f64, rng: &mut R) -> Result<Tensor> {
    if !(0.0..1.0).contains(&drop_prob) {
        return Err(Error::Precondition(format!("drop probability {drop_prob} outside [0,1)")));
    }
    if drop_prob == 0.0 {
        return Ok(input.clone());
    }
    let data = input
        .data()
        .iter()
        .map(|&v| if rng.random::<f64>() < drop_prob { 0.0 } else { v })
        .collect();
    Tensor::new(input.shape(), data)
}
