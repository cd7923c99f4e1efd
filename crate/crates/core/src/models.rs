//! Network assembly: autoencoder, generator and discriminator stacks for the
//! convolutional architecture and the dense (MLP) baseline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DataMode, RecordMatrix};
use crate::error::{Error, Result};
use crate::graph::{round_half_up, Graph};
use crate::nn::{corrupt, LayerSpec, Mode, Network};
use crate::tensor::Tensor;

pub const DEFAULT_CODE_WIDTH: usize = 128;
pub const DEFAULT_NOISE_WIDTH: usize = 128;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const MBD_KERNELS: usize = 32;
pub const MBD_KERNEL_DIM: usize = 8;

/// Rows pushed through a network per evaluation graph.
const EVAL_CHUNK: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenMode {
    Discrete,
    Continuous,
}

impl GenMode {
    pub fn data_mode(self) -> DataMode {
        match self {
            GenMode::Discrete => DataMode::Binary,
            GenMode::Continuous => DataMode::Continuous,
        }
    }
}

impl std::str::FromStr for GenMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "discrete" => Ok(GenMode::Discrete),
            "continuous" => Ok(GenMode::Continuous),
            _ => Err(Error::Config(format!("unknown mode {s:?} (expected discrete or continuous)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Corgan,
    MlpBaseline,
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corgan" => Ok(Family::Corgan),
            "mlp-baseline" | "mlp" => Ok(Family::MlpBaseline),
            _ => Err(Error::Config(format!("unknown family {s:?} (expected corgan or mlp-baseline)"))),
        }
    }
}

/// Everything needed to allocate a model's parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureDescriptor {
    pub mode: GenMode,
    pub family: Family,
    pub record_width: usize,
    pub code_width: usize,
    pub noise_width: usize,
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
    pub generator: Vec<LayerSpec>,
    pub discriminator: Vec<LayerSpec>,
}

fn half(len: usize) -> usize {
    len.div_ceil(2)
}

/// Stride-2 transposed-conv kernel/padding taking `ceil(to/2)` positions to `to`.
fn upsample(in_channels: usize, out_channels: usize, to: usize) -> LayerSpec {
    let (kernel_size, padding) = if to % 2 == 0 { (4, 1) } else { (5, 2) };
    LayerSpec::Conv1dTranspose { in_channels, out_channels, kernel_size, stride: 2, padding }
}

fn downsample(in_channels: usize, out_channels: usize) -> LayerSpec {
    LayerSpec::Conv1d { in_channels, out_channels, kernel_size: 5, stride: 2, padding: 2 }
}

fn leaky() -> LayerSpec {
    LayerSpec::LeakyRelu { slope: LEAKY_SLOPE }
}

fn dense(inputs: usize, outputs: usize) -> LayerSpec {
    LayerSpec::Dense { inputs, outputs }
}

impl ArchitectureDescriptor {
    /// Default stacks for a record width `m` with the default code and noise widths.
    pub fn new(mode: GenMode, family: Family, m: usize) -> Result<Self> {
        Self::with_widths(mode, family, m, DEFAULT_CODE_WIDTH, DEFAULT_NOISE_WIDTH)
    }

    pub fn with_widths(mode: GenMode, family: Family, m: usize, code_width: usize, noise_width: usize) -> Result<Self> {
        if m < 2 || code_width < 2 || noise_width == 0 {
            return Err(Error::Config(format!(
                "record width {m}, code width {code_width} and noise width {noise_width} are too small"
            )));
        }
        let h = code_width;
        let (l1, l2) = (half(m), half(half(m)));
        let (encoder, decoder) = match (mode, family) {
            (GenMode::Continuous, _) => (Vec::new(), Vec::new()),
            (GenMode::Discrete, Family::Corgan) => (
                vec![
                    LayerSpec::Reshape { channels: 1, length: m },
                    downsample(1, 32),
                    leaky(),
                    downsample(32, 64),
                    leaky(),
                    LayerSpec::Flatten,
                    dense(64 * l2, h),
                ],
                vec![
                    dense(h, 64 * l2),
                    leaky(),
                    LayerSpec::Reshape { channels: 64, length: l2 },
                    upsample(64, 32, l1),
                    leaky(),
                    upsample(32, 1, m),
                    LayerSpec::Flatten,
                    LayerSpec::Sigmoid,
                ],
            ),
            (GenMode::Discrete, Family::MlpBaseline) => (
                vec![dense(m, 32 * l1), leaky(), dense(32 * l1, 64 * l2), leaky(), dense(64 * l2, h)],
                vec![dense(h, 64 * l2), leaky(), dense(64 * l2, 32 * l1), leaky(), dense(32 * l1, m), LayerSpec::Sigmoid],
            ),
        };
        let out = match mode {
            GenMode::Discrete => h,
            GenMode::Continuous => m,
        };
        let (g1, g2) = (half(out), half(half(out)));
        let generator = match family {
            Family::Corgan => vec![
                dense(noise_width, 16 * g2),
                LayerSpec::Reshape { channels: 16, length: g2 },
                LayerSpec::Batchnorm1d { features: 16 },
                LayerSpec::Relu,
                upsample(16, 8, g1),
                LayerSpec::Batchnorm1d { features: 8 },
                LayerSpec::Relu,
                upsample(8, 1, out),
                LayerSpec::Flatten,
                LayerSpec::Tanh,
                LayerSpec::RangeAffine { width: out },
            ],
            Family::MlpBaseline => vec![
                dense(noise_width, 16 * g2),
                LayerSpec::Batchnorm1d { features: 16 * g2 },
                LayerSpec::Relu,
                dense(16 * g2, 8 * g1),
                LayerSpec::Batchnorm1d { features: 8 * g1 },
                LayerSpec::Relu,
                dense(8 * g1, out),
                LayerSpec::Tanh,
                LayerSpec::RangeAffine { width: out },
            ],
        };
        let features = 32 * l2;
        let head = [
            LayerSpec::MinibatchDiscrimination { features, kernels: MBD_KERNELS, kernel_dim: MBD_KERNEL_DIM },
            dense(features + MBD_KERNELS, 1),
            LayerSpec::Sigmoid,
        ];
        let mut discriminator = match family {
            Family::Corgan => vec![
                LayerSpec::Reshape { channels: 1, length: m },
                downsample(1, 16),
                leaky(),
                downsample(16, 32),
                leaky(),
                LayerSpec::Flatten,
            ],
            Family::MlpBaseline => vec![dense(m, 16 * l1), leaky(), dense(16 * l1, features), leaky()],
        };
        discriminator.extend(head);
        let d = ArchitectureDescriptor {
            mode,
            family,
            record_width: m,
            code_width: h,
            noise_width,
            encoder,
            decoder,
            generator,
            discriminator,
        };
        d.validate()?;
        Ok(d)
    }

    /// Checks that every stack is internally consistent and the widths line up.
    pub fn validate(&self) -> Result<()> {
        let out = |specs: &[LayerSpec], input: usize, what: &str| -> Result<Vec<usize>> {
            let mut shape = vec![input];
            for s in specs {
                s.validate()?;
                shape = s.output_shape(&shape).map_err(|e| Error::Config(format!("{what}: {e}")))?;
            }
            Ok(shape)
        };
        let (m, h) = (self.record_width, self.code_width);
        match self.mode {
            GenMode::Continuous => {
                if !self.encoder.is_empty() || !self.decoder.is_empty() {
                    return Err(Error::Config("continuous mode has no autoencoder".into()));
                }
                if out(&self.generator, self.noise_width, "generator")? != [m] {
                    return Err(Error::Config(format!("continuous generator must emit {m} values")));
                }
            }
            GenMode::Discrete => {
                if out(&self.encoder, m, "encoder")? != [h] {
                    return Err(Error::Config(format!("encoder must map {m} to {h}")));
                }
                if out(&self.decoder, h, "decoder")? != [m] {
                    return Err(Error::Config(format!("decoder must map {h} to {m}")));
                }
                if self.decoder.last() != Some(&LayerSpec::Sigmoid) {
                    return Err(Error::Config("decoder must end in a sigmoid".into()));
                }
                if out(&self.generator, self.noise_width, "generator")? != [h] {
                    return Err(Error::Config(format!("generator must emit a {h}-wide code")));
                }
            }
        }
        if out(&self.discriminator, m, "discriminator")? != [1] || self.discriminator.last() != Some(&LayerSpec::Sigmoid) {
            return Err(Error::Config("discriminator must end in a single sigmoid unit".into()));
        }
        Ok(())
    }

    /// Parameter count implied by the descriptor.
    pub fn param_count(&self) -> usize {
        [&self.encoder, &self.decoder, &self.generator, &self.discriminator]
            .iter()
            .flat_map(|s| s.iter())
            .map(LayerSpec::param_count)
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("descriptor serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let d: Self = serde_json::from_str(s).map_err(|e| Error::Checkpoint(format!("descriptor: {e}")))?;
        d.validate()?;
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub encoder: Network,
    pub decoder: Network,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub net: Network,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub net: Network,
}

/// Freshly initialized networks for a descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub descriptor: ArchitectureDescriptor,
    pub autoencoder: Option<Autoencoder>,
    pub generator: Generator,
    pub discriminator: Discriminator,
}

impl Models {
    pub fn param_count(&self) -> usize {
        let ae = self.autoencoder.as_ref().map_or(0, |a| a.encoder.param_count() + a.decoder.param_count());
        ae + self.generator.net.param_count() + self.discriminator.net.param_count()
    }
}

impl Autoencoder {
    pub fn init<R: Rng + ?Sized>(d: &ArchitectureDescriptor, rng: &mut R) -> Result<Self> {
        if d.mode != GenMode::Discrete {
            return Err(Error::Config("continuous mode has no autoencoder".into()));
        }
        Ok(Autoencoder {
            encoder: Network::new(&d.encoder, &[d.record_width], rng)?,
            decoder: Network::new(&d.decoder, &[d.code_width], rng)?,
        })
    }
}

impl Generator {
    pub fn init<R: Rng + ?Sized>(d: &ArchitectureDescriptor, rng: &mut R) -> Result<Self> {
        Ok(Generator { net: Network::new(&d.generator, &[d.noise_width], rng)? })
    }

    pub fn noise_width(&self) -> usize {
        self.net.input_shape()[0]
    }
}

impl Discriminator {
    pub fn init<R: Rng + ?Sized>(d: &ArchitectureDescriptor, rng: &mut R) -> Result<Self> {
        Ok(Discriminator { net: Network::new(&d.discriminator, &[d.record_width], rng)? })
    }

    /// Probability of "real" for every row, in eval mode.
    pub fn score(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(eval_chunks(&self.net, x)?.into_data())
    }
}

/// Allocates and initializes every network the descriptor calls for.
pub fn build<R: Rng + ?Sized>(descriptor: &ArchitectureDescriptor, rng: &mut R) -> Result<Models> {
    descriptor.validate()?;
    let autoencoder = match descriptor.mode {
        GenMode::Discrete => Some(Autoencoder::init(descriptor, rng)?),
        GenMode::Continuous => None,
    };
    Ok(Models {
        descriptor: descriptor.clone(),
        autoencoder,
        generator: Generator::init(descriptor, rng)?,
        discriminator: Discriminator::init(descriptor, rng)?,
    })
}

/// Runs a network in eval mode over `x`, in row chunks.
pub fn eval_chunks(net: &Network, x: &Tensor) -> Result<Tensor> {
    let n = x.shape()[0];
    let mut out = Vec::new();
    let mut out_shape = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let chunk = x.select_rows(&idx)?;
        let mut g = Graph::new();
        let b = net.bind(&mut g, false);
        let xi = g.input(chunk.shape());
        let tr = net.build(&mut g, &b, xi, Mode::Eval)?;
        g.forward(&[chunk])?;
        let v = g.value(tr.output)?;
        out_shape = v.shape().to_vec();
        out.extend_from_slice(v.data());
        start = end;
    }
    out_shape[0] = n;
    Tensor::new(&out_shape, out)
}

fn check_width(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::shape("models", format!("{what}: expected width {want}, got {got}")));
    }
    Ok(())
}

/// Synthetic records from noise `z`: `round(Dec(G(z)))` in discrete mode,
/// `G(z)` unrounded in continuous mode.
pub fn generate(generator: &Generator, decoder: Option<&Network>, z: &Tensor, mode: GenMode) -> Result<RecordMatrix> {
    check_width("noise", z.shape().get(1).copied().unwrap_or(0), generator.noise_width())?;
    let g = eval_chunks(&generator.net, z)?;
    match mode {
        GenMode::Discrete => {
            let dec = decoder.ok_or_else(|| Error::Config("discrete generation needs a decoder".into()))?;
            let probs = eval_chunks(dec, &g)?;
            let values = probs.data().iter().map(|&p| round_half_up(p)).collect();
            RecordMatrix::new(probs.shape()[0], probs.shape()[1], DataMode::Binary, values)
        }
        GenMode::Continuous => RecordMatrix::from_tensor(&g, DataMode::Continuous),
    }
}

/// Codes `Enc(x)` for every record.
pub fn encode(ae: &Autoencoder, x: &RecordMatrix) -> Result<Tensor> {
    check_width("records", x.cols(), ae.encoder.input_shape()[0])?;
    eval_chunks(&ae.encoder, &x.to_tensor()?)
}

/// `Dec(Enc(x))`, optionally encoding a corrupted copy of `x`.
pub fn reconstruct<R: Rng + ?Sized>(ae: &Autoencoder, x: &RecordMatrix, drop_prob: Option<f64>, rng: &mut R) -> Result<Tensor> {
    check_width("records", x.cols(), ae.encoder.input_shape()[0])?;
    let mut input = x.to_tensor()?;
    if let Some(p) = drop_prob {
        input = corrupt(&input, p, rng)?;
    }
    let code = eval_chunks(&ae.encoder, &input)?;
    eval_chunks(&ae.decoder, &code)
}

/// Per-feature min-max scaling onto `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(data: &RecordMatrix) -> Self {
        let m = data.cols();
        let mut min = vec![f64::INFINITY; m];
        let mut max = vec![f64::NEG_INFINITY; m];
        for i in 0..data.rows() {
            for (j, &v) in data.row(i).iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        MinMaxScaler { min, max }
    }

    fn map(&self, data: &RecordMatrix, f: impl Fn(f64, f64, f64) -> f64) -> Result<RecordMatrix> {
        check_width("scaler", data.cols(), self.min.len())?;
        let m = data.cols();
        let values = data
            .values()
            .iter()
            .enumerate()
            .map(|(k, &v)| f(v, self.min[k % m], self.max[k % m]))
            .collect();
        let mut out = RecordMatrix::new(data.rows(), m, DataMode::Continuous, values)?;
        if let Some(l) = data.labels() {
            out = out.with_labels(l.to_vec())?;
        }
        Ok(out)
    }

    pub fn transform(&self, data: &RecordMatrix) -> Result<RecordMatrix> {
        self.map(data, |v, lo, hi| if hi > lo { 2.0 * (v - lo) / (hi - lo) - 1.0 } else { 0.0 })
    }

    pub fn inverse(&self, data: &RecordMatrix) -> Result<RecordMatrix> {
        self.map(data, |v, lo, hi| lo + (v + 1.0) / 2.0 * (hi - lo))
    }
}
