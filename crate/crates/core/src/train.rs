//! Adam, autoencoder pretraining and the adversarial loop.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::RecordMatrix;
use crate::error::{Error, Result};
use crate::graph::{bce_term, Graph, NodeId};
use crate::models::{eval_chunks, Autoencoder, Discriminator, GenMode, Generator};
use crate::nn::{corrupt, Binding, Mode, Network, Trace};
use crate::tensor::{sample_noise, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for one parameter vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape("adam_step", format!("{} params, {} grads", params.len(), grads.len())));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric { op: "adam_step".into() });
    }
    if state.m.len() != params.len() {
        state.m = vec![0.0; params.len()];
        state.v = vec![0.0; params.len()];
        state.step = 0;
    }
    state.step += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for ((p, &g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        *p -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam over every parameter tensor of a network.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, states: Vec::new() }
    }

    /// Applies the gradients of `g`'s last backward pass to `net`.
    pub fn step(&mut self, net: &mut Network, g: &Graph, binding: &Binding) -> Result<()> {
        let grads = net.grads(g, binding)?;
        let grads: Vec<Vec<f64>> = grads.into_iter().map(<[f64]>::to_vec).collect();
        if self.states.len() != grads.len() {
            self.states = vec![AdamState::default(); grads.len()];
        }
        for ((p, gr), st) in net.params_mut().zip(&grads).zip(&mut self.states) {
            adam_step(p.data_mut(), gr, st, &self.cfg)?;
        }
        Ok(())
    }
}

/// Mean binary cross-entropy of probabilities `y` against targets `x`.
pub fn bce_loss(y: &Tensor, x: &Tensor) -> Result<f64> {
    if y.shape() != x.shape() {
        return Err(Error::shape("bce_loss", format!("{:?} vs {:?}", y.shape(), x.shape())));
    }
    let s: f64 = y.data().iter().zip(x.data()).map(|(&p, &t)| bce_term(p, t)).sum();
    Ok(s / y.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_ae: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub d_steps: usize,
    pub seed: u64,
    pub drop_prob: f64,
    /// Epochs between in-memory snapshots used to recover from divergence.
    pub checkpoint_every: usize,
    /// Epochs without improvement of the monitored marginal error before
    /// stopping; 0 disables early stopping.
    pub patience: usize,
    /// Records generated per epoch to monitor marginal error.
    pub monitor_samples: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 500,
            batch_size: 500,
            lr_ae: 1e-3,
            lr_g: 1e-4,
            lr_d: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            d_steps: 1,
            seed: 0,
            drop_prob: 0.1,
            checkpoint_every: 10,
            patience: 50,
            monitor_samples: 1000,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("d_steps", self.d_steps),
            ("checkpoint_every", self.checkpoint_every),
            ("monitor_samples", self.monitor_samples),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [("lr_ae", self.lr_ae), ("lr_g", self.lr_g), ("lr_d", self.lr_d), ("adam_eps", self.adam_eps)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.drop_prob) {
            return Err(Error::Config(format!("drop_prob must lie in [0, 1), got {}", self.drop_prob)));
        }
        Ok(())
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig { lr, beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }
}

/// One completed epoch. Fields that do not apply to a phase are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_ae: Option<f64>,
    pub loss_d: Option<f64>,
    pub loss_g: Option<f64>,
    pub acc_real: Option<f64>,
    pub acc_fake: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss_ae,loss_d,loss_g,acc_real,acc_fake\n");
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.epoch,
                f(r.loss_ae),
                f(r.loss_d),
                f(r.loss_g),
                f(r.acc_real),
                f(r.acc_fake)
            );
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn batches<R: Rng + ?Sized>(n: usize, batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks_exact(batch).map(<[usize]>::to_vec).collect()
}

fn effective_batch(cfg: &TrainingConfig, n: usize) -> Result<usize> {
    let b = cfg.batch_size.min(n);
    if b < 2 {
        return Err(Error::Precondition(format!("training needs at least 2 records, got {n}")));
    }
    Ok(b)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Denoising autoencoder pretraining: minimizes the BCE between
/// `Dec(Enc(corrupt(x)))` and `x`.
pub fn pretrain_autoencoder(ae: &mut Autoencoder, data: &RecordMatrix, cfg: &TrainingConfig) -> Result<TrainingLog> {
    cfg.validate()?;
    if data.mode() != crate::data::DataMode::Binary {
        return Err(Error::Precondition("autoencoder pretraining needs binary records".into()));
    }
    let m = ae.encoder.input_shape()[0];
    if data.cols() != m {
        return Err(Error::shape("pretrain_autoencoder", format!("records have {} columns, model expects {m}", data.cols())));
    }
    let b = effective_batch(cfg, data.rows())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut g = Graph::new();
    let eb = ae.encoder.bind(&mut g, true);
    let db = ae.decoder.bind(&mut g, true);
    let x_in = g.input(&[b, m]);
    let target = g.input(&[b, m]);
    let et = ae.encoder.build(&mut g, &eb, x_in, Mode::Train)?;
    let dt = ae.decoder.build(&mut g, &db, et.output, Mode::Train)?;
    let logits = dt.logits.ok_or_else(|| Error::Config("decoder must end in a sigmoid".into()))?;
    let loss = g.bce_with_logits(logits, target)?;
    let mut opt_e = Adam::new(cfg.adam(cfg.lr_ae));
    let mut opt_d = Adam::new(cfg.adam(cfg.lr_ae));
    let mut log = TrainingLog::default();
    for epoch in 1..=cfg.epochs {
        let mut losses = Vec::new();
        for idx in batches(data.rows(), b, &mut rng) {
            let x = data.batch(&idx)?;
            let xc = if cfg.drop_prob > 0.0 { corrupt(&x, cfg.drop_prob, &mut rng)? } else { x.clone() };
            ae.encoder.load(&mut g, &eb)?;
            ae.decoder.load(&mut g, &db)?;
            let l = g.forward(&[xc, x]).map_err(|e| diverged(epoch, e))?.data()[0];
            g.backward(loss).map_err(|e| diverged(epoch, e))?;
            opt_e.step(&mut ae.encoder, &g, &eb).map_err(|e| diverged(epoch, e))?;
            opt_d.step(&mut ae.decoder, &g, &db).map_err(|e| diverged(epoch, e))?;
            losses.push(l);
        }
        ae.encoder.update_running_stats(&g, &et);
        ae.decoder.update_running_stats(&g, &dt);
        log.records.push(EpochRecord {
            epoch,
            loss_ae: Some(mean(&losses)),
            loss_d: None,
            loss_g: None,
            acc_real: None,
            acc_fake: None,
        });
    }
    Ok(log)
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::Numeric { op } => Error::Diverged { epoch, reason: format!("non-finite value in {op}") },
        other => other,
    }
}

/// Sets the generator's output range to the per-dimension extent of the
/// codes `Enc(x)` over `data`.
pub fn calibrate_code_range(generator: &mut Generator, ae: &Autoencoder, data: &RecordMatrix) -> Result<()> {
    let codes = crate::models::encode(ae, data)?;
    let h = codes.shape()[1];
    let mut lo = vec![f64::INFINITY; h];
    let mut hi = vec![f64::NEG_INFINITY; h];
    for i in 0..codes.shape()[0] {
        for (j, &v) in codes.row(i).iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    generator.net.set_range(&lo, &hi)
}

/// Discriminator-step graph: frozen generator (and decoder) produce fakes,
/// the discriminator scores a real and a fake batch.
struct DStep {
    g: Graph,
    gen_b: Binding,
    disc_b: Binding,
    loss: NodeId,
    real_p: NodeId,
    fake_p: NodeId,
}

/// Generator-step graph: trainable generator through the frozen decoder
/// and discriminator.
struct GStep {
    g: Graph,
    gen_b: Binding,
    disc_b: Binding,
    gen_t: Trace,
    loss: NodeId,
}

fn fake_records(g: &mut Graph, gen: &Generator, gen_b: &Binding, decoder: Option<&Network>, z: NodeId) -> Result<(NodeId, Trace)> {
    let gt = gen.net.build(g, gen_b, z, Mode::Train)?;
    let out = match decoder {
        Some(dec) => {
            let db = dec.bind(g, false);
            let dt = dec.build(g, &db, gt.output, Mode::Eval)?;
            g.round_ste(dt.output)?
        }
        None => gt.output,
    };
    Ok((out, gt))
}

fn logits_of(trace: &Trace) -> Result<NodeId> {
    trace.logits.ok_or_else(|| Error::Config("discriminator must end in a sigmoid".into()))
}

impl DStep {
    fn new(gen: &Generator, disc: &Discriminator, decoder: Option<&Network>, b: usize) -> Result<Self> {
        let mut g = Graph::new();
        let m = disc.net.input_shape()[0];
        let gen_b = gen.net.bind(&mut g, false);
        let disc_b = disc.net.bind(&mut g, true);
        let real = g.input(&[b, m]);
        let z = g.input(&[b, gen.noise_width()]);
        let (fake, _) = fake_records(&mut g, gen, &gen_b, decoder, z)?;
        let rt = disc.net.build(&mut g, &disc_b, real, Mode::Train)?;
        let ft = disc.net.build(&mut g, &disc_b, fake, Mode::Train)?;
        let ones = g.constant(Tensor::ones(&[b, 1]));
        let zeros = g.constant(Tensor::zeros(&[b, 1]));
        let lr = g.bce_with_logits(logits_of(&rt)?, ones)?;
        let lf = g.bce_with_logits(logits_of(&ft)?, zeros)?;
        let loss = g.add(lr, lf)?;
        Ok(DStep { g, gen_b, disc_b, loss, real_p: rt.output, fake_p: ft.output })
    }
}

impl GStep {
    fn new(gen: &Generator, disc: &Discriminator, decoder: Option<&Network>, b: usize) -> Result<Self> {
        let mut g = Graph::new();
        let gen_b = gen.net.bind(&mut g, true);
        let disc_b = disc.net.bind(&mut g, false);
        let z = g.input(&[b, gen.noise_width()]);
        let (fake, gen_t) = fake_records(&mut g, gen, &gen_b, decoder, z)?;
        let ft = disc.net.build(&mut g, &disc_b, fake, Mode::Train)?;
        let ones = g.constant(Tensor::ones(&[b, 1]));
        let loss = g.bce_with_logits(logits_of(&ft)?, ones)?;
        Ok(GStep { g, gen_b, disc_b, gen_t, loss })
    }
}

/// Mean absolute gap between the column means of `reference` and of fresh
/// samples from the generator (eval mode).
pub fn marginal_gap<R: Rng + ?Sized>(
    gen: &Generator,
    decoder: Option<&Network>,
    reference_means: &[f64],
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    let z = sample_noise(samples, gen.noise_width(), rng)?;
    let mode = if decoder.is_some() { GenMode::Discrete } else { GenMode::Continuous };
    let out = crate::models::generate(gen, decoder, &z, mode)?;
    let means = out.column_means();
    Ok(means.iter().zip(reference_means).map(|(a, b)| (a - b).abs()).sum::<f64>() / means.len() as f64)
}

/// Adversarial training with alternating discriminator and generator
/// updates. The generator minimizes the non-saturating loss `-log D(x_hat)`.
/// In discrete mode `x_hat = round(Dec(G(z)))` with a straight-through
/// gradient across the rounding and a frozen decoder.
///
/// Early stopping keeps the generator with the smallest marginal gap seen.
/// On divergence the models are restored to the last snapshot and
/// [`Error::Diverged`] is returned.
pub fn train_gan(
    gen: &mut Generator,
    disc: &mut Discriminator,
    decoder: Option<&Network>,
    data: &RecordMatrix,
    cfg: &TrainingConfig,
) -> Result<TrainingLog> {
    cfg.validate()?;
    let m = disc.net.input_shape()[0];
    if data.cols() != m {
        return Err(Error::shape("train_gan", format!("records have {} columns, discriminator expects {m}", data.cols())));
    }
    match decoder {
        Some(dec) => {
            if data.mode() != crate::data::DataMode::Binary {
                return Err(Error::Precondition("discrete training needs binary records".into()));
            }
            if dec.input_shape() != gen.net.output_shape().as_slice() || dec.output_shape() != [m] {
                return Err(Error::Config("decoder does not fit between generator and discriminator".into()));
            }
        }
        None => {
            if gen.net.output_shape() != [m] {
                return Err(Error::Config("continuous generator must emit records directly".into()));
            }
        }
    }
    let b = effective_batch(cfg, data.rows())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dstep = DStep::new(gen, disc, decoder, b)?;
    let mut gstep = GStep::new(gen, disc, decoder, b)?;
    let mut opt_d = Adam::new(cfg.adam(cfg.lr_d));
    let mut opt_g = Adam::new(cfg.adam(cfg.lr_g));
    let reference = data.column_means();
    let mut snapshot = (gen.clone(), disc.clone());
    let mut best: Option<(f64, Generator, Discriminator)> = None;
    let mut since_best = 0;
    let mut log = TrainingLog::default();
    for epoch in 1..=cfg.epochs {
        let step = run_epoch(gen, disc, data, b, cfg, &mut dstep, &mut gstep, &mut opt_d, &mut opt_g, &mut rng);
        let record = match step {
            Ok(r) => r,
            Err(e) => {
                *gen = snapshot.0;
                *disc = snapshot.1;
                return Err(diverged(epoch, e));
            }
        };
        log.records.push(EpochRecord { epoch, ..record });
        if epoch % cfg.checkpoint_every == 0 {
            snapshot = (gen.clone(), disc.clone());
        }
        if cfg.patience > 0 {
            let gap = marginal_gap(gen, decoder, &reference, cfg.monitor_samples, &mut rng)?;
            if best.as_ref().is_none_or(|(b, _, _)| gap < *b) {
                best = Some((gap, gen.clone(), disc.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
        }
    }
    if let Some((_, g, d)) = best {
        *gen = g;
        *disc = d;
    }
    Ok(log)
}

#[allow(clippy::too_many_arguments)]
fn run_epoch(
    gen: &mut Generator,
    disc: &mut Discriminator,
    data: &RecordMatrix,
    b: usize,
    cfg: &TrainingConfig,
    dstep: &mut DStep,
    gstep: &mut GStep,
    opt_d: &mut Adam,
    opt_g: &mut Adam,
    rng: &mut ChaCha8Rng,
) -> Result<EpochRecord> {
    let zw = gen.noise_width();
    let (mut ld, mut lg, mut ar, mut af) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (k, idx) in batches(data.rows(), b, rng).into_iter().enumerate() {
        let real = data.batch(&idx)?;
        let z = sample_noise(b, zw, rng)?;
        gen.net.load(&mut dstep.g, &dstep.gen_b)?;
        disc.net.load(&mut dstep.g, &dstep.disc_b)?;
        let l = dstep.g.forward(&[real, z])?.data()[0];
        let frac = |p: &Tensor, real: bool| p.data().iter().filter(|&&v| (v > 0.5) == real).count() as f64 / b as f64;
        ar.push(frac(dstep.g.value(dstep.real_p)?, true));
        af.push(frac(dstep.g.value(dstep.fake_p)?, false));
        dstep.g.backward(dstep.loss)?;
        opt_d.step(&mut disc.net, &dstep.g, &dstep.disc_b)?;
        ld.push(l);
        if (k + 1) % cfg.d_steps == 0 {
            let z = sample_noise(b, zw, rng)?;
            gen.net.load(&mut gstep.g, &gstep.gen_b)?;
            disc.net.load(&mut gstep.g, &gstep.disc_b)?;
            let l = gstep.g.forward(&[z])?.data()[0];
            gstep.g.backward(gstep.loss)?;
            opt_g.step(&mut gen.net, &gstep.g, &gstep.gen_b)?;
            gen.net.update_running_stats(&gstep.g, &gstep.gen_t);
            lg.push(l);
        }
    }
    let opt = |v: &[f64]| (!v.is_empty()).then(|| mean(v));
    Ok(EpochRecord { epoch: 0, loss_ae: None, loss_d: opt(&ld), loss_g: opt(&lg), acc_real: opt(&ar), acc_fake: opt(&af) })
}

/// Discriminator accuracy (real judged real, fake judged fake) on two
/// equally sized record sets, in eval mode.
pub fn discriminator_accuracy(disc: &Discriminator, real: &Tensor, fake: &Tensor) -> Result<(f64, f64)> {
    let pr = eval_chunks(&disc.net, real)?;
    let pf = eval_chunks(&disc.net, fake)?;
    let acc = |p: &Tensor, real: bool| p.data().iter().filter(|&&v| (v > 0.5) == real).count() as f64 / p.len() as f64;
    Ok((acc(&pr, true), acc(&pf, false)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DataMode;

    #[test]
    fn adam_first_step_closed_form() {
        let mut p = [0.0];
        let mut st = AdamState::default();
        adam_step(&mut p, &[1.0], &mut st, &AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }).unwrap();
        assert!((p[0] + 1e-3).abs() < 1e-10, "{}", p[0]);
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut p = [1.5, -2.0, 0.25];
        let before = p;
        let mut st = AdamState::default();
        for _ in 0..5 {
            adam_step(&mut p, &[0.0; 3], &mut st, &AdamConfig::new(0.1)).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut p = [0.0];
        let mut st = AdamState::default();
        let cfg = AdamConfig { lr: 0.05, beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        for _ in 0..1000 {
            let g = 2.0 * (p[0] - 3.0);
            adam_step(&mut p, &[g], &mut st, &cfg).unwrap();
        }
        assert!((p[0] - 3.0).abs() < 1e-2, "{}", p[0]);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut st = AdamState::default();
        let err = adam_step(&mut [0.0], &[f64::NAN], &mut st, &AdamConfig::new(0.1)).unwrap_err();
        assert!(matches!(err, Error::Numeric { .. }));
    }

    #[test]
    fn bce_loss_values() {
        let y = Tensor::new(&[1], vec![0.5]).unwrap();
        let x = Tensor::new(&[1], vec![1.0]).unwrap();
        assert!((bce_loss(&y, &x).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let m = 10;
        let t = Tensor::new(&[m], (0..m).map(|i| (i % 2) as f64).collect()).unwrap();
        let y = Tensor::new(&[m], (0..m).map(|i| if i % 2 == 1 { 1.0 - 1e-7 } else { 1e-7 }).collect()).unwrap();
        assert!(bce_loss(&y, &t).unwrap() <= 1.1e-7 * m as f64);
    }

    #[test]
    fn bce_loss_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y: Vec<f64> = (0..200).map(|_| rng.random_range(0.01..0.99)).collect();
        let x: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut s = 0.0;
        for i in 0..200 {
            s -= x[i] * y[i].ln() + (1.0 - x[i]) * (1.0 - y[i]).ln();
        }
        let got = bce_loss(&Tensor::new(&[200], y).unwrap(), &Tensor::new(&[200], x).unwrap()).unwrap();
        assert!((got - s / 200.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(TrainingConfig::default().validate().is_ok());
        let bad = [
            TrainingConfig { epochs: 0, ..Default::default() },
            TrainingConfig { lr_g: 0.0, ..Default::default() },
            TrainingConfig { beta1: 1.0, ..Default::default() },
            TrainingConfig { drop_prob: 1.0, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn log_csv_leaves_inapplicable_fields_empty() {
        let log = TrainingLog {
            records: vec![EpochRecord { epoch: 1, loss_ae: Some(0.5), loss_d: None, loss_g: None, acc_real: None, acc_fake: None }],
        };
        assert_eq!(log.to_csv(), "epoch,loss_ae,loss_d,loss_g,acc_real,acc_fake\n1,0.5,,,,\n");
    }

    #[test]
    fn pretraining_rejects_continuous_data() {
        let d = crate::models::ArchitectureDescriptor::with_widths(GenMode::Discrete, crate::models::Family::Corgan, 6, 4, 4)
            .unwrap();
        let mut ae = Autoencoder::init(&d, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let data = RecordMatrix::new(4, 6, DataMode::Continuous, vec![0.5; 24]).unwrap();
        let err = pretrain_autoencoder(&mut ae, &data, &TrainingConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }
}
