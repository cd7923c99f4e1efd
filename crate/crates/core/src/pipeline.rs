//! End-to-end helpers tying models, training and checkpoints together.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{GanMember, ModelBundle};
use crate::data::{DataMode, RecordMatrix};
use crate::error::{Error, Result};
use crate::models::{generate, ArchitectureDescriptor, Autoencoder, Discriminator, GenMode, Generator, MinMaxScaler};
use crate::tensor::sample_noise;
use crate::train::{calibrate_code_range, pretrain_autoencoder, train_gan, TrainingConfig, TrainingLog};

/// Per-component seed: a splitmix64 finalization of the root seed mixed with
/// the FNV-1a hash of the component name.
pub fn derive_seed(root: u64, component: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in component.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = root ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Builds and pretrains the autoencoder for a discrete descriptor.
pub fn pretrain(descriptor: &ArchitectureDescriptor, data: &RecordMatrix, cfg: &TrainingConfig) -> Result<(ModelBundle, TrainingLog)> {
    descriptor.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "init.autoencoder"));
    let mut ae = Autoencoder::init(descriptor, &mut rng)?;
    let cfg = TrainingConfig { seed: derive_seed(cfg.seed, "pretrain"), ..cfg.clone() };
    let log = pretrain_autoencoder(&mut ae, data, &cfg)?;
    let mut bundle = ModelBundle::new(descriptor.clone());
    bundle.autoencoder = Some(ae);
    Ok((bundle, log))
}

/// Row groups to fit one generator each: one per label when labels exist,
/// otherwise a single unlabelled group.
fn groups(data: &RecordMatrix) -> Vec<(Option<u8>, RecordMatrix)> {
    match data.labels() {
        None => vec![(None, data.clone())],
        Some(labels) => {
            let mut classes: Vec<u8> = labels.to_vec();
            classes.sort_unstable();
            classes.dedup();
            classes
                .into_iter()
                .map(|c| {
                    let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
                    (Some(c), data.select_rows(&idx))
                })
                .collect()
        }
    }
}

/// Trains the adversarial members of `bundle` on `data`, replacing any
/// existing members. Discrete bundles need a pretrained autoencoder and
/// continuous ones must not have one. On divergence the member being
/// trained is kept at its last snapshot and the error is returned.
pub fn train_members(bundle: &mut ModelBundle, data: &RecordMatrix, cfg: &TrainingConfig) -> Result<Vec<TrainingLog>> {
    let d = bundle.descriptor.clone();
    let data = match d.mode {
        GenMode::Discrete => {
            if bundle.autoencoder.is_none() {
                return Err(Error::Config("discrete training needs a pretrained autoencoder".into()));
            }
            data.clone()
        }
        GenMode::Continuous => {
            if bundle.autoencoder.is_some() {
                return Err(Error::Config("continuous mode does not use an autoencoder".into()));
            }
            let scaler = MinMaxScaler::fit(data);
            let scaled = scaler.transform(data)?;
            bundle.scaler = Some(scaler);
            scaled
        }
    };
    bundle.members.clear();
    let mut logs = Vec::new();
    let n = data.rows() as f64;
    for (k, (label, rows)) in groups(&data).into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("init.member{k}")));
        let mut generator = Generator::init(&d, &mut rng)?;
        let mut discriminator = Discriminator::init(&d, &mut rng)?;
        if let Some(ae) = &bundle.autoencoder {
            calibrate_code_range(&mut generator, ae, &rows)?;
        }
        let member_cfg = TrainingConfig { seed: derive_seed(cfg.seed, &format!("gan.member{k}")), ..cfg.clone() };
        let result = train_gan(&mut generator, &mut discriminator, bundle.decoder(), &rows, &member_cfg);
        bundle.members.push(GanMember { label, weight: rows.rows() as f64 / n, generator, discriminator });
        logs.push(result?);
    }
    Ok(logs)
}

/// Splits `n` across weights by largest remainder (ties to the earlier member).
fn allocate(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let short = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(short) {
        counts[i] += 1;
    }
    counts
}

/// Draws `n` synthetic records. Labelled members contribute in proportion to
/// their weights and their rows carry the member's label; rows from several
/// members are shuffled together.
pub fn sample(bundle: &ModelBundle, n: usize, seed: u64) -> Result<RecordMatrix> {
    if bundle.members.is_empty() {
        return Err(Error::Config("checkpoint holds no trained generator".into()));
    }
    if n == 0 {
        return Err(Error::Precondition("sample count must be positive".into()));
    }
    let mode = bundle.descriptor.mode;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = bundle.members.iter().map(|m| m.weight).collect();
    let counts = allocate(n, &weights);
    let mut values = Vec::with_capacity(n * bundle.descriptor.record_width);
    let mut labels = Vec::with_capacity(n);
    for (member, &count) in bundle.members.iter().zip(&counts) {
        if count == 0 {
            continue;
        }
        let z = sample_noise(count, member.generator.noise_width(), &mut rng)?;
        let mut out = generate(&member.generator, bundle.decoder(), &z, mode)?;
        if let Some(s) = &bundle.scaler {
            out = s.inverse(&out)?;
        }
        values.extend_from_slice(out.values());
        labels.extend(std::iter::repeat_n(member.label, count));
    }
    let m = bundle.descriptor.record_width;
    let mut order: Vec<usize> = (0..n).collect();
    if bundle.members.len() > 1 {
        order.shuffle(&mut rng);
    }
    let values: Vec<f64> = order.iter().flat_map(|&i| values[i * m..(i + 1) * m].iter().copied()).collect();
    let data_mode = match mode {
        GenMode::Discrete => DataMode::Binary,
        GenMode::Continuous => DataMode::Continuous,
    };
    let mut out = RecordMatrix::new(n, m, data_mode, values)?;
    if labels.iter().all(Option::is_some) {
        out = out.with_labels(order.iter().map(|&i| labels[i].expect("checked")).collect())?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Family;

    #[test]
    fn derived_seeds_differ_by_component_and_root() {
        let a = derive_seed(7, "pretrain");
        assert_eq!(a, derive_seed(7, "pretrain"));
        assert_ne!(a, derive_seed(7, "gan.member0"));
        assert_ne!(a, derive_seed(8, "pretrain"));
    }

    #[test]
    fn allocation_sums_and_follows_weights() {
        assert_eq!(allocate(10, &[0.2, 0.8]), vec![2, 8]);
        assert_eq!(allocate(3, &[0.5, 0.5]), vec![2, 1]);
        assert_eq!(allocate(7, &[1.0]), vec![7]);
    }

    fn quick() -> TrainingConfig {
        TrainingConfig { epochs: 2, batch_size: 16, patience: 0, monitor_samples: 10, ..Default::default() }
    }

    #[test]
    fn discrete_requires_autoencoder() {
        let d = ArchitectureDescriptor::with_widths(GenMode::Discrete, Family::Corgan, 8, 4, 4).unwrap();
        let data = crate::data::synth_corpus(40, 8, 2, &[0.3; 8], 1).unwrap();
        let mut b = ModelBundle::new(d);
        assert!(matches!(train_members(&mut b, &data, &quick()), Err(Error::Config(_))));
    }

    #[test]
    fn continuous_labelled_pipeline() {
        let d = ArchitectureDescriptor::with_widths(GenMode::Continuous, Family::Corgan, 6, 4, 4).unwrap();
        let data = crate::data::synth_signals(60, 6, 0.25, 1).unwrap();
        let mut b = ModelBundle::new(d);
        let logs = train_members(&mut b, &data, &quick()).unwrap();
        assert_eq!(logs.len(), 2);
        assert_eq!(b.members.iter().map(|m| m.label).collect::<Vec<_>>(), vec![Some(0), Some(1)]);
        let s = sample(&b, 40, 3).unwrap();
        assert_eq!(s.rows(), 40);
        let weights: Vec<f64> = b.members.iter().map(|m| m.weight).collect();
        assert_eq!(s.labels().unwrap().iter().filter(|&&l| l == 1).count(), allocate(40, &weights)[1]);
        assert_eq!(s, sample(&b, 40, 3).unwrap());
    }
}
