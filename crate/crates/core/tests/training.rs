use corgan::data::{synth_corpus, DataMode, RecordMatrix};
use corgan::models::{build, generate, ArchitectureDescriptor, Discriminator, Family, GenMode};
use corgan::nn::Mode;
use corgan::tensor::sample_noise;
use corgan::train::{calibrate_code_range, discriminator_accuracy, pretrain_autoencoder, train_gan, Adam, AdamConfig, TrainingConfig};
use corgan::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bernoulli(n: usize, p: &[f64], seed: u64) -> RecordMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..n * p.len()).map(|i| f64::from(u8::from(rng.random::<f64>() < p[i % p.len()]))).collect();
    RecordMatrix::new(n, p.len(), DataMode::Binary, v).unwrap()
}

#[test]
fn pretraining_improves_and_repeats_exactly() {
    let data = synth_corpus(1000, 20, 2, &[0.3; 20], 5).unwrap();
    let d = ArchitectureDescriptor::with_widths(GenMode::Discrete, Family::Corgan, 20, 32, 16).unwrap();
    let cfg = TrainingConfig { epochs: 50, batch_size: 100, seed: 5, ..Default::default() };
    let run = || {
        let mut models = build(&d, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut ae = models.autoencoder.take().unwrap();
        pretrain_autoencoder(&mut ae, &data, &cfg).unwrap()
    };
    let log = run();
    assert_eq!(log.len(), 50);
    let losses: Vec<f64> = log.records.iter().map(|r| r.loss_ae.unwrap()).collect();
    assert!(losses.iter().all(|l| l.is_finite()));
    let first: f64 = losses[..5].iter().sum();
    let last: f64 = losses[45..].iter().sum();
    assert!(last < first, "first five {first} last five {last}");
    assert_eq!(log, run());
}

#[test]
fn toy_bernoulli_marginals_are_learned() {
    let p = [0.9, 0.1, 0.5, 0.7];
    let data = bernoulli(2000, &p, 3);
    let d = ArchitectureDescriptor::with_widths(GenMode::Discrete, Family::Corgan, 4, 8, 8).unwrap();
    let mut models = build(&d, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let mut ae = models.autoencoder.take().unwrap();
    let ae_cfg = TrainingConfig { epochs: 30, batch_size: 100, lr_ae: 3e-3, seed: 3, ..Default::default() };
    pretrain_autoencoder(&mut ae, &data, &ae_cfg).unwrap();
    calibrate_code_range(&mut models.generator, &ae, &data).unwrap();
    let decoder_before: Vec<Tensor> = ae.decoder.params().cloned().collect();
    let cfg = TrainingConfig { epochs: 80, batch_size: 100, lr_g: 5e-4, lr_d: 5e-4, patience: 20, monitor_samples: 2000, seed: 3, ..Default::default() };
    let (mut gen, mut disc) = (models.generator.clone(), models.discriminator.clone());
    let log = train_gan(&mut gen, &mut disc, Some(&ae.decoder), &data, &cfg).unwrap();
    assert!(log.records.iter().all(|r| r.loss_d.unwrap().is_finite() && r.loss_g.unwrap().is_finite()));
    let decoder_after: Vec<Tensor> = ae.decoder.params().cloned().collect();
    assert_eq!(decoder_before, decoder_after);

    let z = sample_noise(10_000, 8, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let out = generate(&gen, Some(&ae.decoder), &z, GenMode::Discrete).unwrap();
    assert!(out.values().iter().all(|&v| v == 0.0 || v == 1.0));
    for (got, want) in out.column_means().iter().zip(p) {
        assert!((got - want).abs() < 0.1, "marginals {:?} vs {p:?}", out.column_means());
    }

    let short = TrainingConfig { epochs: 3, ..cfg };
    let rerun = || {
        let (mut g, mut d) = (models.generator.clone(), models.discriminator.clone());
        (train_gan(&mut g, &mut d, Some(&ae.decoder), &data, &short).unwrap(), g.net.params().cloned().collect::<Vec<_>>())
    };
    assert_eq!(rerun(), rerun());
}

/// A discriminator trained to separate two halves of the same real data
/// cannot beat chance on fresh real data.
#[test]
fn discriminator_against_copied_real_data_is_at_chance() {
    let p = [0.8, 0.2, 0.5, 0.6, 0.3, 0.7];
    let data = bernoulli(6000, &p, 11);
    let d = ArchitectureDescriptor::with_widths(GenMode::Discrete, Family::Corgan, 6, 8, 8).unwrap();
    let mut disc = Discriminator::init(&d, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let b = 100;
    let mut g = Graph::new();
    let binding = disc.net.bind(&mut g, true);
    let real = g.input(&[b, 6]);
    let fake = g.input(&[b, 6]);
    let rt = disc.net.build(&mut g, &binding, real, Mode::Train).unwrap();
    let ft = disc.net.build(&mut g, &binding, fake, Mode::Train).unwrap();
    let ones = g.constant(Tensor::ones(&[b, 1]));
    let zeros = g.constant(Tensor::zeros(&[b, 1]));
    let lr = g.bce_with_logits(rt.logits.unwrap(), ones).unwrap();
    let lf = g.bce_with_logits(ft.logits.unwrap(), zeros).unwrap();
    let loss = g.add(lr, lf).unwrap();
    let mut opt = Adam::new(AdamConfig::new(1e-3));
    let train_rows = 4000;
    for step in 0..300 {
        let start = (step * 2 * b) % train_rows;
        let a: Vec<usize> = (start..start + b).collect();
        let c: Vec<usize> = (start + b..start + 2 * b).collect();
        disc.net.load(&mut g, &binding).unwrap();
        g.forward(&[data.batch(&a).unwrap(), data.batch(&c).unwrap()]).unwrap();
        g.backward(loss).unwrap();
        opt.step(&mut disc.net, &g, &binding).unwrap();
    }
    let held: Vec<usize> = (train_rows..6000).collect();
    let half = held.len() / 2;
    let x = data.batch(&held[..half]).unwrap();
    let y = data.batch(&held[half..]).unwrap();
    let (acc_real, acc_fake) = discriminator_accuracy(&disc, &x, &y).unwrap();
    let acc = (acc_real + acc_fake) / 2.0;
    assert!((acc - 0.5).abs() < 0.05, "accuracy {acc}");
}
