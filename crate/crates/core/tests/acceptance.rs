//! Acceptance checks, one PASS/FAIL line per criterion. Run with
//! `cargo test -p corgan --test acceptance`.

mod support;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use corgan::checkpoint::ModelBundle;
use corgan::data::{self, DataMode, RecordMatrix, SplitSpec};
use corgan::eval::{self, ClassifierKind};
use corgan::models::{reconstruct, ArchitectureDescriptor, Family, GenMode};
use corgan::pipeline::{self, derive_seed};
use corgan::privacy::{self, AttackReport, AttackSetup, ThresholdSpec};
use corgan::train::TrainingConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::gradcheck;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut worst = (String::new(), 0.0f64);
    let mut failures = Vec::new();
    let cases = gradcheck::cases();
    for (i, (name, build)) in cases.iter().enumerate() {
        let e = gradcheck::worst_error(*build, 100, 5000 + i as u64);
        if e > worst.1 {
            worst = (name.to_string(), e);
        }
        if !(e < gradcheck::TOL) {
            failures.push(format!("{name} ({e:.2e})"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 120.0;
    verdict(
        pass,
        format!(
            "{} ops x 100 trials, worst relative error {:.2e} ({}), {secs:.1}s{}",
            cases.len(),
            worst.1,
            worst.0,
            if failures.is_empty() { String::new() } else { format!(", failing: {}", failures.join(", ")) }
        ),
    )
}

fn corpus(n: usize, m: usize, seed: u64) -> RecordMatrix {
    corpus_with(n, m, (0.05, 0.5), seed)
}

fn corpus_with(n: usize, m: usize, (lo, hi): (f64, f64), seed: u64) -> RecordMatrix {
    let marginals = data::random_marginals(m, lo, hi, derive_seed(seed, "marginals")).unwrap();
    data::synth_corpus(n, m, 2, &marginals, derive_seed(seed, "corpus")).unwrap()
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let data = corpus(10_000, 64, 11);
    let desc = ArchitectureDescriptor::new(GenMode::Discrete, Family::Corgan, 64).unwrap();
    let cfg = TrainingConfig { epochs: 10, batch_size: 100, lr_ae: 1e-3, seed: 11, ..Default::default() };
    let (bundle, log) = pipeline::pretrain(&desc, &data, &cfg).unwrap();
    let ae = bundle.autoencoder.as_ref().unwrap();
    let y = reconstruct(ae, &data, None, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let hits = y.data().iter().zip(data.values()).filter(|(p, x)| f64::from(u8::from(**p >= 0.5)) == **x).count();
    let acc = hits as f64 / y.len() as f64;
    let first = log.records[0].loss_ae.unwrap();
    let last = log.records.last().unwrap().loss_ae.unwrap();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        last < first && acc > 0.95 && log.len() <= 50 && secs < 300.0,
        format!("{} epochs, BCE {first:.4} -> {last:.4}, entry accuracy {acc:.4}, {secs:.1}s", log.len()),
    )
}

/// Column marginals of the end-to-end corpus: sparse, like diagnosis-code
/// indicator vectors.
const SPARSE_MARGINALS: (f64, f64) = (0.01, 0.1);

/// Trained discrete pipeline on one seed of the desk corpus.
struct Trained {
    train: RecordMatrix,
    test: RecordMatrix,
    bundle: ModelBundle,
    mad: f64,
    max: f64,
    epochs: usize,
    secs: f64,
}

fn train_discrete(family: Family, seed: u64) -> Trained {
    let start = Instant::now();
    let full = corpus_with(2500, 64, SPARSE_MARGINALS, 100 + seed);
    let (train, test) = data::split(&full, SplitSpec { train_fraction: 0.8, seed: derive_seed(seed, "split") }).unwrap();
    let desc = ArchitectureDescriptor::new(GenMode::Discrete, family, 64).unwrap();
    let ae_cfg = TrainingConfig { epochs: 15, batch_size: 100, lr_ae: 1e-3, seed, ..Default::default() };
    let (mut bundle, _) = pipeline::pretrain(&desc, &train, &ae_cfg).unwrap();
    let gan_cfg = TrainingConfig {
        epochs: 60,
        batch_size: 100,
        lr_g: 2e-4,
        lr_d: 2e-4,
        patience: 15,
        monitor_samples: 2000,
        seed,
        ..Default::default()
    };
    let logs = pipeline::train_members(&mut bundle, &train, &gan_cfg).unwrap();
    let syn = pipeline::sample(&bundle, 10_000, derive_seed(seed, "eval")).unwrap();
    let dp = eval::dimension_wise_probability(&train, &syn).unwrap();
    Trained { train, test, bundle, mad: dp.mean_abs_dev, max: dp.max_dev, epochs: logs[0].len(), secs: start.elapsed().as_secs_f64() }
}

fn criterion_3(corgan_runs: &[Trained], mlp_runs: &[Trained]) -> Verdict {
    let c0 = &corgan_runs[0];
    let headline = c0.mad < 0.05 && c0.max < 0.15 && c0.epochs <= 500 && c0.secs < 1800.0;
    let wins = corgan_runs.iter().zip(mlp_runs).filter(|(c, m)| m.mad >= c.mad).count();
    let fmt = |runs: &[Trained]| runs.iter().map(|r| format!("{:.4}", r.mad)).collect::<Vec<_>>().join(" ");
    verdict(
        headline && wins >= 3,
        format!(
            "seed 0: mean abs dev {:.4}, max dev {:.4}, {} epochs, {:.0}s; per-seed mean abs dev corgan [{}] mlp [{}]; mlp >= corgan on {wins}/5",
            c0.mad,
            c0.max,
            c0.epochs,
            c0.secs,
            fmt(corgan_runs),
            fmt(mlp_runs)
        ),
    )
}

fn criterion_4() -> Verdict {
    let full = corpus(1300, 120, 21);
    let (train, test) = data::split(&full, SplitSpec { train_fraction: 1000.0 / 1300.0, seed: 21 }).unwrap();
    let r = eval::dimension_wise_prediction(&train, &test, &train, 100, &ClassifierKind::ALL, 21).unwrap();
    let all_zero = r.runs.iter().all(|x| x.diff == 0.0);
    verdict(
        all_zero && r.mean_diff == 0.0 && r.runs.len() == 100 * ClassifierKind::ALL.len(),
        format!("{} runs x {} classifiers, all differences zero: {all_zero}, mean {}", r.runs.len() / 2, ClassifierKind::ALL.len(), r.mean_diff),
    )
}

fn brute_f1(y: &[u8], p: &[u8]) -> f64 {
    let mut c = [[0usize; 2]; 2];
    for (&t, &q) in y.iter().zip(p) {
        c[t as usize][q as usize] += 1;
    }
    let (tp, fp, fne) = (c[1][1], c[0][1], c[1][0]);
    if tp == 0 {
        0.0
    } else {
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / (tp + fne) as f64;
        2.0 * precision * recall / (precision + recall)
    }
}

fn brute_auroc(y: &[u8], s: &[f64]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for i in 0..y.len() {
        for j in 0..y.len() {
            if y[i] == 1 && y[j] == 0 {
                pairs += 1.0;
                num += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
            }
        }
    }
    num / pairs
}

fn brute_auprc(y: &[u8], s: &[f64]) -> f64 {
    let pos = y.iter().filter(|&&v| v == 1).count() as f64;
    let mut thresholds: Vec<f64> = s.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for t in thresholds {
        let flagged: Vec<usize> = (0..y.len()).filter(|&i| s[i] >= t).collect();
        let tp = flagged.iter().filter(|&&i| y[i] == 1).count() as f64;
        let recall = tp / pos;
        area += (recall - prev_recall) * tp / flagged.len() as f64;
        prev_recall = recall;
    }
    area
}

fn criterion_5() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..=15);
        let mut y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        y[0] = 1;
        y[1] = 0;
        let levels = rng.random_range(2..=6);
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
        let p: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        worst = worst
            .max((eval::f1_score(&y, &p).unwrap() - brute_f1(&y, &p)).abs())
            .max((eval::auroc(&y, &s).unwrap() - brute_auroc(&y, &s)).abs())
            .max((eval::auprc(&y, &s).unwrap() - brute_auprc(&y, &s)).abs());
    }
    let n = 10_000;
    let y: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 0)).collect();
    let s: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let (roc, prc) = (eval::auroc(&y, &s).unwrap(), eval::auprc(&y, &s).unwrap());
    let prevalence = 0.5;
    verdict(
        worst <= 1e-12 && (roc - 0.5).abs() <= 0.02 && (prc - prevalence).abs() <= 0.02,
        format!("1000 instances, worst brute-force gap {worst:.1e}; random scores n=1e4: auroc {roc:.4}, auprc {prc:.4} (prevalence {prevalence})"),
    )
}

fn criterion_6() -> Verdict {
    let full = data::synth_signals(1500, 40, 0.2, 66).unwrap();
    let (train, test) = data::split(&full, SplitSpec { train_fraction: 0.8, seed: 66 }).unwrap();
    let r = eval::binary_classification_eval(&train, &test, &train, &ClassifierKind::ALL).unwrap();
    let a: Vec<_> = r.rows.iter().filter(|x| x.setting == eval::Setting::RealToReal).map(|x| (x.kind, x.auroc, x.auprc)).collect();
    let b: Vec<_> = r.rows.iter().filter(|x| x.setting == eval::Setting::SynToReal).map(|x| (x.kind, x.auroc, x.auprc)).collect();
    let same = a == b && r.auroc_a == r.auroc_b && r.auprc_a == r.auprc_b;
    verdict(
        same,
        format!(
            "A auroc {:.4} auprc {:.4}, B auroc {:.4} auprc {:.4}, on the generated signal corpus",
            r.auroc_a, r.auprc_a, r.auroc_b, r.auprc_b
        ),
    )
}

/// Recall is non-increasing in the threshold within a report.
fn recall_monotone(r: &AttackReport) -> bool {
    r.rows.windows(2).all(|w| w[0].threshold <= w[1].threshold && w[1].recall <= w[0].recall)
}

/// Recall is non-decreasing in synthetic-set size at each threshold.
fn recall_grows_with_size(reports: &[&AttackReport]) -> bool {
    reports.windows(2).all(|w| w[0].rows.iter().zip(&w[1].rows).all(|(a, b)| a.threshold == b.threshold && b.recall >= a.recall))
}

/// Sparse records supported on `cols`, at least two ones each.
fn sparse(n: usize, m: usize, cols: std::ops::Range<usize>, rng: &mut ChaCha8Rng) -> RecordMatrix {
    let mut v = vec![0.0; n * m];
    for i in 0..n {
        for j in cols.clone() {
            if rng.random::<f64>() < 0.3 {
                v[i * m + j] = 1.0;
            }
        }
        v[i * m + cols.start] = 1.0;
        v[i * m + cols.start + 1] = 1.0;
    }
    RecordMatrix::new(n, m, DataMode::Binary, v).unwrap()
}

fn criterion_7(corgan_runs: &[Trained]) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let thresholds = privacy::sample_thresholds(ThresholdSpec::default(), 77).unwrap();
    let members = sparse(50, 64, 0..20, &mut rng);
    let non_members = sparse(50, 64, 20..40, &mut rng);
    let setup = AttackSetup { members: members.clone(), non_members: non_members.clone(), thresholds: thresholds.clone() };
    let superset = members.concat(&sparse(200, 64, 0..20, &mut rng)).unwrap();
    let copy = privacy::run_attack(&setup, &superset).unwrap();
    let cross = privacy::max_similarities(&non_members, &members).unwrap().into_iter().fold(0.0, f64::max);
    let copy_ok = cross < 0.4 && copy.rows.iter().all(|r| r.precision == 1.0 && r.recall == 1.0);
    let random = privacy::run_attack(&setup, &sparse(500, 64, 40..64, &mut rng)).unwrap();
    let random_ok = random.rows.iter().all(|r| r.recall == 0.0 && r.zero_flag) && random.best.is_none();
    let mut monotone = recall_monotone(&copy) && recall_monotone(&random);

    let mut lower = 0;
    let mut pairs = Vec::new();
    let mut u_trend = Vec::new();
    for (k, t) in corgan_runs.iter().enumerate() {
        let seed = SEEDS[k];
        let pool = pipeline::sample(&t.bundle, 10_000, derive_seed(seed, "volume.pool")).unwrap();
        let (m, nm) = privacy::draw_known(&t.train, &t.test, 50, derive_seed(seed, "volume.known")).unwrap();
        let th = privacy::sample_thresholds(ThresholdSpec::default(), derive_seed(seed, "volume.thresholds")).unwrap();
        let setup = AttackSetup { members: m, non_members: nm, thresholds: th };
        let (rows, _) = privacy::sweep_synthetic_volume(&setup, &pool, &[100, 1000, 5000, 10_000]).unwrap();
        let reports: Vec<&AttackReport> = rows.iter().map(|r| &r.report).collect();
        monotone &= reports.iter().all(|r| recall_monotone(r)) && recall_grows_with_size(&reports);
        let precision = |r: &AttackReport| r.best_row().map_or(0.0, |b| b.precision);
        let (p1k, p10k) = (precision(reports[1]), precision(reports[3]));
        if p10k < p1k {
            lower += 1;
        }
        pairs.push(format!("{p1k:.3}->{p10k:.3}"));
        let (urows, _) = privacy::sweep_known_records(&t.train, &t.test, &pool, &[100, 200, 500, 1000], &setup.thresholds, derive_seed(seed, "volume.known")).unwrap();
        monotone &= urows.iter().all(|r| recall_monotone(&r.report));
        let up: Vec<f64> = urows.iter().map(|r| precision(&r.report)).collect();
        u_trend.push(up.iter().map(|p| format!("{p:.3}")).collect::<Vec<_>>().join("/"));
    }
    println!("  info: best-attack precision at U=100/200/500/1000 per seed [{}]", u_trend.join(" "));
    verdict(
        copy_ok && random_ok && monotone && lower >= 4,
        format!(
            "exact copy precision=recall=1: {copy_ok} (max cross similarity {cross:.3}); random set recall 0: {random_ok}; monotonicity: {monotone}; precision |S_syn| 1k->10k at U=100 [{}], lower on {lower}/5",
            pairs.join(" ")
        ),
    )
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = std::fs::read(&p).unwrap();
                let rel = p.strip_prefix(dir).unwrap().to_path_buf();
                // Resolved configs record the output paths, which differ between the two roots.
                let bytes = if rel.extension().is_some_and(|x| x == "conf") {
                    String::from_utf8(bytes).unwrap().replace(dir.to_str().unwrap(), "ROOT").into_bytes()
                } else {
                    bytes
                };
                out.push((rel, bytes));
            }
        }
    }
    out.sort();
    out
}

fn cli_session(root: &Path) -> bool {
    let bin = env!("CARGO_BIN_EXE_corgan");
    let p = |s: &str| root.join(s).to_str().unwrap().to_string();
    let steps: Vec<Vec<String>> = [
        vec!["synth-corpus", "--n", "400", "--m", "16", "--test-fraction", "0.25", "--seed", "8"].into_iter().map(String::from).chain(["--out".into(), p("c")]).collect(),
        vec!["pretrain-ae".into(), "--data".into(), p("c/train.bin"), "--epochs".into(), "3".into(), "--batch-size".into(), "50".into(), "--code-width".into(), "16".into(), "--noise-width".into(), "16".into(), "--seed".into(), "8".into(), "--out".into(), p("ae")],
        vec!["train".into(), "--data".into(), p("c/train.bin"), "--autoencoder".into(), p("ae/autoencoder.ckpt"), "--epochs".into(), "3".into(), "--batch-size".into(), "50".into(), "--monitor-samples".into(), "200".into(), "--seed".into(), "8".into(), "--out".into(), p("gan")],
        vec!["generate".into(), "--model".into(), p("gan/model.ckpt"), "--count".into(), "500".into(), "--seed".into(), "8".into(), "--out".into(), p("gen")],
        vec!["eval".into(), "--train-real".into(), p("c/train.bin"), "--test-real".into(), p("c/test.bin"), "--syn".into(), p("gen/synthetic.bin"), "--runs".into(), "8".into(), "--seed".into(), "8".into(), "--out".into(), p("eval")],
        vec!["privacy-audit".into(), "--train".into(), p("c/train.bin"), "--test".into(), p("c/test.bin"), "--model".into(), p("gan/model.ckpt"), "--syn-count".into(), "1000".into(), "--u".into(), "40".into(), "--u-values".into(), "10,20,40".into(), "--sizes".into(), "100,1000".into(), "--seed".into(), "8".into(), "--out".into(), p("audit")],
        vec!["synth-corpus".into(), "--mode".into(), "continuous".into(), "--n".into(), "200".into(), "--m".into(), "12".into(), "--test-fraction".into(), "0.25".into(), "--seed".into(), "8".into(), "--out".into(), p("cc")],
        vec!["train".into(), "--mode".into(), "continuous".into(), "--data".into(), p("cc/train.csv"), "--noise-width".into(), "8".into(), "--epochs".into(), "2".into(), "--batch-size".into(), "25".into(), "--monitor-samples".into(), "50".into(), "--seed".into(), "8".into(), "--out".into(), p("cgan")],
        vec!["generate".into(), "--model".into(), p("cgan/model.ckpt"), "--count".into(), "150".into(), "--seed".into(), "8".into(), "--out".into(), p("cgen")],
        vec!["eval".into(), "--mode".into(), "continuous".into(), "--train-real".into(), p("cc/train.csv"), "--test-real".into(), p("cc/test.csv"), "--syn".into(), p("cgen/synthetic.csv"), "--seed".into(), "8".into(), "--out".into(), p("ceval")],
    ]
    .into_iter()
    .collect();
    steps.iter().all(|args| Command::new(bin).args(args).output().map(|o| o.status.success()).unwrap_or(false))
}

fn criterion_8() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ran = cli_session(&a) && cli_session(&b);
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    let differing: Vec<String> = sa.iter().zip(&sb).filter(|(x, y)| x != y).map(|(x, _)| x.0.display().to_string()).collect();
    verdict(
        ran && sa.len() == sb.len() && differing.is_empty(),
        format!("6 commands (10 invocations, both modes) run twice: {} artifacts, {} differing{}", sa.len(), differing.len(), if ran { "" } else { ", a command failed" }),
    )
}

fn criterion_9(trained: &Trained) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let bytes = trained.bundle.to_bytes().unwrap();
    let path = dir.path().join("m.ckpt");
    trained.bundle.save(&path).unwrap();
    let back = ModelBundle::load(&path).unwrap();
    let ckpt_ok = back.to_bytes().unwrap() == bytes
        && pipeline::sample(&back, 300, 9).unwrap() == pipeline::sample(&trained.bundle, 300, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut bin_ok = true;
    for k in 0..50 {
        let (n, m) = (rng.random_range(1..40), rng.random_range(2..70));
        let v: Vec<f64> = (0..n * m).map(|_| f64::from(rng.random_range(0..2u8))).collect();
        let mx = RecordMatrix::new(n, m, DataMode::Binary, v).unwrap();
        let p = dir.path().join(format!("{k}.bin"));
        data::write_binary_matrix(&p, &mx).unwrap();
        let first = std::fs::read(&p).unwrap();
        let read = data::load_binary_matrix(&p).unwrap();
        data::write_binary_matrix(&p, &read).unwrap();
        bin_ok &= read.values() == mx.values() && (read.rows(), read.cols()) == (n, m) && std::fs::read(&p).unwrap() == first;
    }
    verdict(ckpt_ok && bin_ok, format!("checkpoint ({} bytes) bit-exact: {ckpt_ok}; corgan-bin v1 on 50 random matrices: {bin_ok}", bytes.len()))
}

fn main() {
    let mut results: Vec<(u8, &str, Verdict)> = Vec::new();
    let mut record = |id: u8, name: &'static str, v: Verdict| {
        println!("{} criterion {id} ({name}): {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((id, name, v));
    };
    record(1, "gradient suite", criterion_1());
    record(2, "autoencoder pretraining", criterion_2());
    let corgan_runs: Vec<Trained> = SEEDS.iter().map(|&s| train_discrete(Family::Corgan, s)).collect();
    let mlp_runs: Vec<Trained> = SEEDS.iter().map(|&s| train_discrete(Family::MlpBaseline, s)).collect();
    record(3, "end-to-end fidelity", criterion_3(&corgan_runs, &mlp_runs));
    record(4, "dimension-wise prediction identity", criterion_4());
    record(5, "metric oracles", criterion_5());
    record(6, "binary classification identity", criterion_6());
    record(7, "privacy attack limits", criterion_7(&corgan_runs));
    record(8, "CLI determinism", criterion_8());
    record(9, "format round trips", criterion_9(&corgan_runs[0]));
    let failed: Vec<u8> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {}/{} passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
