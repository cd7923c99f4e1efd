//! Fidelity protocols: dimension-wise probability, dimension-wise prediction
//! and train-on-synthetic / test-on-real classification.

pub mod classifiers;
pub mod metrics;

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{DataMode, RecordMatrix};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use classifiers::{fit_logistic, fit_tree, train_classifier, ClassifierKind, ClassifierModel, LogisticParams, TreeParams};
pub use metrics::{auprc, auroc, confusion, f1_score};

fn same_width(op: &'static str, a: &RecordMatrix, b: &RecordMatrix) -> Result<()> {
    if a.cols() != b.cols() {
        return Err(Error::shape(op, format!("{} columns vs {} columns", a.cols(), b.cols())));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimProbReport {
    pub p_real: Vec<f64>,
    pub p_syn: Vec<f64>,
    pub mean_abs_dev: f64,
    pub max_dev: f64,
}

/// Per-column Bernoulli success probabilities of two binary sets.
pub fn dimension_wise_probability(real: &RecordMatrix, syn: &RecordMatrix) -> Result<DimProbReport> {
    same_width("dimension_wise_probability", real, syn)?;
    if real.mode() != DataMode::Binary || syn.mode() != DataMode::Binary {
        return Err(Error::Precondition("dimension-wise probability needs binary records".into()));
    }
    let (p_real, p_syn) = (real.column_means(), syn.column_means());
    let devs: Vec<f64> = p_real.iter().zip(&p_syn).map(|(a, b)| (a - b).abs()).collect();
    Ok(DimProbReport {
        mean_abs_dev: devs.iter().sum::<f64>() / devs.len() as f64,
        max_dev: devs.iter().copied().fold(0.0, f64::max),
        p_real,
        p_syn,
    })
}

impl DimProbReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("dim,p_real,p_syn,abs_dev\n");
        for (j, (a, b)) in self.p_real.iter().zip(&self.p_syn).enumerate() {
            let _ = writeln!(s, "{j},{a},{b},{}", (a - b).abs());
        }
        s
    }

    /// Two whitespace-separated columns `p_real p_syn`, one line per dimension.
    pub fn to_scatter(&self) -> String {
        self.p_real.iter().zip(&self.p_syn).map(|(a, b)| format!("{a} {b}\n")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimPredRun {
    pub run: usize,
    pub dim: usize,
    pub kind: ClassifierKind,
    pub f1_real: f64,
    pub f1_syn: f64,
    /// `f1_real - f1_syn`.
    pub diff: f64,
    pub real_degenerate: bool,
    pub syn_degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimPredReport {
    pub runs: Vec<DimPredRun>,
    pub requested_runs: usize,
    pub usable_dims: usize,
    pub mean_diff: f64,
    /// Sample standard deviation (0 for a single entry).
    pub std_diff: f64,
    pub mean_abs_diff: f64,
}

/// `(x without column k, column k as labels)`.
fn drop_column(data: &RecordMatrix, k: usize) -> Result<(Tensor, Vec<u8>)> {
    let (n, m) = (data.rows(), data.cols());
    let mut x = Vec::with_capacity(n * (m - 1));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let row = data.row(i);
        x.extend_from_slice(&row[..k]);
        x.extend_from_slice(&row[k + 1..]);
        y.push(u8::from(row[k] != 0.0));
    }
    Ok((Tensor::new(&[n, m - 1], x)?, y))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

impl DimPredReport {
    fn from_runs(runs: Vec<DimPredRun>, requested_runs: usize, usable_dims: usize) -> Self {
        let diffs: Vec<f64> = runs.iter().map(|r| r.diff).collect();
        let (mean_diff, std_diff) = mean_std(&diffs);
        let mean_abs_diff = if diffs.is_empty() { 0.0 } else { diffs.iter().map(|d| d.abs()).sum::<f64>() / diffs.len() as f64 };
        DimPredReport { runs, requested_runs, usable_dims, mean_diff, std_diff, mean_abs_diff }
    }

    /// True when fewer usable dimensions existed than runs were requested.
    pub fn shortfall(&self) -> bool {
        self.usable_dims < self.requested_runs
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("run,dim,classifier,f1_real,f1_syn,diff,real_degenerate,syn_degenerate\n");
        for r in &self.runs {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.run,
                r.dim,
                r.kind.name(),
                r.f1_real,
                r.f1_syn,
                r.diff,
                r.real_degenerate,
                r.syn_degenerate
            );
        }
        s
    }
}

/// For each run, holds out one column `k` (sampled without replacement among
/// columns not constant in `test`), trains each classifier to predict `k`
/// from the rest on `train` and on `syn`, and scores both on `test`.
pub fn dimension_wise_prediction(
    train: &RecordMatrix,
    test: &RecordMatrix,
    syn: &RecordMatrix,
    runs: usize,
    kinds: &[ClassifierKind],
    seed: u64,
) -> Result<DimPredReport> {
    same_width("dimension_wise_prediction", train, test)?;
    same_width("dimension_wise_prediction", train, syn)?;
    if train.cols() < 2 {
        return Err(Error::Precondition("dimension-wise prediction needs at least 2 columns".into()));
    }
    if kinds.is_empty() || runs == 0 {
        return Err(Error::Config("dimension-wise prediction needs runs > 0 and at least one classifier".into()));
    }
    let mut usable: Vec<usize> = (0..test.cols())
        .filter(|&j| {
            let c = test.column(j);
            c.iter().any(|&v| v != c[0])
        })
        .collect();
    let usable_dims = usable.len();
    usable.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = Vec::new();
    for (run, &k) in usable.iter().take(runs).enumerate() {
        let (xtr, ytr) = drop_column(train, k)?;
        let (xsyn, ysyn) = drop_column(syn, k)?;
        let (xte, yte) = drop_column(test, k)?;
        for &kind in kinds {
            let real = train_classifier(kind, &xtr, &ytr)?;
            let synm = train_classifier(kind, &xsyn, &ysyn)?;
            let f1_real = f1_score(&yte, &real.predict(&xte)?)?;
            let f1_syn = f1_score(&yte, &synm.predict(&xte)?)?;
            out.push(DimPredRun {
                run,
                dim: k,
                kind,
                f1_real,
                f1_syn,
                diff: f1_real - f1_syn,
                real_degenerate: real.degenerate,
                syn_degenerate: synm.degenerate,
            });
        }
    }
    Ok(DimPredReport::from_runs(out, runs, usable_dims))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setting {
    /// Train on real data, test on real data.
    RealToReal,
    /// Train on synthetic data, test on real data.
    SynToReal,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Setting::RealToReal => "A",
            Setting::SynToReal => "B",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinClassRow {
    pub setting: Setting,
    pub kind: ClassifierKind,
    pub auroc: f64,
    pub auprc: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinClassReport {
    pub rows: Vec<BinClassRow>,
    pub auroc_a: f64,
    pub auprc_a: f64,
    pub auroc_b: f64,
    pub auprc_b: f64,
}

impl BinClassReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("setting,classifier,auroc,auprc,degenerate\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{}", r.setting.name(), r.kind.name(), r.auroc, r.auprc, r.degenerate);
        }
        let _ = writeln!(s, "A,average,{},{},", self.auroc_a, self.auprc_a);
        let _ = writeln!(s, "B,average,{},{},", self.auroc_b, self.auprc_b);
        s
    }
}

fn labelled(data: &RecordMatrix, what: &str) -> Result<(Tensor, Vec<u8>)> {
    let labels = data.labels().ok_or_else(|| Error::Config(format!("{what} set has no labels")))?;
    Ok((data.to_tensor()?, labels.to_vec()))
}

/// Settings A (real to real) and B (synthetic to real) for each classifier.
pub fn binary_classification_eval(
    real_train: &RecordMatrix,
    real_test: &RecordMatrix,
    syn: &RecordMatrix,
    kinds: &[ClassifierKind],
) -> Result<BinClassReport> {
    same_width("binary_classification_eval", real_train, real_test)?;
    same_width("binary_classification_eval", real_train, syn)?;
    if kinds.is_empty() {
        return Err(Error::Config("binary classification needs at least one classifier".into()));
    }
    let (xtr, ytr) = labelled(real_train, "real training")?;
    let (xte, yte) = labelled(real_test, "real test")?;
    let (xs, ys) = labelled(syn, "synthetic")?;
    let mut rows = Vec::new();
    for (setting, x, y) in [(Setting::RealToReal, &xtr, &ytr), (Setting::SynToReal, &xs, &ys)] {
        for &kind in kinds {
            let m = train_classifier(kind, x, y)?;
            let s = m.predict_scores(&xte)?;
            rows.push(BinClassRow { setting, kind, auroc: auroc(&yte, &s)?, auprc: auprc(&yte, &s)?, degenerate: m.degenerate });
        }
    }
    let avg = |setting: Setting, f: fn(&BinClassRow) -> f64| {
        let v: Vec<f64> = rows.iter().filter(|r| r.setting == setting).map(f).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    Ok(BinClassReport {
        auroc_a: avg(Setting::RealToReal, |r| r.auroc),
        auprc_a: avg(Setting::RealToReal, |r| r.auprc),
        auroc_b: avg(Setting::SynToReal, |r| r.auroc),
        auprc_b: avg(Setting::SynToReal, |r| r.auprc),
        rows,
    })
}

/// Writes `text` to `dir/name`.
pub fn write_report(dir: impl AsRef<Path>, name: &str, text: &str) -> Result<()> {
    let path = dir.as_ref().join(name);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_corpus;

    #[test]
    fn dimprob_identity_and_column_mean() {
        let s = synth_corpus(100, 6, 2, &[0.3; 6], 2).unwrap();
        let r = dimension_wise_probability(&s, &s).unwrap();
        assert_eq!(r.max_dev, 0.0);
        assert_eq!(r.p_real, r.p_syn);
        let col = RecordMatrix::new(4, 1, DataMode::Binary, vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(dimension_wise_probability(&col, &col).unwrap().p_real, vec![0.75]);
    }

    #[test]
    fn dimprob_width_mismatch() {
        let a = RecordMatrix::new(1, 2, DataMode::Binary, vec![0.0, 1.0]).unwrap();
        let b = RecordMatrix::new(1, 3, DataMode::Binary, vec![0.0, 1.0, 1.0]).unwrap();
        assert!(matches!(dimension_wise_probability(&a, &b), Err(Error::Shape { .. })));
    }

    #[test]
    fn dimpred_skips_constant_test_columns() {
        let marg = [0.3; 8];
        let train = synth_corpus(300, 8, 2, &marg, 1).unwrap();
        let mut vals = synth_corpus(100, 8, 2, &marg, 2).unwrap().values().to_vec();
        for i in 0..100 {
            vals[i * 8 + 3] = 0.0;
        }
        let test = RecordMatrix::new(100, 8, DataMode::Binary, vals).unwrap();
        let r = dimension_wise_prediction(&train, &test, &train, 10, &ClassifierKind::ALL, 4).unwrap();
        assert_eq!(r.usable_dims, 7);
        assert!(r.shortfall());
        assert_eq!(r.runs.len(), 14);
        assert!(r.runs.iter().all(|x| x.dim != 3));
        let (m, _) = mean_std(&r.runs.iter().map(|x| x.diff).collect::<Vec<_>>());
        assert_eq!(m, r.mean_diff);
    }

    #[test]
    fn binclass_requires_labels() {
        let a = synth_corpus(20, 4, 2, &[0.4; 4], 1).unwrap();
        let err = binary_classification_eval(&a, &a, &a, &ClassifierKind::ALL).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn binclass_single_class_synthetic_is_flagged() {
        let real = crate::data::synth_signals(200, 10, 0.3, 1).unwrap();
        let (tr, te) = crate::data::split(&real, crate::data::SplitSpec { train_fraction: 0.7, seed: 1 }).unwrap();
        let syn = tr.clone().with_labels(vec![0; tr.rows()]).unwrap();
        let r = binary_classification_eval(&tr, &te, &syn, &ClassifierKind::ALL).unwrap();
        assert!(r.rows.iter().filter(|x| x.setting == Setting::SynToReal).all(|x| x.degenerate && x.auroc == 0.5));
    }
}
