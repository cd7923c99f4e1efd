//! Membership inference by maximum cosine similarity against a synthetic set.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::RecordMatrix;
use crate::error::{Error, Result};
use crate::nn::functional::matmul_a_bt_acc;

/// Synthetic rows compared per block when computing maximum similarities.
const SIM_BLOCK: usize = 2048;

/// `a.b / (|a| |b|)`; 0 when either vector is all zero.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine_similarity", format!("lengths {} and {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    Ok(if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na * nb).sqrt() })
}

/// For each known record, the largest cosine similarity to any synthetic record.
pub fn max_similarities(known: &RecordMatrix, syn: &RecordMatrix) -> Result<Vec<f64>> {
    if known.cols() != syn.cols() {
        return Err(Error::shape("max_similarities", format!("{} vs {} columns", known.cols(), syn.cols())));
    }
    if syn.rows() == 0 {
        return Err(Error::Precondition("synthetic set is empty".into()));
    }
    let m = known.cols();
    let sq = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>();
    let kn: Vec<f64> = (0..known.rows()).map(|i| sq(known.row(i))).collect();
    let mut best = vec![f64::NEG_INFINITY; known.rows()];
    let mut start = 0;
    while start < syn.rows() {
        let end = (start + SIM_BLOCK).min(syn.rows());
        let block = &syn.values()[start * m..end * m];
        let sn: Vec<f64> = (start..end).map(|j| sq(syn.row(j))).collect();
        let mut dots = vec![0.0; known.rows() * (end - start)];
        matmul_a_bt_acc(known.values(), block, &mut dots, known.rows(), m, end - start);
        for (i, b) in best.iter_mut().enumerate() {
            for (j, &nb) in sn.iter().enumerate() {
                let na = kn[i];
                let s = if na == 0.0 || nb == 0.0 { 0.0 } else { dots[i * (end - start) + j] / (na * nb).sqrt() };
                *b = b.max(s);
            }
        }
        start = end;
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSpec {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

impl Default for ThresholdSpec {
    fn default() -> Self {
        ThresholdSpec { count: 100, mean: 0.5, std: 0.01 }
    }
}

/// `count` positive draws from `N(mean, std^2)`; non-positive draws are redrawn.
pub fn sample_thresholds(spec: ThresholdSpec, seed: u64) -> Result<Vec<f64>> {
    if spec.count == 0 {
        return Err(Error::Config("threshold count must be positive".into()));
    }
    if !(spec.mean > 0.0) || !(spec.std >= 0.0) {
        return Err(Error::Config(format!("threshold distribution N({}, {}) cannot yield positive draws", spec.mean, spec.std)));
    }
    let normal = Normal::new(spec.mean, spec.std).map_err(|e| Error::Config(format!("threshold distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(spec.count);
    while out.len() < spec.count {
        let t = normal.sample(&mut rng);
        if t > 0.0 {
            out.push(t);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackRow {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// 0 when nothing was flagged (see `zero_flag`).
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub flagged: usize,
    pub zero_flag: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackReport {
    /// Rows sorted by ascending threshold.
    pub rows: Vec<AttackRow>,
    /// Index into `rows` of the highest-F1 row (lowest threshold on ties);
    /// `None` when no threshold flags any record.
    pub best: Option<usize>,
    pub member_sims: Vec<f64>,
    pub non_member_sims: Vec<f64>,
}

/// The attacker's knowledge: `P` known members and `P` known non-members.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSetup {
    pub members: RecordMatrix,
    pub non_members: RecordMatrix,
    pub thresholds: Vec<f64>,
}

/// Scores a row for every threshold from precomputed max-similarities.
pub fn attack_rows(member_sims: &[f64], non_member_sims: &[f64], thresholds: &[f64]) -> Vec<AttackRow> {
    let p = member_sims.len();
    let mut ts = thresholds.to_vec();
    ts.sort_by(f64::total_cmp);
    ts.into_iter()
        .map(|t| {
            let tp = member_sims.iter().filter(|&&s| s >= t).count();
            let fp = non_member_sims.iter().filter(|&&s| s >= t).count();
            let flagged = tp + fp;
            let precision = if flagged == 0 { 0.0 } else { tp as f64 / flagged as f64 };
            let recall = if p == 0 { 0.0 } else { tp as f64 / p as f64 };
            let f1 = if tp == 0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            AttackRow { threshold: t, tp, fp, fn_: p - tp, precision, recall, f1, flagged, zero_flag: flagged == 0 }
        })
        .collect()
}

fn best_row(rows: &[AttackRow]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in rows.iter().enumerate() {
        if r.flagged == 0 {
            continue;
        }
        if best.is_none_or(|b| r.f1 > rows[b].f1) {
            best = Some(i);
        }
    }
    best
}

/// Flags a known record as a member when its max-similarity to `syn` is at
/// least the threshold. Recall is over the known members.
pub fn run_attack(setup: &AttackSetup, syn: &RecordMatrix) -> Result<AttackReport> {
    if setup.members.rows() != setup.non_members.rows() {
        return Err(Error::Precondition(format!(
            "known sets must have equal size, got {} and {}",
            setup.members.rows(),
            setup.non_members.rows()
        )));
    }
    if setup.thresholds.is_empty() || setup.thresholds.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::Config("thresholds must be positive and non-empty".into()));
    }
    let member_sims = max_similarities(&setup.members, syn)?;
    let non_member_sims = max_similarities(&setup.non_members, syn)?;
    let rows = attack_rows(&member_sims, &non_member_sims, &setup.thresholds);
    Ok(AttackReport { best: best_row(&rows), rows, member_sims, non_member_sims })
}

impl AttackReport {
    pub fn best_row(&self) -> Option<&AttackRow> {
        self.best.map(|i| &self.rows[i])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,tp,fp,fn,precision,recall,f1\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{},{},{}", r.threshold, r.tp, r.fp, r.fn_, r.precision, r.recall, r.f1);
        }
        s
    }
}

/// Draws `p` rows without replacement from each of `train` and `test`.
pub fn draw_known(train: &RecordMatrix, test: &RecordMatrix, p: usize, seed: u64) -> Result<(RecordMatrix, RecordMatrix)> {
    if p == 0 || p > train.rows() || p > test.rows() {
        return Err(Error::Precondition(format!(
            "cannot draw {p} known records per side from {} training and {} test rows",
            train.rows(),
            test.rows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = sample(&mut rng, train.rows(), p).into_vec();
    let b = sample(&mut rng, test.rows(), p).into_vec();
    Ok((train.select_rows(&a), test.select_rows(&b)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// Known-record count `U` or synthetic-set size.
    pub key: usize,
    pub report: AttackReport,
}

pub fn sweep_to_csv(key_name: &str, rows: &[SweepRow]) -> String {
    let mut s = format!("{key_name},threshold,tp,fp,fn,precision,recall,f1\n");
    for r in rows {
        match r.report.best_row() {
            Some(b) => {
                let _ = writeln!(s, "{},{},{},{},{},{},{},{}", r.key, b.threshold, b.tp, b.fp, b.fn_, b.precision, b.recall, b.f1);
            }
            None => {
                let p = r.report.member_sims.len();
                let _ = writeln!(s, "{},,0,0,{p},0,0,0", r.key);
            }
        }
    }
    s
}

/// Attack per known-record count `U` (split evenly, `P = U/2`; odd values
/// round down), against a fixed synthetic set.
pub fn sweep_known_records(
    train: &RecordMatrix,
    test: &RecordMatrix,
    syn: &RecordMatrix,
    us: &[usize],
    thresholds: &[f64],
    seed: u64,
) -> Result<(Vec<SweepRow>, Vec<String>)> {
    let mut warnings = Vec::new();
    let mut out = Vec::new();
    for &u in us {
        if u % 2 == 1 {
            warnings.push(format!("U={u} is odd; using {}", u - 1));
        }
        let p = u / 2;
        let (members, non_members) = draw_known(train, test, p, seed)?;
        let setup = AttackSetup { members, non_members, thresholds: thresholds.to_vec() };
        out.push(SweepRow { key: u, report: run_attack(&setup, syn)? });
    }
    Ok((out, warnings))
}

/// Attack with a fixed known set against the first `size` rows of `pool` for
/// each requested size. Duplicate sizes are dropped and size 0 is skipped.
pub fn sweep_synthetic_volume(setup: &AttackSetup, pool: &RecordMatrix, sizes: &[usize]) -> Result<(Vec<SweepRow>, Vec<String>)> {
    let mut warnings = Vec::new();
    let mut seen = Vec::new();
    let mut out = Vec::new();
    for &size in sizes {
        if size == 0 {
            warnings.push("synthetic size 0 skipped".to_string());
            continue;
        }
        if seen.contains(&size) {
            continue;
        }
        seen.push(size);
        if size > pool.rows() {
            return Err(Error::Precondition(format!("size {size} exceeds the {} available synthetic rows", pool.rows())));
        }
        let idx: Vec<usize> = (0..size).collect();
        out.push(SweepRow { key: size, report: run_attack(setup, &pool.select_rows(&idx))? });
    }
    Ok((out, warnings))
}
