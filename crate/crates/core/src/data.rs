//! Record matrices, their file formats, splitting, and synthetic corpora.
//!
//! Binary matrix files are UTF-8: a header line `corgan-bin v1 <N> <M>`
//! followed by exactly `N` lines of `M` comma-separated `0`/`1` values.
//! Continuous CSVs are comma-separated with an optional header row; the last
//! column is an integer class label in `1..=5`, where `1` is the positive
//! class.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BINARY_MAGIC: &str = "corgan-bin v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataMode {
    Binary,
    Continuous,
}

/// An `N x M` dataset, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordMatrix {
    rows: usize,
    cols: usize,
    mode: DataMode,
    values: Vec<f64>,
    labels: Option<Vec<u8>>,
    column_names: Option<Vec<String>>,
}

impl RecordMatrix {
    pub fn new(rows: usize, cols: usize, mode: DataMode, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::shape("record_matrix", format!("{rows}x{cols} needs {} values, got {}", rows * cols, values.len())));
        }
        match mode {
            DataMode::Binary => {
                if let Some(i) = values.iter().position(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::Precondition(format!(
                        "binary matrix has value {} at row {}, column {}",
                        values[i],
                        i / cols.max(1),
                        i % cols.max(1)
                    )));
                }
            }
            DataMode::Continuous => {
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Precondition("continuous matrix has a non-finite value".into()));
                }
            }
        }
        Ok(RecordMatrix { rows, cols, mode, values, labels: None, column_names: None })
    }

    pub fn from_tensor(t: &Tensor, mode: DataMode) -> Result<Self> {
        match *t.shape() {
            [n, m] => Self::new(n, m, mode, t.data().to_vec()),
            _ => Err(Error::shape("record_matrix", format!("expected a 2-d tensor, got {:?}", t.shape()))),
        }
    }

    /// Attaches binary labels (1 = positive class).
    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.rows {
            return Err(Error::shape("record_matrix", format!("{} labels for {} rows", labels.len(), self.rows)));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::Precondition("labels must be 0 or 1".into()));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_column_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.cols {
            return Err(Error::shape("record_matrix", format!("{} names for {} columns", names.len(), self.cols)));
        }
        self.column_names = Some(names);
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn mode(&self) -> DataMode {
        self.mode
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for r in self.values.chunks(self.cols.max(1)) {
            sums.iter_mut().zip(r).for_each(|(s, v)| *s += v);
        }
        let n = self.rows.max(1) as f64;
        sums.into_iter().map(|s| s / n).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> RecordMatrix {
        let mut values = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        RecordMatrix {
            rows: idx.len(),
            cols: self.cols,
            mode: self.mode,
            values,
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            column_names: self.column_names.clone(),
        }
    }

    /// Rows stacked on top of each other; labels are kept only if both have them.
    pub fn concat(&self, other: &RecordMatrix) -> Result<RecordMatrix> {
        if self.cols != other.cols || self.mode != other.mode {
            return Err(Error::shape("concat", format!("{} vs {} columns", self.cols, other.cols)));
        }
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        let labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => Some([a.as_slice(), b].concat()),
            _ => None,
        };
        Ok(RecordMatrix { rows: self.rows + other.rows, cols: self.cols, mode: self.mode, values, labels, column_names: self.column_names.clone() })
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(&[self.rows, self.cols], self.values.clone())
    }

    /// Rows as a `[len, M]` tensor.
    pub fn batch(&self, idx: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Tensor::new(&[idx.len(), self.cols], data)
    }

    /// Serializes in the `corgan-bin v1` layout.
    pub fn to_binary_string(&self) -> Result<String> {
        if self.mode != DataMode::Binary {
            return Err(Error::Precondition("only binary matrices can be written as corgan-bin".into()));
        }
        let mut s = String::with_capacity(self.rows * self.cols * 2 + 32);
        writeln!(s, "{BINARY_MAGIC} {} {}", self.rows, self.cols).expect("string write");
        for r in 0..self.rows {
            for (j, v) in self.row(r).iter().enumerate() {
                if j > 0 {
                    s.push(',');
                }
                s.push(if *v == 1.0 { '1' } else { '0' });
            }
            s.push('\n');
        }
        Ok(s)
    }

    /// Continuous CSV with a trailing label column (`1` positive, `2` negative).
    pub fn to_continuous_csv(&self, header: bool) -> String {
        let mut s = String::new();
        if header {
            let names: Vec<String> = match &self.column_names {
                Some(n) => n.clone(),
                None => (1..=self.cols).map(|j| format!("X{j}")).collect(),
            };
            writeln!(s, "{},y", names.join(",")).expect("string write");
        }
        for r in 0..self.rows {
            for v in self.row(r) {
                write!(s, "{v},").expect("string write");
            }
            let label = match &self.labels {
                Some(l) if l[r] == 1 => 1,
                _ => 2,
            };
            writeln!(s, "{label}").expect("string write");
        }
        s
    }
}

fn parse_err(source: &str, line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse { source_name: source.to_string(), line, column, message: message.into() }
}

/// Parses `corgan-bin v1` text. `source` names the input in error messages.
pub fn parse_binary_matrix(text: &str, source: &str) -> Result<RecordMatrix> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| parse_err(source, 1, 1, "empty file"))?;
    let dims = header
        .strip_prefix(BINARY_MAGIC)
        .ok_or_else(|| parse_err(source, 1, 1, format!("expected header \"{BINARY_MAGIC} <N> <M>\"")))?;
    let dims: Vec<&str> = dims.split_whitespace().collect();
    let parse_dim = |s: &str, col| s.parse::<usize>().map_err(|_| parse_err(source, 1, col, format!("invalid dimension {s:?}")));
    let (n, m) = match dims.as_slice() {
        [n, m] => (parse_dim(n, 2)?, parse_dim(m, 3)?),
        _ => return Err(parse_err(source, 1, 1, "header must declare N and M")),
    };
    if m == 0 {
        return Err(parse_err(source, 1, 3, "M must be positive"));
    }
    let mut values = Vec::with_capacity(n * m);
    let mut count = 0;
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if count == n {
            if line.trim().is_empty() {
                continue;
            }
            return Err(parse_err(source, lineno, 1, format!("more than the declared {n} rows")));
        }
        let mut fields = 0;
        for (j, field) in line.split(',').enumerate() {
            let v = match field.trim() {
                "0" => 0.0,
                "1" => 1.0,
                other => return Err(parse_err(source, lineno, j + 1, format!("expected 0 or 1, found {other:?}"))),
            };
            values.push(v);
            fields += 1;
        }
        if fields != m {
            return Err(parse_err(source, lineno, fields.min(m) + 1, format!("expected {m} values, found {fields}")));
        }
        count += 1;
    }
    if count != n {
        return Err(parse_err(source, count + 2, 1, format!("declared {n} rows but found {count}")));
    }
    RecordMatrix::new(n, m, DataMode::Binary, values)
}

pub fn load_binary_matrix(path: impl AsRef<Path>) -> Result<RecordMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_binary_matrix(&text, &path.display().to_string())
}

pub fn write_binary_matrix(path: impl AsRef<Path>, data: &RecordMatrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, data.to_binary_string()?).map_err(|e| Error::io(path, e))
}

/// Parses a continuous CSV whose final column is an integer label in `1..=5`;
/// label `1` becomes the positive class.
pub fn parse_continuous_csv(text: &str, header: bool, source: &str) -> Result<RecordMatrix> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let mut names = None;
    if header {
        let (_, h) = lines.next().ok_or_else(|| parse_err(source, 1, 1, "missing header row"))?;
        let cols: Vec<String> = h.split(',').map(|s| s.trim().to_string()).collect();
        if cols.len() < 2 {
            return Err(parse_err(source, 1, 1, "need at least one feature and a label column"));
        }
        names = Some(cols[..cols.len() - 1].to_vec());
    }
    let mut width = names.as_ref().map(|n: &Vec<String>| n.len());
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(parse_err(source, lineno, 1, "need at least one feature and a label"));
        }
        let m = fields.len() - 1;
        match width {
            None => width = Some(m),
            Some(w) if w != m => {
                return Err(parse_err(source, lineno, fields.len(), format!("expected {} columns, found {}", w + 1, fields.len())))
            }
            _ => {}
        }
        for (j, f) in fields[..m].iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| parse_err(source, lineno, j + 1, format!("not a number: {f:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(source, lineno, j + 1, "non-finite value"));
            }
            values.push(v);
        }
        let label: i64 = fields[m].parse().map_err(|_| parse_err(source, lineno, m + 1, format!("label {:?} is not an integer", fields[m])))?;
        if !(1..=5).contains(&label) {
            return Err(parse_err(source, lineno, m + 1, format!("label {label} outside 1..=5")));
        }
        labels.push(u8::from(label == 1));
    }
    let m = width.ok_or_else(|| parse_err(source, 1, 1, "no data rows"))?;
    let n = labels.len();
    if n == 0 {
        return Err(parse_err(source, 1, 1, "no data rows"));
    }
    let mut out = RecordMatrix::new(n, m, DataMode::Continuous, values)?.with_labels(labels)?;
    if let Some(names) = names {
        out = out.with_column_names(names)?;
    }
    Ok(out)
}

pub fn load_continuous_csv(path: impl AsRef<Path>, header: bool) -> Result<RecordMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_continuous_csv(&text, header, &path.display().to_string())
}

pub fn write_continuous_csv(path: impl AsRef<Path>, data: &RecordMatrix, header: bool) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, data.to_continuous_csv(header)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

/// Seeded shuffle split into `(train, test)`, stratified by label when present.
pub fn split(data: &RecordMatrix, spec: SplitSpec) -> Result<(RecordMatrix, RecordMatrix)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Precondition(format!("train fraction {} outside (0,1)", spec.train_fraction)));
    }
    if data.rows() < 2 {
        return Err(Error::Precondition("split needs at least 2 rows".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let groups: Vec<Vec<usize>> = match data.labels() {
        Some(labels) => (0..=1u8).map(|c| (0..data.rows()).filter(|&i| labels[i] == c).collect()).collect(),
        None => vec![(0..data.rows()).collect()],
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    for mut g in groups {
        g.shuffle(&mut rng);
        let k = (g.len() as f64 * spec.train_fraction).round() as usize;
        train.extend_from_slice(&g[..k]);
        test.extend_from_slice(&g[k..]);
    }
    if train.is_empty() || test.is_empty() {
        let mut all: Vec<usize> = train.into_iter().chain(test).collect();
        all.shuffle(&mut rng);
        let k = ((all.len() as f64 * spec.train_fraction).round() as usize).clamp(1, all.len() - 1);
        test = all.split_off(k);
        train = all;
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok((data.select_rows(&train), data.select_rows(&test)))
}

/// Latent correlation between columns `d` apart: `0.6^d` within the band, else 0.
pub fn band_correlation(d: usize, band_width: usize) -> f64 {
    if d == 0 {
        1.0
    } else if d <= band_width {
        0.6f64.powi(d as i32)
    } else {
        0.0
    }
}

/// Banded Gaussian-copula binary corpus: latent `z ~ N(0, R)` with
/// [`band_correlation`], column `j` set where `z_j` exceeds the standard
/// normal quantile at `1 - p_j`.
pub fn synth_corpus(n: usize, m: usize, band_width: usize, target_marginals: &[f64], seed: u64) -> Result<RecordMatrix> {
    if m < 2 {
        return Err(Error::Precondition(format!("corpus needs m >= 2, got {m}")));
    }
    if n == 0 {
        return Err(Error::Precondition("corpus needs n >= 1".into()));
    }
    if target_marginals.len() != m {
        return Err(Error::Precondition(format!("{} marginals for {m} columns", target_marginals.len())));
    }
    if let Some(p) = target_marginals.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(Error::Precondition(format!("marginal {p} outside (0,1)")));
    }
    let corr = DMatrix::from_fn(m, m, |i, j| band_correlation(i.abs_diff(j), band_width));
    let chol = corr
        .cholesky()
        .ok_or_else(|| Error::Config(format!("band width {band_width} gives a correlation matrix that is not positive definite")))?;
    let l = chol.l();
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let thresholds: Vec<f64> = target_marginals.iter().map(|&p| std_normal.inverse_cdf(1.0 - p)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eps = vec![0.0; m];
    let mut values = Vec::with_capacity(n * m);
    for _ in 0..n {
        eps.iter_mut().for_each(|e| *e = rng.sample(StandardNormal));
        for j in 0..m {
            // the Cholesky factor of a banded matrix keeps the band
            let z: f64 = (j.saturating_sub(band_width)..=j).map(|k| l[(j, k)] * eps[k]).sum();
            values.push(if z > thresholds[j] { 1.0 } else { 0.0 });
        }
    }
    RecordMatrix::new(n, m, DataMode::Binary, values)
}

/// Marginals drawn uniformly from `[lo, hi)`, reproducible from `seed`.
pub fn random_marginals(m: usize, lo: f64, hi: f64, seed: u64) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi < 1.0 && lo < hi) {
        return Err(Error::Precondition(format!("marginal range [{lo}, {hi}) must lie inside (0,1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..m).map(|_| rng.random_range(lo..hi)).collect())
}

/// Labeled continuous signals standing in for EEG-style segments: each row is
/// an AR(1) trace (neighbor correlation 0.9); positive rows have three times the
/// amplitude and a slow oscillation added.
pub fn synth_signals(n: usize, m: usize, positive_fraction: f64, seed: u64) -> Result<RecordMatrix> {
    if n < 2 || m < 2 {
        return Err(Error::Precondition("signals need n >= 2 and m >= 2".into()));
    }
    if !(positive_fraction > 0.0 && positive_fraction < 1.0) {
        return Err(Error::Precondition(format!("positive fraction {positive_fraction} outside (0,1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phi: f64 = 0.9;
    let innov = (1.0 - phi * phi).sqrt();
    let mut values = Vec::with_capacity(n * m);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let positive = rng.random::<f64>() < positive_fraction;
        let amp = if positive { 3.0 } else { 1.0 };
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let mut z: f64 = rng.sample(StandardNormal);
        for j in 0..m {
            if j > 0 {
                z = phi * z + innov * rng.sample::<f64, _>(StandardNormal);
            }
            let wave = if positive { 2.0 * (phase + j as f64 * 0.2).sin() } else { 0.0 };
            values.push(40.0 * (amp * z + wave));
        }
        labels.push(u8::from(positive));
    }
    RecordMatrix::new(n, m, DataMode::Continuous, values)?.with_labels(labels)
}
