//! Logistic regression and a Gini decision tree. Both fits are deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::bce_term;
use crate::nn::functional::sigmoid_scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    LogisticRegression,
    DecisionTree,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 2] = [ClassifierKind::LogisticRegression, ClassifierKind::DecisionTree];

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::LogisticRegression => "logistic_regression",
            ClassifierKind::DecisionTree => "decision_tree",
        }
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic_regression" | "lr" => Ok(ClassifierKind::LogisticRegression),
            "decision_tree" | "dt" => Ok(ClassifierKind::DecisionTree),
            _ => Err(Error::Config(format!("unknown classifier {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticParams {
    pub l2: f64,
    pub learning_rate: f64,
    pub iterations: usize,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams { l2: 1e-4, learning_rate: 1.0, iterations: 300 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { max_depth: 8, min_leaf: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TreeNode {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
enum Fitted {
    Constant(f64),
    Logistic { mean: Vec<f64>, scale: Vec<f64>, w: Vec<f64>, b: f64 },
    Tree(Vec<TreeNode>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub kind: ClassifierKind,
    /// Set when the training labels held a single class; the model then
    /// predicts that class with score equal to the positive-class prior.
    pub degenerate: bool,
    features: usize,
    fitted: Fitted,
}

fn dims(x: &Tensor, y: &[u8]) -> Result<(usize, usize)> {
    if x.shape().len() != 2 {
        return Err(Error::shape("train_classifier", format!("features must be 2-d, got {:?}", x.shape())));
    }
    let (n, d) = (x.shape()[0], x.shape()[1]);
    if n != y.len() {
        return Err(Error::shape("train_classifier", format!("{n} rows vs {} labels", y.len())));
    }
    if n < 2 {
        return Err(Error::Precondition("classifier training needs at least 2 rows".into()));
    }
    Ok((n, d))
}

/// Trains with default hyper-parameters.
pub fn train_classifier(kind: ClassifierKind, x: &Tensor, y: &[u8]) -> Result<ClassifierModel> {
    match kind {
        ClassifierKind::LogisticRegression => fit_logistic(x, y, LogisticParams::default()),
        ClassifierKind::DecisionTree => fit_tree(x, y, TreeParams::default()),
    }
}

fn degenerate(kind: ClassifierKind, d: usize, y: &[u8]) -> Option<ClassifierModel> {
    let pos = y.iter().filter(|&&v| v != 0).count();
    (pos == 0 || pos == y.len()).then(|| ClassifierModel {
        kind,
        degenerate: true,
        features: d,
        fitted: Fitted::Constant(pos as f64 / y.len() as f64),
    })
}

/// Full-batch gradient descent on mean BCE + `l2/2 * |w|^2` over standardized
/// features, from a zero start.
pub fn fit_logistic(x: &Tensor, y: &[u8], p: LogisticParams) -> Result<ClassifierModel> {
    let (n, d) = dims(x, y)?;
    if let Some(m) = degenerate(ClassifierKind::LogisticRegression, d, y) {
        return Ok(m);
    }
    let mut mean = vec![0.0; d];
    let mut scale = vec![0.0; d];
    for i in 0..n {
        for (j, v) in x.row(i).iter().enumerate() {
            mean[j] += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    for i in 0..n {
        for (j, v) in x.row(i).iter().enumerate() {
            scale[j] += (v - mean[j]).powi(2);
        }
    }
    for s in &mut scale {
        let sd = (*s / n as f64).sqrt();
        *s = if sd > 0.0 { sd } else { 1.0 };
    }
    let z: Vec<f64> = (0..n * d).map(|k| (x.data()[k] - mean[k % d]) / scale[k % d]).collect();
    let t: Vec<f64> = y.iter().map(|&v| f64::from(v != 0)).collect();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut gw = vec![0.0; d];
    for _ in 0..p.iterations {
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        for i in 0..n {
            let row = &z[i * d..(i + 1) * d];
            let logit = b + row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let r = sigmoid_scalar(logit) - t[i];
            gb += r;
            for (g, a) in gw.iter_mut().zip(row) {
                *g += r * a;
            }
        }
        for (wj, g) in w.iter_mut().zip(&gw) {
            *wj -= p.learning_rate * (g / n as f64 + p.l2 * *wj);
        }
        b -= p.learning_rate * gb / n as f64;
    }
    Ok(ClassifierModel {
        kind: ClassifierKind::LogisticRegression,
        degenerate: false,
        features: d,
        fitted: Fitted::Logistic { mean, scale, w, b },
    })
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct Grow<'a> {
    x: &'a [f64],
    y: &'a [u8],
    d: usize,
    p: TreeParams,
    nodes: Vec<TreeNode>,
}

impl Grow<'_> {
    /// Best `(weighted child impurity, feature, threshold)` for `idx`.
    fn best_split(&self, idx: &[usize]) -> Option<(f64, usize, f64)> {
        let n = idx.len();
        let total_pos = idx.iter().filter(|&&i| self.y[i] != 0).count();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = idx.to_vec();
        for f in 0..self.d {
            let val = |i: usize| self.x[i * self.d + f];
            order.sort_by(|&a, &b| val(a).total_cmp(&val(b)).then(a.cmp(&b)));
            let mut left_pos = 0;
            for k in 1..n {
                left_pos += usize::from(self.y[order[k - 1]] != 0);
                let (lo, hi) = (val(order[k - 1]), val(order[k]));
                if lo == hi || k < self.p.min_leaf || n - k < self.p.min_leaf {
                    continue;
                }
                let imp = (k as f64 * gini(left_pos, k) + (n - k) as f64 * gini(total_pos - left_pos, n - k)) / n as f64;
                if best.is_none_or(|(b, _, _)| imp < b) {
                    best = Some((imp, f, lo + (hi - lo) / 2.0));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let pos = idx.iter().filter(|&&i| self.y[i] != 0).count();
        let slot = self.nodes.len();
        self.nodes.push(TreeNode::Leaf(pos as f64 / idx.len() as f64));
        if depth >= self.p.max_depth || pos == 0 || pos == idx.len() {
            return slot;
        }
        let Some((imp, feature, threshold)) = self.best_split(&idx) else { return slot };
        if imp > gini(pos, idx.len()) {
            return slot;
        }
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i * self.d + feature] <= threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[slot] = TreeNode::Split { feature, threshold, left, right };
        slot
    }
}

/// CART-style tree: Gini impurity, splits at midpoints between distinct values.
/// Impure nodes split on the best candidate even at zero impurity gain.
pub fn fit_tree(x: &Tensor, y: &[u8], p: TreeParams) -> Result<ClassifierModel> {
    let (n, d) = dims(x, y)?;
    if p.max_depth == 0 || p.min_leaf == 0 {
        return Err(Error::Config("tree depth and minimum leaf size must be positive".into()));
    }
    if let Some(m) = degenerate(ClassifierKind::DecisionTree, d, y) {
        return Ok(m);
    }
    let mut g = Grow { x: x.data(), y, d, p, nodes: Vec::new() };
    g.grow((0..n).collect(), 0);
    Ok(ClassifierModel { kind: ClassifierKind::DecisionTree, degenerate: false, features: d, fitted: Fitted::Tree(g.nodes) })
}

impl ClassifierModel {
    /// Positive-class score in `[0, 1]` per row.
    pub fn predict_scores(&self, x: &Tensor) -> Result<Vec<f64>> {
        if x.shape().len() != 2 || x.shape()[1] != self.features {
            return Err(Error::shape("predict", format!("expected {} features, got {:?}", self.features, x.shape())));
        }
        let n = x.shape()[0];
        Ok((0..n)
            .map(|i| {
                let row = x.row(i);
                match &self.fitted {
                    Fitted::Constant(p) => *p,
                    Fitted::Logistic { mean, scale, w, b } => {
                        let logit = b + row.iter().zip(mean).zip(scale).zip(w).map(|(((v, m), s), w)| (v - m) / s * w).sum::<f64>();
                        sigmoid_scalar(logit)
                    }
                    Fitted::Tree(nodes) => {
                        let mut k = 0;
                        loop {
                            match nodes[k] {
                                TreeNode::Leaf(p) => break p,
                                TreeNode::Split { feature, threshold, left, right } => {
                                    k = if row[feature] <= threshold { left } else { right };
                                }
                            }
                        }
                    }
                }
            })
            .collect())
    }

    /// Hard 0/1 predictions (score >= 0.5).
    pub fn predict(&self, x: &Tensor) -> Result<Vec<u8>> {
        Ok(self.predict_scores(x)?.into_iter().map(|s| u8::from(s >= 0.5)).collect())
    }

    /// Mean BCE of the scores against `y`.
    pub fn log_loss(&self, x: &Tensor, y: &[u8]) -> Result<f64> {
        let s = self.predict_scores(x)?;
        Ok(s.iter().zip(y).map(|(&p, &t)| bce_term(p, f64::from(t != 0))).sum::<f64>() / s.len() as f64)
    }
}
