//! Binary classification metrics. Labels are 0/1 bytes; anything nonzero is positive.

use crate::error::{Error, Result};

fn same_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("{a} labels vs {b} predictions")));
    }
    Ok(())
}

/// `(tp, fp, fn)` counts.
pub fn confusion(y_true: &[u8], y_pred: &[u8]) -> Result<(usize, usize, usize)> {
    same_len("confusion", y_true.len(), y_pred.len())?;
    let (mut tp, mut fp, mut fne) = (0, 0, 0);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t != 0, p != 0) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fne += 1,
            (false, false) => {}
        }
    }
    Ok((tp, fp, fne))
}

/// F1 of the positive class; 0 when there are no true positives.
pub fn f1_score(y_true: &[u8], y_pred: &[u8]) -> Result<f64> {
    let (tp, fp, fne) = confusion(y_true, y_pred)?;
    if tp == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fne) as f64)
}

fn class_counts(op: &'static str, y_true: &[u8]) -> Result<(usize, usize)> {
    let pos = y_true.iter().filter(|&&t| t != 0).count();
    let neg = y_true.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Precondition(format!("{op} needs both classes in y_true")));
    }
    Ok((pos, neg))
}

/// Indices sorted by descending score, with groups of equal scores.
fn tie_groups(scores: &[f64]) -> Result<Vec<Vec<usize>>> {
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric { op: "score ranking".into() });
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in idx {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    Ok(groups)
}

/// Area under the ROC curve: the probability that a random positive outscores
/// a random negative, counting ties as one half.
pub fn auroc(y_true: &[u8], scores: &[f64]) -> Result<f64> {
    same_len("auroc", y_true.len(), scores.len())?;
    let (pos, neg) = class_counts("auroc", y_true)?;
    let mut wins = 0.0;
    let mut neg_below = neg as f64;
    for g in tie_groups(scores)? {
        let gp = g.iter().filter(|&&i| y_true[i] != 0).count() as f64;
        let gn = g.len() as f64 - gp;
        neg_below -= gn;
        wins += gp * (neg_below + 0.5 * gn);
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// Area under the precision-recall curve by step integration:
/// the sum over distinct thresholds of `(recall_k - recall_{k-1}) * precision_k`.
pub fn auprc(y_true: &[u8], scores: &[f64]) -> Result<f64> {
    same_len("auprc", y_true.len(), scores.len())?;
    let (pos, _) = class_counts("auprc", y_true)?;
    let (mut tp, mut flagged) = (0usize, 0usize);
    let mut area = 0.0;
    for g in tie_groups(scores)? {
        let gp = g.iter().filter(|&&i| y_true[i] != 0).count();
        tp += gp;
        flagged += g.len();
        area += gp as f64 / pos as f64 * (tp as f64 / flagged as f64);
    }
    Ok(area)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn f1_closed_forms() {
        assert_eq!(f1_score(&[1, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(f1_score(&[1, 0, 1, 0], &[1, 1, 0, 0]).unwrap(), 0.5);
        assert_eq!(f1_score(&[0, 0], &[0, 0]).unwrap(), 0.0);
        assert!(f1_score(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn auroc_extremes() {
        let y = [0, 0, 1, 1];
        assert_eq!(auroc(&y, &[0.0, 0.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auprc(&y, &[0.0, 0.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auroc(&y, &[1.0, 1.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(auroc(&y, &[0.3; 4]).unwrap(), 0.5);
        assert!(matches!(auroc(&[1, 1], &[0.1, 0.2]), Err(Error::Precondition(_))));
        assert!(matches!(auprc(&[0, 0], &[0.1, 0.2]), Err(Error::Precondition(_))));
    }

    #[test]
    fn auroc_invariant_under_monotone_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let y: Vec<u8> = (0..200).map(|_| rng.random_range(0..2)).collect();
        let s: Vec<f64> = (0..200).map(|_| (rng.random_range(0..20) as f64) / 7.0).collect();
        let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 2.0).collect();
        assert_eq!(auroc(&y, &s).unwrap(), auroc(&y, &t).unwrap());
    }

    #[test]
    fn metrics_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y: Vec<u8> = (0..50).map(|_| rng.random_range(0..2)).collect();
        let s: Vec<f64> = (0..50).map(|_| rng.random_range(0..5) as f64).collect();
        let p: Vec<u8> = s.iter().map(|&v| (v > 2.0) as u8).collect();
        let mut perm: Vec<usize> = (0..50).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng);
        let yp: Vec<u8> = perm.iter().map(|&i| y[i]).collect();
        let sp: Vec<f64> = perm.iter().map(|&i| s[i]).collect();
        let pp: Vec<u8> = perm.iter().map(|&i| p[i]).collect();
        assert_eq!(auroc(&y, &s).unwrap(), auroc(&yp, &sp).unwrap());
        assert_eq!(auprc(&y, &s).unwrap(), auprc(&yp, &sp).unwrap());
        assert_eq!(f1_score(&y, &p).unwrap(), f1_score(&yp, &pp).unwrap());
    }
}
