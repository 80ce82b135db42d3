//! Rank-based one-vs-rest AUC and accuracy.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Mann–Whitney AUC of `scores` for the positive set; ties get average ranks.
pub fn binary_auc<T: Scalar>(scores: &[T], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numerical("AUC scores contain NaN".into()));
    }
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("AUC undefined: class absent from evaluation set"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("NaN filtered above"));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let avg_rank = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += avg_rank * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Macro-averaged one-vs-rest AUC; `scores[i][k]` scores sample `i` for class `k`.
pub fn macro_auc<T: Scalar>(scores: &[Vec<T>], labels: &[usize], n_classes: usize) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.len() != n_classes) {
        return Err(Error::invalid(format!("every score row must have {n_classes} entries")));
    }
    let mut total = 0.0;
    for k in 0..n_classes {
        let column: Vec<T> = scores.iter().map(|s| s[k]).collect();
        let positive: Vec<bool> = labels.iter().map(|&l| l == k).collect();
        total += binary_auc(&column, &positive).map_err(|e| match e {
            Error::InvalidInput(m) => Error::invalid(format!("class {k}: {m}")),
            other => other,
        })?;
    }
    Ok(total / n_classes as f64)
}

/// Fraction of rows whose arg-max equals the label (first maximum wins).
pub fn accuracy<T: Scalar>(scores: &[Vec<T>], labels: &[usize]) -> Result<f64> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::invalid("accuracy needs matching, non-empty scores and labels"));
    }
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(s, &l)| {
            let mut best = 0;
            for (k, v) in s.iter().enumerate() {
                if *v > s[best] {
                    best = k;
                }
            }
            best == l
        })
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_one_hot_scores() {
        let labels = vec![0, 1, 2, 2, 1, 0];
        let scores: Vec<Vec<f64>> = labels.iter().map(|&l| (0..3).map(|k| (k == l) as u8 as f64).collect()).collect();
        assert_eq!(macro_auc(&scores, &labels, 3).unwrap(), 1.0);
        assert_eq!(accuracy(&scores, &labels).unwrap(), 1.0);
    }

    #[test]
    fn random_scores_give_chance_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let labels: Vec<usize> = (0..300).map(|i| i % 3).collect();
        let scores: Vec<Vec<f64>> = (0..300).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        let auc = macro_auc(&scores, &labels, 3).unwrap();
        assert!((auc - 0.5).abs() <= 0.05, "{auc}");
    }

    #[test]
    fn ties_count_half() {
        assert_eq!(binary_auc(&[1.0f64, 1.0], &[true, false]).unwrap(), 0.5);
        assert_eq!(binary_auc(&[0.1f64, 0.4, 0.35, 0.8], &[false, true, false, true]).unwrap(), 1.0);
        assert_eq!(binary_auc(&[0.1f64, 0.4, 0.35, 0.8], &[true, false, true, false]).unwrap(), 0.0);
    }

    #[test]
    fn brute_force_pair_counting_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let scores: Vec<f64> = (0..60).map(|_| (rng.random::<f64>() * 10.0).round()).collect();
        let pos: Vec<bool> = (0..60).map(|_| rng.random::<bool>()).collect();
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..60 {
            for j in 0..60 {
                if pos[i] && !pos[j] {
                    pairs += 1.0;
                    wins += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
                }
            }
        }
        assert!((binary_auc(&scores, &pos).unwrap() - wins / pairs).abs() < 1e-12);
    }

    #[test]
    fn invariant_under_monotone_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let labels: Vec<usize> = (0..90).map(|i| i % 3).collect();
        let scores: Vec<Vec<f64>> =
            labels.iter().map(|&l| (0..3).map(|k| rng.random::<f64>() + (k == l) as u8 as f64 * 0.3).collect()).collect();
        let warped: Vec<Vec<f64>> = scores.iter().map(|r| r.iter().map(|v| (3.0 * v).exp() - 7.0).collect()).collect();
        assert_eq!(macro_auc(&scores, &labels, 3).unwrap(), macro_auc(&warped, &labels, 3).unwrap());
    }

    #[test]
    fn missing_class_is_a_fault() {
        let scores = vec![vec![0.2f64, 0.5, 0.3], vec![0.9, 0.05, 0.05]];
        assert!(macro_auc(&scores, &[0, 1], 3).is_err());
    }
}
