//! Binary cross-entropy and AUC.

use crate::error::{Error, Result};
use crate::numerics::kernels::softplus;

/// Mean sigmoid cross-entropy in the numerically stable log-sum form:
/// softplus(z) - z*y per element, which never evaluates log of a tiny
/// probability.
pub fn bce_loss(logits: &[f64], labels: &[u8]) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} logits vs {} labels",
            logits.len(),
            labels.len()
        )));
    }
    if logits.is_empty() {
        return Err(Error::Contract("loss of an empty batch".into()));
    }
    let mut sum = 0.0;
    for (&z, &y) in logits.iter().zip(labels) {
        sum += softplus(z) - z * f64::from(y);
    }
    Ok(sum / logits.len() as f64)
}

/// Probability that a random positive outscores a random negative, ties
/// counted half; computed from the rank statistic in O(n log n).
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes, got {positives} positives / {negatives} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // Average-rank tie handling (1-based ranks).
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let p = positives as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn loss_closed_forms() {
        // z = 0, y = 1 -> ln 2
        let l = bce_loss(&[0.0], &[1]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        // strong correct logit saturates to ~0
        assert!(bce_loss(&[20.0], &[1]).unwrap() < 1e-8);
        // strong wrong logit costs about its magnitude
        assert!((bce_loss(&[20.0], &[0]).unwrap() - 20.0).abs() < 1e-8);
    }

    #[test]
    fn loss_matches_direct_formula_on_random_batches() {
        let mut rng = Rng::new(3);
        for _ in 0..20 {
            let n = 1 + rng.next_below(12);
            let logits: Vec<f64> = (0..n).map(|_| rng.next_range(-8.0, 8.0)).collect();
            let labels: Vec<u8> = (0..n).map(|_| (rng.next_f64() < 0.5) as u8).collect();
            // Direct evaluation: -[y ln s + (1-y) ln(1-s)] with high-precision sigmoid.
            let direct: f64 = logits
                .iter()
                .zip(&labels)
                .map(|(&z, &y)| {
                    let s = 1.0 / (1.0 + (-z).exp());
                    if y == 1 {
                        -s.ln()
                    } else {
                        -(1.0 - s).ln()
                    }
                })
                .sum::<f64>()
                / n as f64;
            let got = bce_loss(&logits, &labels).unwrap();
            assert!((got - direct).abs() < 1e-9, "{got} vs {direct}");
        }
    }

    #[test]
    fn auc_perfect_separation_is_one() {
        let scores = [0.1, 0.2, 0.9, 0.8];
        let labels = [0, 0, 1, 1];
        assert_eq!(auc(&scores, &labels).unwrap(), 1.0);
    }

    #[test]
    fn auc_of_random_scores_is_near_half() {
        let mut rng = Rng::new(17);
        let n = 20_000;
        let scores: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
        let labels: Vec<u8> = (0..n).map(|_| (rng.next_f64() < 0.4) as u8).collect();
        let a = auc(&scores, &labels).unwrap();
        assert!((a - 0.5).abs() < 0.02, "auc {a}");
    }

    /// Exhaustive pair counting, the brute-force oracle.
    fn pairwise(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn twelve_point_instance_matches_pair_counting() {
        let scores = [0.3, 0.7, 0.7, 0.1, 0.5, 0.9, 0.2, 0.7, 0.4, 0.6, 0.5, 0.8];
        let labels = [0, 1, 0, 0, 1, 1, 0, 1, 0, 0, 1, 1];
        let got = auc(&scores, &labels).unwrap();
        let want = pairwise(&scores, &labels);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn auc_is_invariant_under_monotone_transforms() {
        let mut rng = Rng::new(23);
        let scores: Vec<f64> = (0..200).map(|_| rng.next_range(-3.0, 3.0)).collect();
        let labels: Vec<u8> = (0..200).map(|_| (rng.next_f64() < 0.5) as u8).collect();
        let base = auc(&scores, &labels).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|&s| 1.0 / (1.0 + (-3.0 * s).exp())).collect();
        let shifted: Vec<f64> = scores.iter().map(|&s| 100.0 + 0.001 * s).collect();
        assert_eq!(auc(&squashed, &labels).unwrap(), base);
        assert_eq!(auc(&shifted, &labels).unwrap(), base);
    }

    #[test]
    fn single_class_input_is_undefined() {
        let err = auc(&[0.4, 0.6], &[1, 1]).unwrap_err();
        assert!(matches!(err, Error::UndefinedMetric(_)), "{err}");
    }
}
