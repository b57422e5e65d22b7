//! Partition agreement, ranking and accuracy metrics, and credible
//! summaries of per-snapshot values.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{hpd_interval, median, HpdInterval};

fn choose2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index of two labelings of the same items. Returns 1 when
/// the chance-corrected denominator vanishes (both partitions trivial).
pub fn adjusted_rand_index<A: Eq + Hash, B: Eq + Hash>(a: &[A], b: &[B]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::NotEnoughSamples {
            needed: 2,
            got: a.len(),
        });
    }
    let mut cells: HashMap<(&A, &B), usize> = HashMap::new();
    let mut rows: HashMap<&A, usize> = HashMap::new();
    let mut cols: HashMap<&B, usize> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *cells.entry((x, y)).or_insert(0) += 1;
        *rows.entry(x).or_insert(0) += 1;
        *cols.entry(y).or_insert(0) += 1;
    }
    let index: f64 = cells.values().map(|n| choose2(*n)).sum();
    let sum_a: f64 = rows.values().map(|n| choose2(*n)).sum();
    let sum_b: f64 = cols.values().map(|n| choose2(*n)).sum();
    let expected = sum_a * sum_b / choose2(a.len());
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

fn check_classes(scores: &[f64], positives: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != positives.len() {
        return Err(Error::LengthMismatch(scores.len(), positives.len()));
    }
    let pos = positives.iter().filter(|p| **p).count();
    let neg = positives.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok((pos, neg))
}

/// Probability that a random positive scores above a random negative,
/// ties counting one half.
pub fn roc_auc(scores: &[f64], positives: &[bool]) -> Result<f64> {
    let (pos, neg) = check_classes(scores, positives)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    // midranks over tied groups
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        let midrank = (start + end) as f64 / 2.0 + 1.0;
        rank_sum += order[start..=end].iter().filter(|&&k| positives[k]).count() as f64 * midrank;
        start = end + 1;
    }
    let pos_f = pos as f64;
    Ok((rank_sum - pos_f * (pos_f + 1.0) / 2.0) / (pos_f * neg as f64))
}

/// ROC points `(fpr, tpr)` from the strictest threshold to the loosest,
/// one point per distinct score.
pub fn roc_curve(scores: &[f64], positives: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = check_classes(scores, positives)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, &i) in order.iter().enumerate() {
        if positives[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = k + 1 == order.len() || scores[order[k + 1]] != scores[i];
        if last_of_group {
            points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        }
    }
    Ok(points)
}

pub fn detection_accuracy(predictions: &[bool], truth: &[bool]) -> Result<f64> {
    accuracy(predictions, truth)
}

/// Fraction of positions where the two sequences agree.
pub fn accuracy<T: PartialEq>(predictions: &[T], truth: &[T]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::LengthMismatch(predictions.len(), truth.len()));
    }
    if predictions.is_empty() {
        return Err(Error::Empty);
    }
    let hits = predictions.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / predictions.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub hpd: HpdInterval,
    pub median: f64,
}

/// HPD interval and median of per-snapshot metric values.
pub fn summarize_metric(values: &[f64], mass: f64) -> Result<MetricSummary> {
    Ok(MetricSummary {
        hpd: hpd_interval(values, mass)?,
        median: median(values)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RandomSource;
    use proptest::prelude::*;

    #[test]
    fn ari_examples() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        assert!((adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap() + 0.5).abs() < 1e-12);
        assert_eq!(adjusted_rand_index(&[0, 1, 2, 3], &[0, 0, 0, 0]).unwrap(), 0.0);
        assert!(adjusted_rand_index(&[0, 1], &[0]).is_err());
        assert!(adjusted_rand_index(&[0], &[0]).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(
            roc_auc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(),
            0.5
        );
        assert_eq!(roc_auc(&[0.3, 0.2], &[true, true]), Err(Error::SingleClass));
    }

    #[test]
    fn roc_curve_shape() {
        let curve = roc_curve(&[0.9, 0.8, 0.8, 0.1, 0.4], &[true, false, true, false, true]).unwrap();
        assert_eq!(curve.first(), Some(&(0.0, 0.0)));
        assert_eq!(curve.last(), Some(&(1.0, 1.0)));
        assert!(curve.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1));
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(detection_accuracy(&[true, false], &[true, false]).unwrap(), 1.0);
        assert_eq!(detection_accuracy(&[true, false], &[false, true]).unwrap(), 0.0);
        let mut rng = RandomSource::new(8);
        let a: Vec<bool> = (0..200).map(|_| rng.uniform() < 0.5).collect();
        let b: Vec<bool> = (0..200).map(|_| rng.uniform() < 0.5).collect();
        let mut hits = 0;
        for i in 0..200 {
            if a[i] == b[i] {
                hits += 1;
            }
        }
        assert_eq!(detection_accuracy(&a, &b).unwrap(), hits as f64 / 200.0);
        assert!(detection_accuracy(&a, &b[..3]).is_err());
    }

    #[test]
    fn summary_examples() {
        let s = summarize_metric(&[0.7; 5], 0.95).unwrap();
        assert_eq!((s.hpd.lower, s.hpd.upper, s.median), (0.7, 0.7, 0.7));
        let s = summarize_metric(&[5.0, 1.0, 3.0], 0.5).unwrap();
        assert_eq!(s.median, 3.0);
        assert!(summarize_metric(&[1.0], 0.95).is_err());
    }

    proptest! {
        #[test]
        fn ari_relabelling_invariant(a in prop::collection::vec(0u8..4, 2..40), shift in 1u8..7) {
            let b: Vec<u8> = a.iter().map(|v| (v * 3 + shift) % 20).collect();
            let c: Vec<u8> = a.iter().rev().copied().collect();
            let ab = adjusted_rand_index(&a, &c).unwrap();
            let bb = adjusted_rand_index(&b, &c).unwrap();
            prop_assert!((ab - bb).abs() < 1e-12);
        }

        #[test]
        fn auc_monotone_invariant(scores in prop::collection::vec(-5.0f64..5.0, 4..40), seed in any::<u64>()) {
            let mut rng = RandomSource::new(seed);
            let mut pos: Vec<bool> = scores.iter().map(|_| rng.uniform() < 0.5).collect();
            pos[0] = true;
            pos[1] = false;
            let transformed: Vec<f64> = scores.iter().map(|s| (s * 0.7).exp() + 3.0).collect();
            let a = roc_auc(&scores, &pos).unwrap();
            let b = roc_auc(&transformed, &pos).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
