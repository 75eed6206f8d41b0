//! Ranking metrics.

use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};

/// Area under the ROC curve with novel (`true`) as the positive class.
///
/// Computed exactly as the normalized Mann-Whitney statistic: tied scores
/// share their average rank, so a tie between a positive and a negative
/// counts one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(shape_err(labels.len(), scores.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidConfig("score is NaN".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // sum of (1-based, tie-averaged) ranks of the positives
    let mut rank_sum = 0.0f64;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let mid = (start + end + 1) as f64 / 2.0;
        let pos_in_run = order[start..end].iter().filter(|&&i| labels[i]).count();
        rank_sum += mid * pos_in_run as f64;
        start = end;
    }
    let p = positives as f64;
    let n = negatives as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, libm::sqrt(var)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_inverted() {
        let labels = [false, false, true, true];
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap(), 1.0);
        assert_eq!(auroc(&[0.9, 0.8, 0.2, 0.1], &labels).unwrap(), 0.0);
    }

    #[test]
    fn ties_count_half() {
        assert_eq!(auroc(&[1.0; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        // one positive tied with one of two negatives, above the other
        assert_eq!(auroc(&[0.0, 1.0, 1.0], &[false, false, true]).unwrap(), 0.75);
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(matches!(auroc(&[1.0, 2.0], &[true, true]), Err(Error::SingleClass)));
        assert!(matches!(auroc(&[1.0, 2.0], &[false, false]), Err(Error::SingleClass)));
        assert!(auroc(&[1.0], &[true, false]).is_err());
        assert!(auroc(&[f64::NAN, 1.0], &[true, false]).is_err());
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[1.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
        assert!(mean_std(&[]).is_none());
    }
}
