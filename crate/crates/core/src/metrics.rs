//! LogLoss and AUC, accumulated in `f64`.

use thiserror::Error;

/// Probability clipping inside `logloss`.
pub const LOGLOSS_EPS: f64 = 1e-7;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("{labels} labels but {scores} scores")]
    LengthMismatch { labels: usize, scores: usize },

    #[error("no examples to score")]
    EmptyInput,

    #[error("AUC needs both classes; got {positives} positive and {negatives} negative labels")]
    SingleClass { positives: usize, negatives: usize },
}

pub type Result<T> = std::result::Result<T, MetricError>;

fn check(labels: &[f32], scores: &[f64]) -> Result<()> {
    if labels.len() != scores.len() {
        return Err(MetricError::LengthMismatch {
            labels: labels.len(),
            scores: scores.len(),
        });
    }
    if labels.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    Ok(())
}

/// Mean negative log-likelihood with probabilities clipped to `[eps, 1 - eps]`.
pub fn logloss(labels: &[f32], probs: &[f64]) -> Result<f64> {
    check(labels, probs)?;
    let total: f64 = labels
        .iter()
        .zip(probs)
        .map(|(&y, &p)| {
            let p = p.clamp(LOGLOSS_EPS, 1.0 - LOGLOSS_EPS);
            let y = y as f64;
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// Mann-Whitney AUC with average ranks for tied scores.
pub fn auc(labels: &[f32], scores: &[f64]) -> Result<f64> {
    check(labels, scores)?;
    let positives = labels.iter().filter(|&&y| y > 0.5).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::SingleClass { positives, negatives });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let avg = (i + j + 2) as f64 / 2.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] > 0.5).count();
        rank_sum += avg * pos_in_group as f64;
        i = j + 1;
    }
    let (p, n) = (positives as f64, negatives as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spot_values() {
        assert!((logloss(&[1.0, 0.0, 1.0], &[0.5; 3]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((logloss(&[1.0, 0.0], &[0.9, 0.2]).unwrap() - 0.164252).abs() < 1e-6);
        let perfect = logloss(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((perfect - -(1.0 - LOGLOSS_EPS).ln()).abs() < 1e-15);
        assert_eq!(auc(&[1.0, 0.0, 1.0, 0.0], &[0.8, 0.7, 0.6, 0.5]).unwrap(), 0.75);
        assert_eq!(auc(&[1.0, 0.0, 1.0], &[0.3; 3]).unwrap(), 0.5);
        assert_eq!(auc(&[0.0, 1.0, 0.0, 1.0], &[0.1, 0.9, 0.2, 0.8]).unwrap(), 1.0);
    }

    #[test]
    fn errors() {
        assert_eq!(logloss(&[], &[]), Err(MetricError::EmptyInput));
        assert!(matches!(auc(&[1.0], &[0.1, 0.2]), Err(MetricError::LengthMismatch { .. })));
        assert_eq!(
            auc(&[1.0, 1.0], &[0.1, 0.2]),
            Err(MetricError::SingleClass { positives: 2, negatives: 0 })
        );
    }
}
