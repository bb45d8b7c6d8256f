use crate::error::{Error, Result};
use crate::ndiff::Tensor;

/// Probability floor used by [`logloss`].
pub const PROB_CLIP: f64 = 1e-12;

/// Predicted class per row. Softmax rows use argmax with ties to the lowest
/// index; an `n×1` column of positive-class probabilities predicts 1 iff `p > 0.5`.
pub fn predicted_classes(probs: &Tensor) -> Vec<usize> {
    if probs.cols() == 1 {
        probs.as_slice().iter().map(|&p| usize::from(p > 0.5)).collect()
    } else {
        probs.argmax_rows()
    }
}

pub fn accuracy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    if probs.rows() != labels.len() {
        return Err(Error::shape(
            "accuracy",
            format!("{} predictions, {} labels", probs.rows(), labels.len()),
        ));
    }
    if labels.is_empty() {
        return Err(Error::invalid("accuracy of an empty set"));
    }
    let hits = predicted_classes(probs)
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Mean negative log-probability of the true class, probabilities clipped at [`PROB_CLIP`].
pub fn logloss(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    if probs.rows() != labels.len() || labels.is_empty() {
        return Err(Error::shape(
            "logloss",
            format!("{} predictions, {} labels", probs.rows(), labels.len()),
        ));
    }
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(r, &l)| {
            let p = if probs.cols() == 1 {
                let p1 = probs.get(r, 0);
                if l == 1 {
                    p1
                } else {
                    1.0 - p1
                }
            } else {
                probs.get(r, l)
            };
            -p.max(PROB_CLIP).ln()
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// Area under the ROC curve via the Mann-Whitney rank statistic with midranks.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            "roc_auc",
            format!("{} scores, {} labels", scores.len(), labels.len()),
        ));
    }
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("ROC-AUC needs both classes"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("ROC-AUC scores contain NaN"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the summed midranks of positives, kept integral.
    let mut twice_rank_sum: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1..=end share the midrank (start+1+end)/2.
        let twice_mid = (start + 1 + end) as u64;
        let positives = order[start..end].iter().filter(|&&i| labels[i]).count() as u64;
        twice_rank_sum += twice_mid * positives;
        start = end;
    }
    let twice_u = twice_rank_sum - pos * (pos + 1);
    Ok(twice_u as f64 / (2 * pos * neg) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 4], &[false, true, true, false]).unwrap(), 0.5);
        assert!(roc_auc(&[0.3, 0.4], &[true, true]).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let p = Tensor::from_rows(&[[0.2, 0.8], [0.9, 0.1]]).unwrap();
        assert_eq!(accuracy(&p, &[0, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&p, &[1, 0]).unwrap(), 1.0);
        let col = Tensor::from_rows(&[[0.5], [0.7]]).unwrap();
        assert_eq!(predicted_classes(&col), vec![0, 1]);
    }

    #[test]
    fn logloss_clips() {
        let p = Tensor::from_rows(&[[1.0, 0.0]]).unwrap();
        assert!((logloss(&p, &[1]).unwrap() - (-PROB_CLIP.ln())).abs() < 1e-12);
    }
}
