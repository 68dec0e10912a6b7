//! Evaluation measures over flat vectors of truths and predictions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("measure undefined: {0}")]
pub struct UndefinedError(pub String);

pub fn accuracy<T: PartialEq>(truths: &[T], preds: &[T]) -> f64 {
    let correct = truths.iter().zip(preds).filter(|(t, p)| t == p).count();
    correct as f64 / truths.len() as f64
}

/// Rows index the true class, columns the predicted class.
pub fn confusion_matrix(truths: &[usize], preds: &[usize], classes: usize) -> Vec<Vec<u64>> {
    let mut cm = vec![vec![0u64; classes]; classes];
    for (&t, &p) in truths.iter().zip(preds) {
        cm[t][p] += 1;
    }
    cm
}

/// Cohen's kappa; 0 when chance agreement is already 1.
pub fn kappa_from_confusion(cm: &[Vec<u64>]) -> f64 {
    let n: u64 = cm.iter().flatten().sum();
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    let observed = (0..cm.len()).map(|i| cm[i][i]).sum::<u64>() as f64 / nf;
    let mut chance = 0.0;
    for c in 0..cm.len() {
        let row: u64 = cm[c].iter().sum();
        let col: u64 = cm.iter().map(|r| r[c]).sum();
        chance += row as f64 * col as f64;
    }
    chance /= nf * nf;
    if chance == 1.0 {
        0.0
    } else {
        (observed - chance) / (1.0 - chance)
    }
}

pub fn kappa(truths: &[usize], preds: &[usize], classes: usize) -> f64 {
    kappa_from_confusion(&confusion_matrix(truths, preds, classes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub support: u64,
    pub predicted: u64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    /// Set when the class was never predicted and precision defaults to 0.
    pub precision_undefined: bool,
}

pub fn class_scores(cm: &[Vec<u64>]) -> Vec<ClassScores> {
    (0..cm.len())
        .map(|c| {
            let tp = cm[c][c];
            let support: u64 = cm[c].iter().sum();
            let predicted: u64 = cm.iter().map(|r| r[c]).sum();
            let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
            let recall = if support == 0 { 0.0 } else { tp as f64 / support as f64 };
            let f_measure =
                if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            ClassScores { support, predicted, precision, recall, f_measure, precision_undefined: predicted == 0 }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

/// Support-weighted averages.
pub fn weighted_average(scores: &[ClassScores]) -> Averages {
    let n: u64 = scores.iter().map(|s| s.support).sum();
    let w = |f: fn(&ClassScores) -> f64| scores.iter().map(|s| s.support as f64 * f(s)).sum::<f64>() / n as f64;
    Averages { precision: w(|s| s.precision), recall: w(|s| s.recall), f_measure: w(|s| s.f_measure) }
}

/// Unweighted averages over classes that occur in the truths or the predictions.
pub fn macro_average(scores: &[ClassScores]) -> Averages {
    let active: Vec<&ClassScores> = scores.iter().filter(|s| s.support > 0 || s.predicted > 0).collect();
    let m = active.len() as f64;
    let a = |f: fn(&ClassScores) -> f64| active.iter().map(|s| f(s)).sum::<f64>() / m;
    Averages { precision: a(|s| s.precision), recall: a(|s| s.recall), f_measure: a(|s| s.f_measure) }
}

/// Area under the ROC curve via the Mann–Whitney statistic with midranks.
pub fn auc(truth_flags: &[bool], scores: &[f64]) -> Result<f64, UndefinedError> {
    let n_pos = truth_flags.iter().filter(|&&t| t).count();
    let n_neg = truth_flags.len() - n_pos;
    if n_pos == 0 {
        return Err(UndefinedError("no positive instances".into()));
    }
    if n_neg == 0 {
        return Err(UndefinedError("no negative instances".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if truth_flags[idx] {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// One-vs-rest AUC averaged with class prevalence as weights.
///
/// `confidences[i][c]` is the confidence of instance `i` for class `c`.
pub fn weighted_auc(truths: &[usize], confidences: &[Vec<f64>], classes: usize) -> Result<f64, UndefinedError> {
    let n = truths.len() as f64;
    let mut total = 0.0;
    for c in 0..classes {
        let flags: Vec<bool> = truths.iter().map(|&t| t == c).collect();
        let support = flags.iter().filter(|&&f| f).count();
        if support == 0 {
            continue;
        }
        let scores: Vec<f64> = confidences.iter().map(|conf| conf[c]).collect();
        total += support as f64 / n * auc(&flags, &scores)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionScores {
    pub mae: f64,
    pub rmse: f64,
}

pub fn regression_measures(truths: &[f64], preds: &[f64]) -> RegressionScores {
    let n = truths.len() as f64;
    let abs: f64 = truths.iter().zip(preds).map(|(t, p)| (t - p).abs()).sum();
    let sq: f64 = truths.iter().zip(preds).map(|(t, p)| (t - p) * (t - p)).sum();
    RegressionScores { mae: abs / n, rmse: (sq / n).sqrt() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_45_of_50() {
        let truths = vec![0usize; 50];
        let preds: Vec<usize> = (0..50).map(|i| if i < 45 { 0 } else { 1 }).collect();
        assert_eq!(accuracy(&truths, &preds), 0.9);
    }

    #[test]
    fn kappa_perfect_three_classes() {
        let t = [0, 1, 2, 2, 1, 0];
        assert_eq!(kappa(&t, &t, 3), 1.0);
    }

    // marginals: rows (2,2), cols (2,2); p_o = 0.5, p_e = (2*2 + 2*2)/16 = 0.5
    #[test]
    fn kappa_hand_computed() {
        let truths = [0, 0, 1, 1];
        let preds = [0, 1, 0, 1];
        assert_eq!(accuracy(&truths, &preds), 0.5);
        assert_eq!(kappa(&truths, &preds, 2), 0.0);
    }

    #[test]
    fn kappa_zero_when_chance_is_one() {
        assert_eq!(kappa(&[1, 1, 1], &[1, 1, 1], 2), 0.0);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[true, true, false, false], &[0.9, 0.8, 0.3, 0.1]).unwrap(), 1.0);
        assert_eq!(auc(&[true, false, true, false], &[0.5; 4]).unwrap(), 0.5);
        // pos {0.9, 0.4}, neg {0.6, 0.1}: 3 of 4 pairs ranked correctly
        assert_eq!(auc(&[true, true, false, false], &[0.9, 0.4, 0.6, 0.1]).unwrap(), 0.75);
        assert!(auc(&[true, true], &[0.1, 0.2]).is_err());
        assert!(auc(&[false], &[0.1]).is_err());
    }

    #[test]
    fn binary_weighted_auc_equals_plain_auc() {
        let truths = [1, 1, 0, 0, 1];
        let pos = [0.9, 0.4, 0.6, 0.1, 0.55];
        let conf: Vec<Vec<f64>> = pos.iter().map(|&p| vec![1.0 - p, p]).collect();
        let flags: Vec<bool> = truths.iter().map(|&t| t == 1).collect();
        let plain = auc(&flags, &pos).unwrap();
        assert!((weighted_auc(&truths, &conf, 2).unwrap() - plain).abs() < 1e-15);
    }

    #[test]
    fn regression_examples() {
        assert_eq!(regression_measures(&[1.0, 2.0], &[1.0, 2.0]), RegressionScores { mae: 0.0, rmse: 0.0 });
        assert_eq!(regression_measures(&[1.0, 2.0], &[3.0, 4.0]), RegressionScores { mae: 2.0, rmse: 2.0 });
        let r = regression_measures(&[0.0, 0.0], &[0.0, 2.0]);
        assert_eq!(r.mae, 1.0);
        assert_eq!(r.rmse, 2f64.sqrt());
    }

    #[test]
    fn precision_of_unpredicted_class_is_zero() {
        let cm = confusion_matrix(&[0, 1, 1], &[1, 1, 1], 2);
        let s = class_scores(&cm);
        assert_eq!(s[0].precision, 0.0);
        assert!(s[0].precision_undefined);
        assert!((s[1].precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s[1].recall, 1.0);
        let m = macro_average(&s);
        assert!((m.recall - 0.5).abs() < 1e-15);
    }
}
