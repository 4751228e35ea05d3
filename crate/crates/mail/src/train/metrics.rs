//! Classification metrics: accuracy, macro F1, macro one-vs-rest AUC with
//! tie-corrected rank statistics, per-class breakdown and confusion matrix.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub acc: f64,
    pub macro_f1: f64,
    pub macro_auc: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl MetricsReport {
    pub fn to_lines(&self) -> Vec<String> {
        let mut lines = vec![
            format!("acc = {:.6}", self.acc),
            format!("macro_f1 = {:.6}", self.macro_f1),
            format!("macro_auc = {:.6}", self.macro_auc),
        ];
        for (c, m) in self.per_class.iter().enumerate() {
            lines.push(format!(
                "class{} = precision {:.6} recall {:.6} f1 {:.6} support {}",
                c, m.precision, m.recall, m.f1, m.support
            ));
        }
        for (c, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            lines.push(format!("confusion{} = {}", c, cells.join(",")));
        }
        lines
    }
}

/// Tie-corrected one-vs-rest AUC of `scores` against binary membership.
fn rank_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let n = scores.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // Average ranks across ties (ranks are 1-based).
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for k in i..=j {
            ranks[idx[k]] = avg;
        }
        i = j + 1;
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return f64::NAN;
    }
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    (rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos as f64 * n_neg as f64)
}

/// Compute the metric suite from `[B, K]` logits (row-major) and labels.
///
/// AUC needs at least two distinct classes present in the batch; macro AUC
/// averages the one-vs-rest AUC over classes with at least one positive.
pub fn compute_metrics(logits: &[f64], classes: usize, labels: &[usize]) -> Result<MetricsReport> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::data("metrics need at least one sample"));
    }
    if logits.len() != n * classes {
        return Err(Error::dimension(format!(
            "logits length {} does not match {} samples x {} classes",
            logits.len(),
            n,
            classes
        )));
    }
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::data(format!("label {y} at sample {i} out of range")));
        }
    }

    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut correct = 0usize;
    let mut probs = vec![0.0; n * classes];
    for b in 0..n {
        let row = &logits[b * classes..(b + 1) * classes];
        let mut best = 0usize;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        confusion[labels[b]][best] += 1;
        if best == labels[b] {
            correct += 1;
        }
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (k, &v) in row.iter().enumerate() {
            let e = (v - m).exp();
            probs[b * classes + k] = e;
            z += e;
        }
        for k in 0..classes {
            probs[b * classes + k] /= z;
        }
    }
    let acc = correct as f64 / n as f64;

    let mut per_class = Vec::with_capacity(classes);
    for c in 0..classes {
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = (0..classes).map(|t| confusion[t][c]).sum();
        let precision = if predicted > 0 { tp as f64 / predicted as f64 } else { 0.0 };
        let recall = if support > 0 { tp as f64 / support as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        per_class.push(ClassMetrics { precision, recall, f1, support });
    }
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / classes as f64;

    let distinct = labels.iter().collect::<std::collections::HashSet<_>>().len();
    if distinct < 2 {
        return Err(Error::data(
            "undefined metric: AUC needs at least two distinct classes in the batch",
        ));
    }
    let mut auc_sum = 0.0;
    let mut auc_count = 0usize;
    for c in 0..classes {
        let positive: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        if !positive.iter().any(|&p| p) {
            continue;
        }
        let scores: Vec<f64> = (0..n).map(|b| probs[b * classes + c]).collect();
        let a = rank_auc(&scores, &positive);
        if a.is_finite() {
            auc_sum += a;
            auc_count += 1;
        }
    }
    let macro_auc = auc_sum / auc_count as f64;

    Ok(MetricsReport { acc, macro_f1, macro_auc, per_class, confusion })
}

/// Predicted class per row of a `[B, K]` logit matrix.
pub fn argmax_rows(logits: &[f64], classes: usize) -> Vec<usize> {
    logits
        .chunks_exact(classes)
        .map(|row| {
            let mut best = 0usize;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_score_one() {
        // Strongly separated logits for 3 samples over 3 classes.
        let logits = vec![5.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 5.0];
        let r = compute_metrics(&logits, 3, &[0, 1, 2]).unwrap();
        assert_eq!(r.acc, 1.0);
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.macro_auc, 1.0);
    }

    #[test]
    fn binary_hand_confusion_case() {
        // Predictions (1,1,0,0) against labels (1,0,0,0).
        let logits = vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0];
        let r = compute_metrics(&logits, 2, &[1, 0, 0, 0]).unwrap();
        assert!((r.acc - 0.75).abs() < 1e-12);
        // class 1: precision 0.5, recall 1, f1 = 2/3; class 0: precision 1,
        // recall 2/3, f1 = 0.8; macro = 0.73333...
        assert!((r.per_class[1].precision - 0.5).abs() < 1e-12);
        assert!((r.per_class[1].recall - 1.0).abs() < 1e-12);
        assert!((r.per_class[1].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.per_class[0].f1 - 0.8).abs() < 1e-12);
        assert!((r.macro_f1 - 11.0 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn equal_scores_give_half_auc() {
        let logits = vec![0.0; 8];
        let r = compute_metrics(&logits, 2, &[0, 1, 0, 1]).unwrap();
        assert!((r.macro_auc - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_class_batch_is_undefined_for_auc() {
        let logits = vec![0.0, 1.0, 0.0, 1.0];
        let e = compute_metrics(&logits, 2, &[1, 1]).unwrap_err();
        assert_eq!(e.kind, crate::error::ErrorKind::Data);
        assert!(e.message.contains("undefined"), "{}", e.message);
    }

    #[test]
    fn confusion_rows_sum_to_support() {
        let logits = vec![
            2.0, 0.0, 1.0, //
            0.0, 2.0, 1.0, //
            1.0, 0.0, 2.0, //
            2.0, 1.0, 0.0, //
        ];
        let labels = [0, 2, 2, 1];
        let r = compute_metrics(&logits, 3, &labels).unwrap();
        for (c, row) in r.confusion.iter().enumerate() {
            let sum: usize = row.iter().sum();
            assert_eq!(sum, labels.iter().filter(|&&y| y == c).count());
        }
        let trace: usize = (0..3).map(|c| r.confusion[c][c]).sum();
        assert!((r.acc - trace as f64 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_are_permutation_invariant() {
        let logits = vec![
            2.0, 0.0, //
            0.0, 2.0, //
            1.5, 0.5, //
            0.2, 0.9, //
        ];
        let labels = [0, 1, 1, 0];
        let a = compute_metrics(&logits, 2, &labels).unwrap();
        // Reverse sample order.
        let mut rev = Vec::new();
        for b in (0..4).rev() {
            rev.extend_from_slice(&logits[b * 2..(b + 1) * 2]);
        }
        let rlabels: Vec<usize> = labels.iter().rev().cloned().collect();
        let b = compute_metrics(&rev, 2, &rlabels).unwrap();
        assert_eq!(a.acc, b.acc);
        assert_eq!(a.macro_f1, b.macro_f1);
        assert!((a.macro_auc - b.macro_auc).abs() < 1e-12);
    }
}
