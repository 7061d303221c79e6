//! Evaluation metrics and embedding diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{HmhError, Result};
use crate::graph::{normalized_laplacian, SparseGraph};
use crate::matrix::{argmax, Matrix};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Accuracy,
    Auc,
}

/// Fraction of `rows` whose argmax logit equals the label.
pub fn accuracy(logits: &Matrix, labels: &[usize], rows: &[usize]) -> Result<f64> {
    if rows.is_empty() {
        return Err(HmhError::EmptyMask("accuracy".into()));
    }
    let hits = rows.iter().filter(|&&i| argmax(logits.row(i)) == labels[i]).count();
    Ok(hits as f64 / rows.len() as f64)
}

/// Binary ROC-AUC from the rank-sum statistic; tied scores share their midrank.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(HmhError::InvalidParameter("AUC needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    let rank_sum: f64 = (0..scores.len()).filter(|&k| positive[k]).map(|k| ranks[k]).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Accuracy or AUC over `rows`. AUC scores class 1 by its softmax probability.
pub fn evaluate_logits(logits: &Matrix, labels: &[usize], rows: &[usize], metric: Metric) -> Result<f64> {
    match metric {
        Metric::Accuracy => accuracy(logits, labels, rows),
        Metric::Auc => {
            if logits.cols() != 2 {
                return Err(HmhError::InvalidParameter(format!(
                    "AUC needs exactly 2 classes, model has {}",
                    logits.cols()
                )));
            }
            let scores: Vec<f64> = rows
                .iter()
                .map(|&i| crate::matrix::logistic(logits.get(i, 1) - logits.get(i, 0)))
                .collect();
            let pos: Vec<bool> = rows.iter().map(|&i| labels[i] == 1).collect();
            roc_auc(&scores, &pos)
        }
    }
}

/// `trace(Hᵀ L H) / N` with the normalized Laplacian.
pub fn dirichlet_energy(g: &SparseGraph, h: &Matrix) -> f64 {
    assert_eq!(h.rows(), g.n());
    if g.n() == 0 {
        return 0.0;
    }
    let lh = normalized_laplacian(g).spmm(h);
    let tr: f64 = lh.data().iter().zip(h.data()).map(|(a, b)| a * b).sum();
    // the quadratic form is non-negative; clamp rounding noise around zero
    tr.max(0.0) / g.n() as f64
}

/// Accuracy per degree cohort: `d ≤ lo`, `lo < d ≤ hi`, `d > hi`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortAccuracy {
    pub low: Option<f64>,
    pub mid: Option<f64>,
    pub high: Option<f64>,
    pub counts: [usize; 3],
}

pub fn degree_stratified_accuracy(
    predictions: &[usize],
    labels: &[usize],
    degrees: &[usize],
    thresholds: (usize, usize),
) -> Result<CohortAccuracy> {
    let (lo, hi) = thresholds;
    if lo >= hi {
        return Err(HmhError::InvalidParameter(format!("cohort thresholds need lo < hi, got ({lo}, {hi})")));
    }
    let mut hits = [0usize; 3];
    let mut counts = [0usize; 3];
    for i in 0..predictions.len() {
        let c = if degrees[i] <= lo {
            0
        } else if degrees[i] <= hi {
            1
        } else {
            2
        };
        counts[c] += 1;
        hits[c] += (predictions[i] == labels[i]) as usize;
    }
    let acc = |c: usize| (counts[c] > 0).then(|| hits[c] as f64 / counts[c] as f64);
    Ok(CohortAccuracy {
        low: acc(0),
        mid: acc(1),
        high: acc(2),
        counts,
    })
}

/// `‖mean_A − mean_B‖ / ‖mean_A − mean_H‖` over row groups of `embeddings`.
/// A zero denominator yields `+∞`.
pub fn separation_ratio(embeddings: &Matrix, a: &[usize], b: &[usize], hub: &[usize]) -> Result<f64> {
    if a.is_empty() || b.is_empty() || hub.is_empty() {
        return Err(HmhError::InvalidParameter("separation ratio needs three non-empty groups".into()));
    }
    let ma = group_mean(embeddings, a);
    let mb = group_mean(embeddings, b);
    let mh = group_mean(embeddings, hub);
    let num = crate::matrix::sq_dist(&ma, &mb).sqrt();
    let den = crate::matrix::sq_dist(&ma, &mh).sqrt();
    Ok(if den == 0.0 { f64::INFINITY } else { num / den })
}

pub fn group_mean(m: &Matrix, rows: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for &i in rows {
        for (o, v) in out.iter_mut().zip(m.row(i)) {
            *o += v;
        }
    }
    let inv = 1.0 / rows.len() as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.3; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[1.0, 0.0, 1.0, 0.0], &[true, false, true, false]).unwrap(), 1.0);
        assert!(roc_auc(&[1.0], &[true]).is_err());
    }

    #[test]
    fn auc_rejects_multiclass() {
        let logits = Matrix::zeros(2, 3);
        assert!(evaluate_logits(&logits, &[0, 1], &[0, 1], Metric::Auc).is_err());
    }

    #[test]
    fn dirichlet_examples() {
        let g = SparseGraph::build(2, &[(0, 1)], None).unwrap();
        let h = Matrix::column(&[1.0, -1.0]);
        assert!((dirichlet_energy(&g, &h) - 2.0).abs() < 1e-15);
        assert_eq!(dirichlet_energy(&g, &Matrix::filled(2, 3, 4.0)), 0.0);
        assert!((dirichlet_energy(&g, &h.scale(3.0)) - 18.0).abs() < 1e-13);
    }

    #[test]
    fn cohort_counts() {
        // degrees 1,1,3,3,9,9; hits at positions 0,2,3,4
        let pred = [0, 1, 1, 0, 2, 0];
        let lab = [0, 0, 1, 0, 2, 1];
        let deg = [1, 1, 3, 3, 9, 9];
        let c = degree_stratified_accuracy(&pred, &lab, &deg, (1, 5)).unwrap();
        assert_eq!(c.low, Some(0.5));
        assert_eq!(c.mid, Some(1.0));
        assert_eq!(c.high, Some(0.5));
        let gap = degree_stratified_accuracy(&pred, &lab, &deg, (3, 4)).unwrap();
        assert_eq!(gap.mid, None);
        assert_eq!(gap.counts, [4, 0, 2]);
    }

    #[test]
    fn separation_examples() {
        let simplex = Matrix::identity(3);
        assert!((separation_ratio(&simplex, &[0], &[1], &[2]).unwrap() - 1.0).abs() < 1e-15);
        let same = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(separation_ratio(&same, &[0], &[1], &[2]).unwrap(), 0.0);
    }
}
