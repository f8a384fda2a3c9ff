//! Ranking metrics over scored test edges. Anomalies (label 1) are the
//! positive class.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("scores and labels differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least one positive and one negative")]
    SingleClass,
    #[error("no positives")]
    NoPositives,
}

/// AUC and AP for one evaluation pass.
#[derive(Debug, Clone, Serialize)]
pub struct EvalResult {
    pub auc: f64,
    pub ap: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub inject_rate: f64,
}

/// Probability that a uniformly random positive outranks a uniformly random
/// negative; ties count half. Rank-sum (Mann-Whitney) formulation with
/// midrank tie correction.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based midrank of the tie group [i, j)
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Step-sum area under the precision-recall curve over the descending-score
/// ranking. Ties break deterministically by (score desc, label asc, index
/// asc).
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 {
        return Err(MetricsError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(labels[a].cmp(&labels[b]))
            .then(a.cmp(&b))
    });
    let mut tp = 0usize;
    let mut ap = 0.0;
    for (rank0, &idx) in order.iter().enumerate() {
        if labels[idx] == 1 {
            tp += 1;
            let precision = tp as f64 / (rank0 + 1) as f64;
            ap += precision / n_pos as f64;
        }
    }
    Ok(ap)
}

/// Both metrics at once.
pub fn evaluate(scores: &[f64], labels: &[u8], inject_rate: f64) -> Result<EvalResult, MetricsError> {
    let auc = roc_auc(scores, labels)?;
    let ap = average_precision(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    Ok(EvalResult {
        auc,
        ap,
        n_pos,
        n_neg: labels.len() - n_pos,
        inject_rate,
    })
}
