//! Ranking and calibration metrics.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::numerics::graph::bce_value;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub auc: f64,
    pub logloss: f64,
    pub n_instances: usize,
}

fn check_inputs(scores: &[f64], labels: &[f64]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Parameter(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Parameter("labels must be 0 or 1".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores".into()));
    }
    Ok(())
}

/// Area under the ROC curve via average ranks; tied pairs count one half.
///
/// Ranks are kept doubled so the computation is exact in integers, which
/// makes the result identical to counting all pairs.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1.0).count() as u128;
    let n_neg = labels.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs at least one positive and one negative label".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));

    // sum over positives of twice their 1-based average rank
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_avg = (i + 1 + j + 1) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&r| labels[r] == 1.0).count() as u128;
        twice_rank_sum += twice_avg * pos_in_group;
        i = j + 1;
    }
    // Mann-Whitney U, doubled: 2U = 2·Σranks − n_pos·(n_pos + 1)
    let twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// Mean clipped binary cross-entropy.
pub fn logloss(scores: &[f64], labels: &[f64]) -> Result<f64> {
    check_inputs(scores, labels)?;
    if scores.is_empty() {
        return Err(Error::Parameter("empty batch".into()));
    }
    Ok(bce_value(scores, labels))
}

pub fn evaluate_scores(scores: &[f64], labels: &[f64]) -> Result<EvalResult> {
    Ok(EvalResult {
        auc: auc(scores, labels)?,
        logloss: logloss(scores, labels)?,
        n_instances: scores.len(),
    })
}
