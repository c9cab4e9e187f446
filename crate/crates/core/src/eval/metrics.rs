use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_binary(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::Input(format!("label {bad} is not binary")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Input("NaN score".into()));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric("both classes must be present".into()));
    }
    Ok((positives, negatives))
}

/// Area under the ROC curve via the rank-sum statistic, with tied scores
/// sharing their mid-rank (so a tied positive/negative pair counts ½).
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_binary(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean.
        let mid = (i + j + 2) as f64 / 2.0;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum += mid * tied_pos as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// F1 at `threshold` (a score at the threshold counts as positive).
pub fn f1(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    check_binary(scores, labels)?;
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mae: f64,
    pub mape: f64,
    pub wmape: f64,
}

/// MAE, MAPE and WMAPE of non-negative count predictions.
///
/// Predictions are clamped at zero first. A zero target uses denominator 1 in
/// MAPE; in WMAPE it contributes to the numerator only.
pub fn regression_metrics(preds: &[f64], targets: &[f64]) -> Result<RegressionMetrics> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::Input(format!(
            "need equal, non-empty lengths, got {} predictions and {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite prediction or target".into()));
    }
    if targets.iter().any(|&y| y < 0.0) {
        return Err(Error::Input("negative target".into()));
    }
    let n = preds.len() as f64;
    let (mut abs_sum, mut pct_sum, mut target_sum) = (0.0, 0.0, 0.0);
    for (&pred, &y) in preds.iter().zip(targets) {
        let err = (pred.max(0.0) - y).abs();
        abs_sum += err;
        pct_sum += err / if y == 0.0 { 1.0 } else { y };
        target_sum += y;
    }
    if target_sum == 0.0 {
        return Err(Error::UndefinedMetric("WMAPE needs a positive target total".into()));
    }
    Ok(RegressionMetrics {
        mae: abs_sum / n,
        mape: pct_sum / n,
        wmape: abs_sum / target_sum,
    })
}
