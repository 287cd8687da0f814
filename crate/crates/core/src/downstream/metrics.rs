//! Classification and regression metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion counts and the rates derived from them. Rates whose
/// denominator is zero are absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub n: usize,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub threshold: f64,
    pub acc: f64,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub ppv: Option<f64>,
    pub f1: Option<f64>,
    /// Absent when only one class is present.
    pub auc: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Confusion counts at `score >= threshold` plus rank-statistic AUC.
pub fn classify_metrics(
    labels: &[bool],
    scores: &[f64],
    threshold: f64,
) -> Result<ClassificationReport> {
    if labels.len() != scores.len() {
        return Err(Error::Contract(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Validation("no samples to score".into()));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("score {i} is NaN")));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&y, &s) in labels.iter().zip(scores) {
        match (y, s >= threshold) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
        }
    }
    let tpr = ratio(tp, tp + fn_);
    let ppv = ratio(tp, tp + fp);
    let f1 = match (ppv, tpr) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    Ok(ClassificationReport {
        n: labels.len(),
        tp,
        fp,
        tn,
        fn_,
        threshold,
        acc: (tp + tn) as f64 / labels.len() as f64,
        tpr,
        tnr: ratio(tn, tn + fp),
        ppv,
        f1,
        auc: rank_auc(labels, scores),
    })
}

/// Area under the ROC curve as the Mann-Whitney statistic: the probability
/// that a random positive outscores a random negative, ties counting half.
pub fn rank_auc(labels: &[bool], scores: &[f64]) -> Option<f64> {
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks over tie groups, 1-based
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum_pos += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos as f64 * neg as f64))
}

/// Error statistics of one regression target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub name: String,
    pub n: usize,
    pub mae: f64,
    /// Mean signed error, prediction minus truth.
    pub me: f64,
    /// Sample standard deviation of the signed error.
    pub sd: f64,
    /// 100 MAE(model) / MAE(naive); absent when the naive MAE is 0.
    pub mase_percent: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub targets: Vec<TargetReport>,
}

pub fn regress_metrics(
    name: &str,
    y_true: &[f64],
    y_pred: &[f64],
    naive: &[f64],
) -> Result<TargetReport> {
    if y_true.len() != y_pred.len() || y_true.len() != naive.len() {
        return Err(Error::Contract(format!(
            "lengths differ: {} truths, {} predictions, {} baseline",
            y_true.len(),
            y_pred.len(),
            naive.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::Validation("no samples to score".into()));
    }
    let n = y_true.len() as f64;
    let e: Vec<f64> = y_pred.iter().zip(y_true).map(|(p, t)| p - t).collect();
    let mae = e.iter().map(|v| v.abs()).sum::<f64>() / n;
    let me = e.iter().sum::<f64>() / n;
    let sd = if e.len() > 1 {
        (e.iter().map(|v| (v - me).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let naive_mae = naive
        .iter()
        .zip(y_true)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / n;
    Ok(TargetReport {
        name: name.to_string(),
        n: e.len(),
        mae,
        me,
        sd,
        mase_percent: (naive_mae > 0.0).then(|| 100.0 * mae / naive_mae),
    })
}
