//! Grid metrics: RMSE, excess RMSE and the Brier score decomposition.
//!
//! Predictions are clamped to `[0,1]` before scoring.

use serde::Serialize;

use crate::error::{check_dim, invalid, Result};

fn paired(pred: &[f64], truth: &[f64]) -> Result<()> {
    check_dim(truth.len(), pred.len())?;
    if pred.is_empty() {
        return Err(invalid("metrics need at least one point"));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    paired(pred, truth)?;
    let s: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((s / pred.len() as f64).sqrt())
}

/// RMSE over the points where `pred > truth`; zero when there are none.
pub fn excess_rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    paired(pred, truth)?;
    let over: Vec<f64> = pred.iter().zip(truth).filter(|(p, t)| p > t).map(|(p, t)| (p - t).powi(2)).collect();
    if over.is_empty() {
        return Ok(0.0);
    }
    Ok((over.iter().sum::<f64>() / over.len() as f64).sqrt())
}

pub fn clamp_unit(values: &[f64]) -> Vec<f64> {
    values.iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BrierReport {
    /// Mean squared error of the raw (clamped) scores.
    pub brier: f64,
    /// Mean squared error after replacing each score by its bin average;
    /// equals `reliability − resolution + uncertainty`.
    pub binned_brier: f64,
    pub reliability: f64,
    pub resolution: f64,
    pub uncertainty: f64,
    /// `resolution / uncertainty`, absent when the outcomes are constant.
    pub normalized_resolution: Option<f64>,
    pub bins: usize,
}

pub fn brier_decomposition(pred: &[f64], outcomes: &[bool], bins: usize) -> Result<BrierReport> {
    check_dim(pred.len(), outcomes.len())?;
    let successes: Vec<u64> = outcomes.iter().map(|&y| y as u64).collect();
    brier_decomposition_counts(pred, &successes, &vec![1; pred.len()], bins)
}

/// Decomposition where point `i` stands for `trials[i]` binary outcomes,
/// `successes[i]` of them positive, all scored with `pred[i]`.
pub fn brier_decomposition_counts(pred: &[f64], successes: &[u64], trials: &[u64], bins: usize) -> Result<BrierReport> {
    check_dim(pred.len(), successes.len())?;
    check_dim(pred.len(), trials.len())?;
    if bins == 0 {
        return Err(invalid("bin count must be positive"));
    }
    if successes.iter().zip(trials).any(|(s, t)| s > t) {
        return Err(invalid("successes exceed trials"));
    }
    let total: u64 = trials.iter().sum();
    if total == 0 {
        return Err(invalid("no outcomes to score"));
    }
    let n = total as f64;
    let pred = clamp_unit(pred);
    let bin = |p: f64| ((p * bins as f64).floor() as usize).min(bins - 1);
    let mut weight = vec![0.0; bins];
    let mut pred_sum = vec![0.0; bins];
    let mut hit_sum = vec![0.0; bins];
    let mut brier = 0.0;
    for ((&p, &s), &t) in pred.iter().zip(successes).zip(trials) {
        let (s, t) = (s as f64, t as f64);
        let b = bin(p);
        weight[b] += t;
        pred_sum[b] += p * t;
        hit_sum[b] += s;
        brier += s * (1.0 - p).powi(2) + (t - s) * p * p;
    }
    let ybar = hit_sum.iter().sum::<f64>() / n;
    let (mut rel, mut res, mut binned) = (0.0, 0.0, 0.0);
    for b in 0..bins {
        if weight[b] == 0.0 {
            continue;
        }
        let pb = pred_sum[b] / weight[b];
        let yb = hit_sum[b] / weight[b];
        rel += weight[b] * (pb - yb).powi(2);
        res += weight[b] * (yb - ybar).powi(2);
        binned += hit_sum[b] * (1.0 - pb).powi(2) + (weight[b] - hit_sum[b]) * pb * pb;
    }
    let unc = ybar * (1.0 - ybar);
    Ok(BrierReport {
        brier: brier / n,
        binned_brier: binned / n,
        reliability: rel / n,
        resolution: res / n,
        uncertainty: unc,
        normalized_resolution: (unc > 0.0).then(|| res / n / unc),
        bins,
    })
}
