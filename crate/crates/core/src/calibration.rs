//! Distribution-free certified lower bounds by histogram binning.
//!
//! Scores are split into quantile bins; each bin receives its empirical
//! safety rate minus a Bonferroni-corrected Hoeffding width,
//! `p_b = max(0, π̂_b − √(ln(B/δ) / (2 n_b)))`.

use serde::{Deserialize, Serialize};

use crate::benchmark::GroundTruthGrid;
use crate::error::{check_dim, invalid, Result};

/// Score range below which the predictor is treated as constant.
pub const DEGENERATE_RANGE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedCalibrator {
    /// `τ_0 ≤ … ≤ τ_B` after merging empty bins.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub rates: Vec<f64>,
    pub widths: Vec<f64>,
    pub certified: Vec<f64>,
    pub delta: f64,
    /// Bin count requested by the caller, before merging.
    pub requested_bins: usize,
}

/// `√(ln(B/δ) / (2 n))`.
pub fn hoeffding_width(bins: usize, delta: f64, n: usize) -> f64 {
    ((bins as f64 / delta).ln() / (2.0 * n as f64)).sqrt()
}

pub fn calibrate(scores: &[f64], outcomes: &[bool], bins: usize, delta: f64) -> Result<BinnedCalibrator> {
    check_dim(scores.len(), outcomes.len())?;
    let n = scores.len();
    if n == 0 {
        return Err(invalid("calibration set is empty"));
    }
    if bins == 0 || n < bins {
        return Err(invalid(format!("need 1 ≤ B ≤ n_cal, got B = {bins}, n_cal = {n}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("δ must lie in (0, 1)"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(invalid("scores must be finite"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[n - 1]);
    let mut edges: Vec<f64> = if hi - lo <= DEGENERATE_RANGE {
        vec![lo, hi]
    } else {
        (0..=bins)
            .map(|b| sorted[((b as f64 * n as f64 / bins as f64).round() as usize).min(n - 1)])
            .collect()
    };
    // an empty bin has equal edges; dropping the duplicate merges it with a neighbour
    edges.dedup();
    if edges.len() == 1 {
        edges.push(edges[0]);
    }
    let b_eff = edges.len() - 1;
    let mut counts = vec![0usize; b_eff];
    let mut safe = vec![0usize; b_eff];
    for (&s, &y) in scores.iter().zip(outcomes) {
        let b = bin_of(&edges, s);
        counts[b] += 1;
        safe[b] += y as usize;
    }
    let rates: Vec<f64> = counts.iter().zip(&safe).map(|(&c, &s)| s as f64 / c as f64).collect();
    let widths: Vec<f64> = counts.iter().map(|&c| hoeffding_width(b_eff, delta, c)).collect();
    let certified = rates.iter().zip(&widths).map(|(r, w)| (r - w).max(0.0)).collect();
    Ok(BinnedCalibrator { edges, counts, rates, widths, certified, delta, requested_bins: bins })
}

/// `m(p) = min{b : p < τ_b}` (zero-based), last bin closed above.
fn bin_of(edges: &[f64], p: f64) -> usize {
    let b_eff = edges.len() - 1;
    (1..=b_eff).find(|&b| p < edges[b]).unwrap_or(b_eff) - 1
}

impl BinnedCalibrator {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn is_degenerate(&self) -> bool {
        self.bins() == 1
    }

    /// `p_{m(score)}`.
    pub fn certified_lower_bound(&self, score: f64) -> f64 {
        self.certified[bin_of(&self.edges, score)]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cal: Self = serde_json::from_str(text)?;
        let b = cal.counts.len();
        if b == 0 || cal.edges.len() != b + 1 || [cal.rates.len(), cal.widths.len(), cal.certified.len()].iter().any(|&l| l != b) {
            return Err(invalid("calibrator arrays have inconsistent lengths"));
        }
        Ok(cal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Soundness {
    /// Fraction of grid points with bound ≤ MC estimate.
    pub soundness: f64,
    /// Population standard deviation of the bounds across the grid.
    pub discrimination: f64,
}

pub fn soundness_and_discrimination(cal: &BinnedCalibrator, scores: &[f64], truth: &GroundTruthGrid) -> Result<Soundness> {
    let bounds: Vec<f64> = scores.iter().map(|&s| cal.certified_lower_bound(s)).collect();
    soundness_of_bounds(&bounds, &truth.p_mc())
}

pub fn soundness_of_bounds(bounds: &[f64], p_mc: &[f64]) -> Result<Soundness> {
    check_dim(p_mc.len(), bounds.len())?;
    if bounds.is_empty() {
        return Err(invalid("empty grid"));
    }
    let n = bounds.len() as f64;
    let sound = bounds.iter().zip(p_mc).filter(|(b, p)| b <= p).count() as f64 / n;
    let mean = bounds.iter().sum::<f64>() / n;
    let var = bounds.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / n;
    Ok(Soundness { soundness: sound, discrimination: var.sqrt() })
}
