//! Finite-state abstractions: uniform partitions, empirical cell
//! transition probabilities, interval-MDP robust value iteration and the
//! total-variation (sub-simulation) update.
//!
//! Every transition matrix has one extra column, index `n`, for the
//! absorbing unsafe state collecting successors that leave the bounding box.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dp::DpModel;
use crate::error::{check_dim, invalid, Result};
use crate::points::PointSet;
use crate::region::{AxisBox, SafeRegion};

const FEAS_TOL: f64 = 1e-12;

/// Uniform grid of closed cells over the bounding box of a safe region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    bounds: AxisBox,
    counts: Vec<usize>,
    safe: Vec<bool>,
    center_safe: Vec<bool>,
}

pub fn build_partition(region: &SafeRegion, counts: &[usize]) -> Result<Partition> {
    check_dim(region.dim(), counts.len())?;
    if counts.iter().any(|&c| c == 0) {
        return Err(invalid("cell counts must be positive"));
    }
    let mut part = Partition {
        bounds: region.bounds().clone(),
        counts: counts.to_vec(),
        safe: Vec::new(),
        center_safe: Vec::new(),
    };
    let n = part.len();
    part.safe = (0..n).map(|i| region.contains_box(&part.cell_box(i))).collect();
    part.center_safe = (0..n).map(|i| region.is_safe(&part.center(i))).collect();
    Ok(part)
}

impl Partition {
    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Index of the absorbing out-of-box state.
    pub fn sink(&self) -> usize {
        self.len()
    }

    fn multi_index(&self, mut i: usize) -> Vec<usize> {
        let mut idx = vec![0; self.counts.len()];
        for j in (0..self.counts.len()).rev() {
            idx[j] = i % self.counts[j];
            i /= self.counts[j];
        }
        idx
    }

    pub fn cell_box(&self, i: usize) -> AxisBox {
        let idx = self.multi_index(i);
        let (mut lo, mut hi) = (Vec::new(), Vec::new());
        for (j, &k) in idx.iter().enumerate() {
            let w = (self.bounds.high()[j] - self.bounds.low()[j]) / self.counts[j] as f64;
            lo.push(self.bounds.low()[j] + w * k as f64);
            hi.push(if k + 1 == self.counts[j] { self.bounds.high()[j] } else { self.bounds.low()[j] + w * (k + 1) as f64 });
        }
        AxisBox::new(lo, hi).expect("cell widths are positive")
    }

    /// Representative `x̂_i`, the cell centre.
    pub fn center(&self, i: usize) -> Vec<f64> {
        self.cell_box(i).center()
    }

    /// `Π(x)`; `None` outside the bounding box. Shared faces go to the
    /// higher-index cell, the upper boundary to the last cell.
    pub fn project(&self, x: &[f64]) -> Option<usize> {
        if x.len() != self.counts.len() || !self.bounds.contains(x) {
            return None;
        }
        let mut idx = 0;
        for (j, &c) in self.counts.iter().enumerate() {
            let lo = self.bounds.low()[j];
            let w = (self.bounds.high()[j] - lo) / c as f64;
            let k = (((x[j] - lo) / w).floor() as usize).min(c - 1);
            idx = idx * c + k;
        }
        Some(idx)
    }

    /// `Π(x)` with the sink for out-of-box states.
    pub fn project_or_sink(&self, x: &[f64]) -> usize {
        self.project(x).unwrap_or(self.sink())
    }

    /// `1(A_i ⊂ S)`.
    pub fn safe_flags(&self) -> &[bool] {
        &self.safe
    }

    /// `1_S(x̂_i)`.
    pub fn center_flags(&self) -> &[bool] {
        &self.center_safe
    }

    pub fn max_half_diagonal(&self) -> f64 {
        (0..self.len()).map(|i| self.cell_box(i).half_diagonal()).fold(0.0, f64::max)
    }
}

/// Row-stochastic `n × (n+1)` cell transition estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct CellProbabilities {
    pub rows: Vec<Vec<f64>>,
    /// Rows that had no positive mass and fell back to uniform.
    pub flagged: Vec<usize>,
}

/// `p̂(A_j | x̂_i) = Σ_l w_l(x̂_i) 1_{A_j}(x_+^{(l)})`, clipped to `[0,1]` and
/// renormalized per row.
pub fn empirical_cell_probs(part: &Partition, dp: &DpModel) -> Result<CellProbabilities> {
    let (gram, targets) = match (dp.gram(), dp.targets()) {
        (Some(g), Some(t)) => (g, t),
        _ => return Err(invalid("cell probabilities need a model fitted on one-step pairs")),
    };
    check_dim(part.counts.len(), targets.dim())?;
    let n = part.len();
    let centers = PointSet::from_rows(targets.dim(), &(0..n).map(|i| part.center(i)).collect::<Vec<_>>())?;
    let w = gram.weights_at_many(&centers)?;
    let dest: Vec<usize> = targets.rows().map(|x| part.project_or_sink(x)).collect();
    let raw: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = vec![0.0; n + 1];
            for (l, &c) in dest.iter().enumerate() {
                row[c] += w[(i, l)];
            }
            row
        })
        .collect();
    Ok(normalize_rows(raw))
}

/// Clips every entry to `[0,1]` and renormalizes rows to sum to one;
/// rows with no mass become uniform.
pub fn normalize_rows(raw: Vec<Vec<f64>>) -> CellProbabilities {
    let mut flagged = Vec::new();
    let rows = raw
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let clipped: Vec<f64> = row.iter().map(|p| p.clamp(0.0, 1.0)).collect();
            let s: f64 = clipped.iter().sum();
            if s > 0.0 {
                clipped.into_iter().map(|p| p / s).collect()
            } else {
                log::warn!("cell {i} has no transition mass; using a uniform row");
                flagged.push(i);
                vec![1.0 / row.len() as f64; row.len()]
            }
        })
        .collect();
    CellProbabilities { rows, flagged }
}

/// Interval radii `ε(x̂_j | x̂_i)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Radii {
    Constant(f64),
    Matrix(Vec<Vec<f64>>),
}

/// Rectangular ambiguity set around empirical cell probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalModel {
    pub phat: Vec<Vec<f64>>,
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
}

impl IntervalModel {
    pub fn new(probs: &CellProbabilities, radii: &Radii) -> Result<Self> {
        let mut lower = Vec::with_capacity(probs.rows.len());
        let mut upper = Vec::with_capacity(probs.rows.len());
        for (i, row) in probs.rows.iter().enumerate() {
            let r: Vec<f64> = match radii {
                Radii::Constant(c) => vec![*c; row.len()],
                Radii::Matrix(m) => {
                    let r = m.get(i).ok_or_else(|| invalid("radius matrix has too few rows"))?;
                    check_dim(row.len(), r.len())?;
                    r.clone()
                }
            };
            if r.iter().any(|e| !(0.0..=1.0).contains(e)) {
                return Err(invalid("interval radii must lie in [0,1]"));
            }
            lower.push(row.iter().zip(&r).map(|(p, e)| (p - e).clamp(0.0, 1.0)).collect());
            upper.push(row.iter().zip(&r).map(|(p, e)| (p + e).clamp(0.0, 1.0)).collect());
        }
        Ok(Self { phat: probs.rows.clone(), lower, upper })
    }

    /// Rows `cell_i,cell_j,phat,lower,upper`; `cell_j = n` is the sink.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "cell_i,cell_j,phat,lower,upper")?;
        for i in 0..self.phat.len() {
            for j in 0..self.phat[i].len() {
                writeln!(out, "{i},{j},{:.17e},{:.17e},{:.17e}", self.phat[i][j], self.lower[i][j], self.upper[i][j])?;
            }
        }
        Ok(())
    }
}

/// `min pᵀv` over `{lower ≤ p ≤ upper, Σp = 1}` by order-maximization:
/// start at `lower` and pour the remaining mass into the smallest `v` first.
pub fn imp_inner_min(lower: &[f64], upper: &[f64], v: &[f64]) -> Result<(Vec<f64>, f64)> {
    check_dim(lower.len(), upper.len())?;
    check_dim(lower.len(), v.len())?;
    if let Some(i) = (0..lower.len()).find(|&i| lower[i] > upper[i] + FEAS_TOL) {
        return Err(invalid(format!("lower[{i}] = {} exceeds upper[{i}] = {}", lower[i], upper[i])));
    }
    let lo_sum: f64 = lower.iter().sum();
    let hi_sum: f64 = upper.iter().sum();
    if lo_sum > 1.0 + FEAS_TOL {
        return Err(invalid(format!("Σ lower = {lo_sum} exceeds 1")));
    }
    if hi_sum < 1.0 - FEAS_TOL {
        return Err(invalid(format!("Σ upper = {hi_sum} is below 1")));
    }
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    let mut p = lower.to_vec();
    let mut remaining = 1.0 - lo_sum;
    for &i in &order {
        if remaining <= 0.0 {
            break;
        }
        let add = (upper[i] - lower[i]).max(0.0).min(remaining);
        p[i] += add;
        remaining -= add;
    }
    let value = p.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((p, value))
}

/// Per-level cell values `v_0 … v_T` (each of length `n + 1`, sink last).
#[derive(Debug, Clone, PartialEq)]
pub struct CellValues {
    levels: Vec<Vec<f64>>,
}

impl CellValues {
    pub fn horizon(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, l: usize) -> &[f64] {
        &self.levels[l]
    }

    /// `v_0` without the sink entry.
    pub fn v0(&self) -> &[f64] {
        let v = &self.levels[0];
        &v[..v.len() - 1]
    }

    /// Rows `cell,v0`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "cell,v0")?;
        for (i, v) in self.v0().iter().enumerate() {
            writeln!(out, "{i},{v:.17e}")?;
        }
        Ok(())
    }
}

fn indicator(flags: &[bool]) -> Vec<f64> {
    flags.iter().map(|&s| s as u8 as f64).chain(std::iter::once(0.0)).collect()
}

/// Robust value iteration over the interval model.
pub fn imp_value_iteration(model: &IntervalModel, part: &Partition, horizon: usize) -> Result<CellValues> {
    let n = part.len();
    check_dim(n, model.phat.len())?;
    let safe = part.safe_flags();
    let mut levels = vec![Vec::new(); horizon + 1];
    levels[horizon] = indicator(safe);
    for l in (0..horizon).rev() {
        let next = &levels[l + 1];
        let mut cur = vec![0.0; n + 1];
        for i in 0..n {
            if safe[i] {
                let (_, val) = imp_inner_min(&model.lower[i], &model.upper[i], next)?;
                cur[i] = val.clamp(0.0, 1.0);
            }
        }
        levels[l] = cur;
    }
    Ok(CellValues { levels })
}

/// Unmatched-mass and discretization parameters of the sub-simulation relation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsrParams {
    pub delta: Vec<f64>,
    pub eps_disc: f64,
}

impl SsrParams {
    pub fn new(delta: Vec<f64>, eps_disc: f64, part: &Partition) -> Result<Self> {
        check_dim(part.len(), delta.len())?;
        if delta.iter().any(|d| !(0.0..=1.0).contains(d)) {
            return Err(invalid("δ entries must lie in [0,1]"));
        }
        let h = part.max_half_diagonal();
        if !(eps_disc >= h * (1.0 - 1e-12)) {
            return Err(invalid(format!("ε_disc = {eps_disc} is below the largest cell half-diagonal {h}")));
        }
        Ok(Self { delta, eps_disc })
    }

    /// Same `δ` for every cell and `ε_disc` equal to the largest half-diagonal.
    pub fn uniform(delta: f64, part: &Partition) -> Result<Self> {
        Self::new(vec![delta; part.len()], part.max_half_diagonal(), part)
    }
}

/// Total-variation update `v_l(i) = 1(A_i ⊂ S)[p̂_iᵀ v_{l+1} − δ_i]₀¹`,
/// with base case `v_T(i) = 1_S(x̂_i)`.
pub fn ssr_value_iteration_with(probs: &CellProbabilities, part: &Partition, ssr: &SsrParams, horizon: usize) -> Result<CellValues> {
    let n = part.len();
    check_dim(n, probs.rows.len())?;
    check_dim(n, ssr.delta.len())?;
    let safe = part.safe_flags();
    let mut levels = vec![Vec::new(); horizon + 1];
    levels[horizon] = indicator(part.center_flags());
    for l in (0..horizon).rev() {
        let next = &levels[l + 1];
        let mut cur = vec![0.0; n + 1];
        for i in 0..n {
            if safe[i] {
                let s: f64 = probs.rows[i].iter().zip(next).map(|(p, v)| p * v).sum();
                cur[i] = (s - ssr.delta[i]).clamp(0.0, 1.0);
            }
        }
        levels[l] = cur;
    }
    Ok(CellValues { levels })
}

pub fn ssr_value_iteration(part: &Partition, dp: &DpModel, ssr: &SsrParams, horizon: usize) -> Result<CellValues> {
    let probs = empirical_cell_probs(part, dp)?;
    ssr_value_iteration_with(&probs, part, ssr, horizon)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AbstractionValue {
    pub value: f64,
    pub out_of_domain: bool,
}

/// `V_0(Π(x0))`, or zero with the out-of-domain flag outside the box.
pub fn evaluate_abstraction(values: &CellValues, part: &Partition, x0: &[f64]) -> AbstractionValue {
    match part.project(x0) {
        Some(i) => AbstractionValue { value: values.level(0)[i], out_of_domain: false },
        None => AbstractionValue { value: 0.0, out_of_domain: true },
    }
}
