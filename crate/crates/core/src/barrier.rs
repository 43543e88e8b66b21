//! Checking kernel-expansion barrier candidates against data-driven
//! one-step conditions.
//!
//! For `B(x) = Σ α_i k(x, c_i) ≥ 0` with `η ≥ sup_{X₀} B`, `γ ≤ inf_{X∖S} B`
//! and `β ≥ sup_S Σ_i w_i(x) B(x_+^{(i)}) − B(x) + εκ‖B‖`, the uniform safety
//! probability over `X₀` is at least `1 − (η + βT)/γ` whenever `γ > η ≥ 0`.
//! All suprema and infima are taken over finite grids.

use serde::{Deserialize, Serialize};

use crate::benchmark::{count_safe_rollouts, StochasticSystem};
use crate::dp::DpModel;
use crate::error::{check_dim, invalid, Error, Result};
use crate::io::parse_table;
use crate::kernels::{quadratic_form, KernelSpec, KAPPA};
use crate::points::PointSet;
use crate::region::{AxisBox, SafeRegion};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierCandidate {
    pub spec: KernelSpec,
    pub centers: PointSet,
    pub coefficients: Vec<f64>,
}

impl BarrierCandidate {
    pub fn new(spec: KernelSpec, centers: PointSet, coefficients: Vec<f64>) -> Result<Self> {
        check_dim(spec.dim(), centers.dim())?;
        check_dim(centers.len(), coefficients.len())?;
        if centers.is_empty() {
            return Err(invalid("barrier needs at least one center"));
        }
        Ok(Self { spec, centers, coefficients })
    }

    /// Rows `cx1..cxd,alpha`.
    pub fn from_csv(text: &str, spec: KernelSpec) -> Result<Self> {
        let table = parse_table(text)?;
        let d = spec.dim();
        let mut expected: Vec<String> = (1..=d).map(|j| format!("cx{j}")).collect();
        expected.push("alpha".into());
        if table.header != expected {
            return Err(Error::Parse { line: 0, message: format!("barrier file header must be {}", expected.join(",")) });
        }
        let mut data = Vec::new();
        let mut coef = Vec::new();
        for row in &table.rows {
            data.extend_from_slice(&row[..d]);
            coef.push(row[d]);
        }
        Self::new(spec, PointSet::new(d, data)?, coef)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.centers.rows().zip(&self.coefficients).map(|(c, a)| a * self.spec.eval_unchecked(x, c)).sum()
    }

    /// `√(αᵀ K_c α)`.
    pub fn rkhs_norm(&self) -> Result<f64> {
        let k = self.spec.gram(&self.centers)?;
        Ok(quadratic_form(&k, &self.coefficients).max(0.0).sqrt())
    }
}

/// Check grids: `domain` is gridded and split into safe and unsafe points;
/// `initial` is gridded separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierGrids {
    pub domain: AxisBox,
    pub domain_resolution: Vec<usize>,
    pub initial: AxisBox,
    pub initial_resolution: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BarrierReport {
    /// `max B` over the initial grid.
    pub eta: f64,
    /// `min B` over the unsafe grid.
    pub gamma: f64,
    /// Grid supremum of the one-step condition including the ε penalty.
    pub beta_sup: f64,
    /// `max(beta_sup, 0)`, the value used in the bound.
    pub beta: f64,
    pub horizon: usize,
    pub epsilon: f64,
    pub rkhs_norm: f64,
    /// `B ≥ 0` on every grid point.
    pub nonnegative: bool,
    /// `γ > η ≥ 0`.
    pub levels_ordered: bool,
    /// `1 − (η + βT)/γ`, present only when both conditions hold.
    pub bound: Option<f64>,
    pub initial_points: usize,
    pub safe_points: usize,
    pub unsafe_points: usize,
}

pub fn check_barrier(
    candidate: &BarrierCandidate,
    dp: &DpModel,
    region: &SafeRegion,
    grids: &BarrierGrids,
    horizon: usize,
) -> Result<BarrierReport> {
    let (gram, targets) = match (dp.gram(), dp.targets()) {
        (Some(g), Some(t)) => (g, t),
        _ => return Err(invalid("barrier checks need a model fitted on one-step pairs")),
    };
    if gram.spec() != &candidate.spec {
        return Err(invalid("barrier kernel differs from the transition model kernel"));
    }
    check_dim(region.dim(), candidate.spec.dim())?;
    let domain = grids.domain.grid(&grids.domain_resolution)?;
    let initial = grids.initial.grid(&grids.initial_resolution)?;
    let safe = domain.filter(|x| region.is_safe(x));
    let unsafe_pts = domain.filter(|x| !region.is_safe(x));
    if unsafe_pts.is_empty() {
        return Err(invalid("the unsafe grid is empty; enlarge the domain beyond the safe set"));
    }
    if safe.is_empty() {
        return Err(invalid("the safe grid is empty"));
    }

    let b_init: Vec<f64> = initial.rows().map(|x| candidate.eval(x)).collect();
    let b_safe: Vec<f64> = safe.rows().map(|x| candidate.eval(x)).collect();
    let b_unsafe: Vec<f64> = unsafe_pts.rows().map(|x| candidate.eval(x)).collect();
    let b_next: Vec<f64> = targets.rows().map(|x| candidate.eval(x)).collect();

    let norm = candidate.rkhs_norm()?;
    let penalty = dp.epsilon() * KAPPA * norm;
    let w = gram.weights_at_many(&safe)?;
    let drift = (0..safe.len())
        .map(|q| (0..b_next.len()).map(|j| w[(q, j)] * b_next[j]).sum::<f64>() - b_safe[q])
        .fold(f64::NEG_INFINITY, f64::max);

    let eta = b_init.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let gamma = b_unsafe.iter().copied().fold(f64::INFINITY, f64::min);
    let beta_sup = drift + penalty;
    let beta = beta_sup.max(0.0);
    let nonnegative = b_init.iter().chain(&b_safe).chain(&b_unsafe).all(|&b| b >= 0.0);
    let levels_ordered = gamma > eta && eta >= 0.0;
    let bound = (nonnegative && levels_ordered).then(|| 1.0 - (eta + beta * horizon as f64) / gamma);
    Ok(BarrierReport {
        eta,
        gamma,
        beta_sup,
        beta,
        horizon,
        epsilon: dp.epsilon(),
        rkhs_norm: norm,
        nonnegative,
        levels_ordered,
        bound,
        initial_points: initial.len(),
        safe_points: safe.len(),
        unsafe_points: unsafe_pts.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformMc {
    /// Minimum per-point Monte-Carlo safety estimate over the grid.
    pub value: f64,
    /// Binomial standard error at the minimizer.
    pub std_error: f64,
    pub argmin: Vec<f64>,
}

/// `min_{x₀ ∈ grid} P̂^S(x₀)`, a test oracle for uniform bounds.
pub fn uniform_mc_oracle<S: StochasticSystem + ?Sized>(
    system: &S,
    region: &SafeRegion,
    initial: &PointSet,
    horizon: usize,
    n_mc: u32,
    seed: u64,
) -> Result<UniformMc> {
    if n_mc == 0 || initial.is_empty() {
        return Err(invalid("oracle needs n_mc ≥ 1 and a nonempty grid"));
    }
    check_dim(system.dim(), initial.dim())?;
    let mut best: Option<(f64, usize)> = None;
    for (g, x0) in initial.rows().enumerate() {
        let p = count_safe_rollouts(system, region, x0, horizon, n_mc, seed, g as u64) as f64 / n_mc as f64;
        if best.is_none_or(|(b, _)| p < b) {
            best = Some((p, g));
        }
    }
    let (value, g) = best.expect("grid is nonempty");
    Ok(UniformMc {
        value,
        std_error: (value * (1.0 - value) / n_mc as f64).sqrt(),
        argmin: initial.row(g).to_vec(),
    })
}
