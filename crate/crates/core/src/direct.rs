//! Direct, non-recursive safety estimation.
//!
//! A single kernel regression maps initial states onto whole-trajectory
//! safety labels `ρ^S(x_{0:T}) = min_t 1_S(x_t)`:
//!
//! ```text
//! P^S(x) ≥ Σ_{i : x^{(i)}_t ∈ S ∀t} w_i(x) − (ε₁(x) + ε₂ + ε₃)
//! ```
//!
//! The Gram system lives on initial states only, so it does not depend on
//! the horizon; changing `T` only changes the labels.
//!
//! The error terms use the Gaussian mollifier
//! `K_γ = Σ_{j=1}^r C(r,j)(−1)^{1−j} · N(0, (jγ/2)² I)` on trajectory space.
//! Because each mixture component is a product Gaussian and `ρ^S` is a
//! product of per-step indicators, the smoothed functional factorizes over
//! time and each factor is a signed sum of Gaussian box probabilities.

use serde::{Deserialize, Serialize};

use crate::benchmark::{Trajectory, TrajectorySet, TrajectorySource};
use crate::error::{check_dim, invalid, Error, Result};
use crate::kernels::{fit_weights, GramSystem, KernelSpec, KAPPA};
use crate::points::PointSet;
use crate::region::{AxisBox, SafeRegion};

/// Obstacle count above which inclusion–exclusion (2^k terms) is refused.
const MAX_OBSTACLES: usize = 20;

/// Robustness parameters and smoothing configuration for the error terms.
///
/// All terms vanish in the default configuration (`ε = 0`, vanishing
/// bandwidth), which is the setting used for point estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    /// Ambiguity radius ε of the embedding.
    pub epsilon: f64,
    /// Mollifier bandwidth `γ_N`.
    pub bandwidth: f64,
    /// `γ / γ_N`.
    pub bandwidth_ratio: f64,
    /// Smoothing order `r = ⌊s⌋ + 1`.
    pub order: u32,
    /// User-supplied bound on the RKHS norm of the smoothed (or robustness)
    /// functional. Not computed internally.
    pub norm_bound: f64,
}

impl Default for ErrorBudget {
    fn default() -> Self {
        Self { epsilon: 0.0, bandwidth: 1e-9, bandwidth_ratio: 1.0, order: 1, norm_bound: 0.0 }
    }
}

impl ErrorBudget {
    /// `γ_N = N^{−β} γ` and the corresponding ratio `γ / γ_N = N^β`.
    pub fn from_rate(gamma: f64, beta_exp: f64, n: usize, smoothness: f64) -> Result<Self> {
        if !(gamma > 0.0 && beta_exp > 0.0 && smoothness > 0.0) || n == 0 {
            return Err(invalid("γ, β and s must be positive and N ≥ 1"));
        }
        let ratio = (n as f64).powf(beta_exp);
        Ok(Self {
            bandwidth: gamma / ratio,
            bandwidth_ratio: ratio,
            order: smoothness.floor() as u32 + 1,
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.norm_bound >= 0.0) {
            return Err(invalid("ε and the norm bound must be nonnegative"));
        }
        if !(self.bandwidth > 0.0 && self.bandwidth_ratio > 0.0) || self.order == 0 {
            return Err(invalid("bandwidth, bandwidth ratio and order must be positive"));
        }
        Ok(())
    }

    pub fn mollifier(&self) -> Mollifier {
        Mollifier { bandwidth: self.bandwidth, order: self.order }
    }
}

/// The mixture mollifier `K_{γ_N}` of order `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mollifier {
    pub bandwidth: f64,
    pub order: u32,
}

impl Mollifier {
    /// `(weight, per-coordinate std)` of each Gaussian component; weights sum to one.
    pub fn components(&self) -> Vec<(f64, f64)> {
        let r = self.order as u64;
        (1..=r)
            .map(|j| {
                let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
                (sign * binomial(r, j), j as f64 * self.bandwidth / 2.0)
            })
            .collect()
    }

    /// `ρ̃^S(x_{0:T}) = (K_γ * ρ^S)(x_{0:T})` in closed form.
    pub fn smoothed_safety(&self, region: &SmoothedRegion, traj: &Trajectory) -> f64 {
        self.components()
            .into_iter()
            .map(|(w, std)| w * traj.states().map(|x| region.gaussian_mass(x, std)).product::<f64>())
            .sum()
    }
}

fn binomial(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// The safe set as a signed sum of boxes, `1_S = Σ_k s_k 1_{B_k}`
/// (bounds minus inclusion–exclusion over clipped obstacles).
#[derive(Debug, Clone)]
pub struct SmoothedRegion {
    terms: Vec<(f64, AxisBox)>,
}

impl SmoothedRegion {
    pub fn new(region: &SafeRegion) -> Result<Self> {
        let obstacles = region.clipped_obstacles();
        if obstacles.len() > MAX_OBSTACLES {
            return Err(Error::UnsupportedRegion(format!(
                "{} obstacles exceed the inclusion–exclusion limit of {MAX_OBSTACLES}",
                obstacles.len()
            )));
        }
        let mut terms = vec![(1.0, region.bounds().clone())];
        for mask in 1u32..(1 << obstacles.len()) {
            let mut acc: Option<AxisBox> = Some(region.bounds().clone());
            for (k, o) in obstacles.iter().enumerate() {
                if mask & (1 << k) != 0 {
                    acc = acc.and_then(|a| a.intersection(o));
                }
            }
            if let Some(b) = acc {
                let sign = if mask.count_ones() % 2 == 1 { -1.0 } else { 1.0 };
                terms.push((sign, b));
            }
        }
        Ok(Self { terms })
    }

    /// `P(Y ∈ S)` for `Y ~ N(x, std² I)`.
    pub fn gaussian_mass(&self, x: &[f64], std: f64) -> f64 {
        self.terms.iter().map(|(s, b)| s * box_mass(b, x, std)).sum()
    }
}

fn box_mass(b: &AxisBox, x: &[f64], std: f64) -> f64 {
    b.low()
        .iter()
        .zip(b.high())
        .zip(x)
        .map(|((lo, hi), xi)| normal_interval((lo - xi) / std, (hi - xi) / std))
        .product()
}

/// `Φ(b) − Φ(a)` for `a ≤ b`, avoiding cancellation in the tails.
pub(crate) fn normal_interval(a: f64, b: f64) -> f64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    if a >= 0.0 {
        0.5 * (libm::erfc(a * s) - libm::erfc(b * s))
    } else if b <= 0.0 {
        0.5 * (libm::erfc(-b * s) - libm::erfc(-a * s))
    } else {
        0.5 * (libm::erf(b * s) - libm::erf(a * s))
    }
}

/// Kernel regression from initial states onto trajectory safety labels.
pub struct DirectModel {
    gram: GramSystem,
    labels: Vec<f64>,
    coefficients: Vec<f64>,
    trajectories: Vec<Trajectory>,
    horizon: usize,
    region: SafeRegion,
}

impl std::fmt::Debug for DirectModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DirectModel")
            .field("n", &self.labels.len())
            .field("horizon", &self.horizon)
            .field("kernel", self.gram.spec())
            .finish()
    }
}

pub fn fit_direct(spec: &KernelSpec, ts: &TrajectorySet, region: &SafeRegion) -> Result<DirectModel> {
    check_dim(region.dim(), ts.dim())?;
    let labels: Vec<f64> = ts.safety_labels(region).into_iter().map(|s| s as u8 as f64).collect();
    let gram = fit_weights(spec, &ts.initial_states())?;
    let coefficients = gram.solve(&labels)?;
    Ok(DirectModel {
        gram,
        labels,
        coefficients,
        trajectories: ts.trajectories().to_vec(),
        horizon: ts.horizon(),
        region: region.clone(),
    })
}

impl DirectModel {
    pub fn gram(&self) -> &GramSystem {
        &self.gram
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn region(&self) -> &SafeRegion {
        &self.region
    }

    pub fn weights_at(&self, x0: &[f64]) -> Result<Vec<f64>> {
        self.gram.weights_at(x0)
    }

    /// `Σ_i w_i(x0) ρ^S(x^{(i)})`, unclamped.
    pub fn predict(&self, x0: &[f64]) -> Result<f64> {
        self.gram.expand(&self.coefficients, x0)
    }

    pub fn predict_many(&self, points: &PointSet) -> Result<Vec<f64>> {
        points.rows().map(|x| self.predict(x)).collect()
    }

    /// `Σ_i w_i(x0) labels_i` for arbitrary labels on the same Gram system.
    pub fn predict_labels(&self, labels: &[f64], x0: &[f64]) -> Result<f64> {
        let w = self.gram.weights_at(x0)?;
        check_dim(w.len(), labels.len())?;
        Ok(w.iter().zip(labels).map(|(a, b)| a * b).sum())
    }

    fn stored_trajectories(&self) -> Result<&[Trajectory]> {
        if self.trajectories.is_empty() {
            return Err(invalid("model was loaded without trajectories; refit to evaluate trajectory functionals"));
        }
        Ok(&self.trajectories)
    }

    /// `Σ_i w_i(x0) ρ̃(x^{(i)}) − ε κ ‖ρ̃‖` for a robustness functional
    /// satisfying `ρ̃ ≤ ρ^S` pointwise (caller's responsibility).
    pub fn predict_quantitative(
        &self,
        robustness: &dyn Fn(&Trajectory) -> f64,
        x0: &[f64],
        budget: &ErrorBudget,
    ) -> Result<f64> {
        let values: Vec<f64> = self.stored_trajectories()?.iter().map(robustness).collect();
        Ok(self.predict_labels(&values, x0)? - budget.epsilon * KAPPA * budget.norm_bound)
    }

    /// `ρ̃^S_N` evaluated on every stored trajectory.
    pub fn smoothed_labels(&self, budget: &ErrorBudget) -> Result<Vec<f64>> {
        budget.validate()?;
        let region = SmoothedRegion::new(&self.region)?;
        let m = budget.mollifier();
        Ok(self.stored_trajectories()?.iter().map(|t| m.smoothed_safety(&region, t)).collect())
    }

    /// `ε₁(x) = |Σ_i w_i(x)(ρ^S(x^{(i)}) − ρ̃^S_N(x^{(i)}))|`.
    pub fn eps1(&self, budget: &ErrorBudget, x0: &[f64]) -> Result<f64> {
        let smoothed = self.smoothed_labels(budget)?;
        let diff: Vec<f64> = self.labels.iter().zip(&smoothed).map(|(a, b)| a - b).collect();
        Ok(self.predict_labels(&diff, x0)?.abs())
    }

    /// Monte-Carlo estimate of `ε₃ = ‖ρ̃^S_N − ρ^S‖_{L₂(μ_T)}` from `n_mc`
    /// trajectories of the true law.
    ///
    /// When `source` is a held-out split of the training data the estimate
    /// inherits that split's sampling bias.
    pub fn eps3(&self, budget: &ErrorBudget, source: &dyn TrajectorySource, n_mc: usize, seed: u64) -> Result<Eps3Estimate> {
        if n_mc == 0 {
            return Err(invalid("eps3 needs at least one trajectory"));
        }
        budget.validate()?;
        let region = SmoothedRegion::new(&self.region)?;
        let m = budget.mollifier();
        let squares: Vec<f64> = source
            .draw(n_mc, seed)?
            .iter()
            .map(|t| {
                let rho = self.region.trajectory_safe(t.states()) as u8 as f64;
                (m.smoothed_safety(&region, t) - rho).powi(2)
            })
            .collect();
        Ok(Eps3Estimate::from_squares(&squares))
    }

    /// Point estimate minus all three error terms.
    pub fn certified_estimate(&self, x0: &[f64], budget: &ErrorBudget, eps3: &Eps3Estimate) -> Result<f64> {
        let e2 = eps2(budget, budget.norm_bound, self.region.dim(), self.horizon);
        Ok(self.predict(x0)? - self.eps1(budget, x0)? - e2 - eps3.value)
    }

    pub fn to_file(&self) -> DirectModelFile {
        DirectModelFile {
            kernel: self.gram.spec().clone(),
            horizon: self.horizon,
            initial_states: self.gram.inputs().rows().map(|r| r.to_vec()).collect(),
            labels: self.labels.clone(),
            region: self.region.clone(),
        }
    }
}

/// `ε₂ = ε κ ‖ρ̃‖_{H_{γ_N}} (γ/γ_N)^{d(T+1)/2}`.
pub fn eps2(budget: &ErrorBudget, norm_smoothed: f64, dim: usize, horizon: usize) -> f64 {
    let exponent = (dim * (horizon + 1)) as f64 / 2.0;
    budget.epsilon * KAPPA * norm_smoothed * budget.bandwidth_ratio.powf(exponent)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eps3Estimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl Eps3Estimate {
    /// `sqrt(mean(d²))` with a delta-method standard error.
    fn from_squares(squares: &[f64]) -> Self {
        let n = squares.len() as f64;
        let mean = squares.iter().sum::<f64>() / n;
        let var = if squares.len() > 1 {
            squares.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let value = mean.sqrt();
        let se_mean = (var / n).sqrt();
        let std_error = if value > 0.0 { se_mean / (2.0 * value) } else { se_mean.sqrt() };
        Self { value, std_error, samples: squares.len() }
    }
}

/// On-disk form of a direct model. The factorization is recomputed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectModelFile {
    pub kernel: KernelSpec,
    pub horizon: usize,
    pub initial_states: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub region: SafeRegion,
}

impl DirectModelFile {
    /// Refits the Gram system. Trajectory functionals (ε-terms,
    /// robustness sums) are unavailable on the loaded model.
    pub fn load(&self) -> Result<DirectModel> {
        let inputs = PointSet::from_rows(self.kernel.dim(), &self.initial_states)?;
        check_dim(inputs.len(), self.labels.len())?;
        let gram = fit_weights(&self.kernel, &inputs)?;
        let coefficients = gram.solve(&self.labels)?;
        Ok(DirectModel {
            gram,
            labels: self.labels.clone(),
            coefficients,
            trajectories: Vec::new(),
            horizon: self.horizon,
            region: self.region.clone(),
        })
    }
}
