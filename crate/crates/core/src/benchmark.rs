//! Stochastic systems, trajectory datasets and Monte-Carlo ground truth.
//!
//! The reference system is the non-Markovian planar oscillator
//!
//! ```text
//! x_{t+1} = x_t + h (x_{2,t}, x_{1,t}³/3 − x_{1,t} − x_{2,t}) + z_t
//! z_{t+1} = α (z_t + β_c tanh(γ_c x_{1,t})) + w_t,   w_t ~ N(0, σ²(1−α²) I)
//! ```
//!
//! with `z_0 ~ N(0, σ² I)`. The scalar coupling term is added to both latent
//! components. `α = 0` gives i.i.d. noise; `α → 1` gives long memory.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::points::PointSet;
use crate::region::{AxisBox, SafeRegion};
use crate::rng::{stream, Purpose, SimRng};

/// States beyond this magnitude are saturated and the trajectory flagged.
pub const SATURATION: f64 = 1e6;

/// One sampled state sequence `x_0, …, x_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    data: Vec<f64>,
    saturated: bool,
}

impl Trajectory {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.is_empty() || data.len() % dim != 0 {
            return Err(invalid("trajectory needs at least one state of the declared dimension"));
        }
        Ok(Self { dim, data, saturated: false })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored states, `T + 1`.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.len() - 1
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn initial(&self) -> &[f64] {
        self.state(0)
    }

    pub fn states(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// Whether the divergence guard clipped any state.
    pub fn saturated(&self) -> bool {
        self.saturated
    }

    fn push_saturating(&mut self, mut x: Vec<f64>) {
        for v in &mut x {
            if !v.is_finite() || v.abs() > SATURATION {
                *v = if *v < 0.0 { -SATURATION } else { SATURATION };
                self.saturated = true;
            }
        }
        self.data.extend_from_slice(&x);
    }
}

/// A discrete-time stochastic system that can be rolled out from a state.
pub trait StochasticSystem: Sync {
    fn dim(&self) -> usize;

    /// Samples `x_0 = x0, x_1, …, x_horizon`, drawing all noise from `rng`.
    fn simulate(&self, x0: &[f64], horizon: usize, rng: &mut SimRng) -> Trajectory;
}

/// Parameters of the non-Markovian oscillator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub h: f64,
    pub coupling_gain: f64,
    pub coupling_sharpness: f64,
    pub noise_scale: f64,
    pub alpha: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self { h: 0.1, coupling_gain: 0.12, coupling_sharpness: 1.0, noise_scale: 0.15, alpha: 0.0 }
    }
}

impl SynthParams {
    pub fn with_alpha(alpha: f64) -> Self {
        Self { alpha, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) {
            return Err(invalid(format!("time step must be positive, got {}", self.h)));
        }
        if !(self.noise_scale > 0.0) {
            return Err(invalid(format!("noise scale must be positive, got {}", self.noise_scale)));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(invalid(format!("alpha must lie in [0, 1), got {}", self.alpha)));
        }
        Ok(())
    }

    /// Rollout that also records the latent disturbance `z_0, …, z_{T-1}`.
    pub fn rollout(&self, x0: &[f64], horizon: usize, rng: &mut SimRng) -> (Trajectory, Vec<[f64; 2]>) {
        assert_eq!(x0.len(), 2, "synthetic system is planar");
        let sigma = self.noise_scale;
        let w_scale = sigma * (1.0 - self.alpha * self.alpha).sqrt();
        let mut z = [sigma * normal(rng), sigma * normal(rng)];
        let mut traj = Trajectory { dim: 2, data: Vec::with_capacity(2 * (horizon + 1)), saturated: false };
        traj.data.extend_from_slice(x0);
        let mut latent = Vec::with_capacity(horizon);
        let (mut x1, mut x2) = (x0[0], x0[1]);
        for _ in 0..horizon {
            latent.push(z);
            let n1 = x1 + self.h * x2 + z[0];
            let n2 = x2 + self.h * (x1 * x1 * x1 / 3.0 - x1 - x2) + z[1];
            let coupling = self.coupling_gain * (self.coupling_sharpness * x1).tanh();
            z = [
                self.alpha * (z[0] + coupling) + w_scale * normal(rng),
                self.alpha * (z[1] + coupling) + w_scale * normal(rng),
            ];
            traj.push_saturating(vec![n1, n2]);
            let last = traj.state(traj.len() - 1);
            x1 = last[0];
            x2 = last[1];
        }
        (traj, latent)
    }
}

impl StochasticSystem for SynthParams {
    fn dim(&self) -> usize {
        2
    }

    fn simulate(&self, x0: &[f64], horizon: usize, rng: &mut SimRng) -> Trajectory {
        self.rollout(x0, horizon, rng).0
    }
}

/// `x_{t+1} = a x_t + w_t`, `w_t ~ N(0, σ² I)`; a Markovian test system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSystem {
    pub gain: f64,
    pub noise_scale: f64,
    pub dim: usize,
}

impl StochasticSystem for LinearSystem {
    fn dim(&self) -> usize {
        self.dim
    }

    fn simulate(&self, x0: &[f64], horizon: usize, rng: &mut SimRng) -> Trajectory {
        let mut traj = Trajectory { dim: self.dim, data: x0.to_vec(), saturated: false };
        let mut x = x0.to_vec();
        for _ in 0..horizon {
            let next: Vec<f64> = x.iter().map(|v| self.gain * v + self.noise_scale * normal(rng)).collect();
            traj.push_saturating(next);
            x = traj.state(traj.len() - 1).to_vec();
        }
        traj
    }
}

#[inline]
fn normal(rng: &mut SimRng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

/// Uniform draw from a box.
pub fn sample_uniform(b: &AxisBox, rng: &mut SimRng) -> Vec<f64> {
    b.low()
        .iter()
        .zip(b.high())
        .map(|(l, h)| l + (h - l) * rng.random::<f64>())
        .collect()
}

/// `N` i.i.d. trajectories of common horizon `T`.
#[derive(Debug, Clone)]
pub struct TrajectorySet {
    trajectories: Vec<Trajectory>,
    pub seed: u64,
    pub params: Option<SynthParams>,
}

impl TrajectorySet {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        let first = trajectories.first().ok_or_else(|| invalid("trajectory set is empty"))?;
        let (dim, len) = (first.dim(), first.len());
        for t in &trajectories {
            check_dim(dim, t.dim())?;
            if t.len() != len {
                return Err(invalid("all trajectories must have the same horizon"));
            }
        }
        Ok(Self { trajectories, seed: 0, params: None })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.trajectories[0].dim()
    }

    pub fn horizon(&self) -> usize {
        self.trajectories[0].horizon()
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn get(&self, i: usize) -> &Trajectory {
        &self.trajectories[i]
    }

    pub fn initial_states(&self) -> PointSet {
        let mut data = Vec::with_capacity(self.len() * self.dim());
        for t in &self.trajectories {
            data.extend_from_slice(t.initial());
        }
        PointSet::new(self.dim(), data).expect("consistent dimensions")
    }

    /// `ρ^S(x^{(i)}) = min_t 1_S(x_t^{(i)})` for every trajectory.
    pub fn safety_labels(&self, region: &SafeRegion) -> Vec<bool> {
        self.trajectories.iter().map(|t| region.trajectory_safe(t.states())).collect()
    }

    /// Truncates every trajectory to its first `horizon + 1` states.
    pub fn truncated(&self, horizon: usize) -> Result<TrajectorySet> {
        if horizon > self.horizon() {
            return Err(invalid(format!("cannot extend horizon {} to {horizon}", self.horizon())));
        }
        let d = self.dim();
        let trajectories = self
            .trajectories
            .iter()
            .map(|t| Trajectory { dim: d, data: t.data[..(horizon + 1) * d].to_vec(), saturated: t.saturated })
            .collect();
        Ok(TrajectorySet { trajectories, seed: self.seed, params: self.params })
    }
}

/// Draws `n` trajectories with `x_0 ~ Uniform(initial)`. Trajectory `i` uses
/// its own stream, so the set is reproducible under any evaluation order.
pub fn gen_dataset<S: StochasticSystem + ?Sized>(
    system: &S,
    initial: &AxisBox,
    n: usize,
    horizon: usize,
    seed: u64,
) -> Result<TrajectorySet> {
    if n == 0 {
        return Err(invalid("dataset size must be at least 1"));
    }
    check_dim(system.dim(), initial.dim())?;
    let trajectories = (0..n)
        .map(|i| {
            let mut rng = stream(seed, Purpose::Trajectory, i as u64);
            let x0 = sample_uniform(initial, &mut rng);
            system.simulate(&x0, horizon, &mut rng)
        })
        .collect();
    let mut set = TrajectorySet::new(trajectories)?;
    set.seed = seed;
    Ok(set)
}

/// Synthetic-benchmark dataset with the parameter snapshot attached.
pub fn gen_synth_dataset(params: &SynthParams, region: &SafeRegion, n: usize, horizon: usize, seed: u64) -> Result<TrajectorySet> {
    params.validate()?;
    let mut set = gen_dataset(params, region.bounds(), n, horizon, seed)?;
    set.params = Some(*params);
    Ok(set)
}

/// One-step transitions `(x, x₊)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSet {
    pub sources: PointSet,
    pub targets: PointSet,
}

impl TransitionSet {
    pub fn new(sources: PointSet, targets: PointSet) -> Result<Self> {
        check_dim(sources.dim(), targets.dim())?;
        check_dim(sources.len(), targets.len())?;
        Ok(Self { sources, targets })
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }
}

/// How one-step training pairs are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairMode {
    /// Fresh single-step simulations from uniform starts.
    Iid,
    /// Consecutive pairs sliced out of existing trajectories.
    Dependent,
}

/// `count` independent transitions, each from its own uniform start.
pub fn iid_pairs<S: StochasticSystem + ?Sized>(system: &S, initial: &AxisBox, count: usize, seed: u64) -> Result<TransitionSet> {
    check_dim(system.dim(), initial.dim())?;
    let d = system.dim();
    let mut src = Vec::with_capacity(count * d);
    let mut dst = Vec::with_capacity(count * d);
    for i in 0..count {
        let mut rng = stream(seed, Purpose::IidPair, i as u64);
        let x0 = sample_uniform(initial, &mut rng);
        let t = system.simulate(&x0, 1, &mut rng);
        src.extend_from_slice(t.state(0));
        dst.extend_from_slice(t.state(1));
    }
    TransitionSet::new(PointSet::new(d, src)?, PointSet::new(d, dst)?)
}

/// All `N·T` consecutive pairs, or a seeded subsample of `count` of them
/// kept in their original order.
pub fn dependent_pairs(ts: &TrajectorySet, count: Option<usize>, seed: u64) -> Result<TransitionSet> {
    let (d, horizon) = (ts.dim(), ts.horizon());
    let available = ts.len() * horizon;
    let count = count.unwrap_or(available);
    if count > available {
        return Err(invalid(format!("requested {count} dependent pairs but only {available} exist")));
    }
    let mut chosen: Vec<usize> = (0..available).collect();
    if count < available {
        let mut rng = stream(seed, Purpose::PairSubsample, 0);
        for k in 0..count {
            let j = rng.random_range(k..available);
            chosen.swap(k, j);
        }
        chosen.truncate(count);
        chosen.sort_unstable();
    }
    let mut src = Vec::with_capacity(count * d);
    let mut dst = Vec::with_capacity(count * d);
    for idx in chosen {
        let t = ts.get(idx / horizon);
        let step = idx % horizon;
        src.extend_from_slice(t.state(step));
        dst.extend_from_slice(t.state(step + 1));
    }
    TransitionSet::new(PointSet::new(d, src)?, PointSet::new(d, dst)?)
}

/// Monte-Carlo safety probabilities on a grid of initial states.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthGrid {
    pub points: PointSet,
    pub safe_counts: Vec<u32>,
    pub n_mc: u32,
}

impl GroundTruthGrid {
    pub fn p_mc(&self) -> Vec<f64> {
        self.safe_counts.iter().map(|&c| c as f64 / self.n_mc as f64).collect()
    }

    pub fn len(&self) -> usize {
        self.safe_counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.safe_counts.is_empty()
    }

    /// Binomial standard error of each entry.
    pub fn std_errors(&self) -> Vec<f64> {
        self.p_mc()
            .into_iter()
            .map(|p| (p * (1.0 - p) / self.n_mc as f64).sqrt())
            .collect()
    }
}

/// Number of safe rollouts out of `n_mc` from `x0`, using stream `(seed, MC, index)`.
pub fn count_safe_rollouts<S: StochasticSystem + ?Sized>(
    system: &S,
    region: &SafeRegion,
    x0: &[f64],
    horizon: usize,
    n_mc: u32,
    seed: u64,
    index: u64,
) -> u32 {
    if !region.is_safe(x0) {
        return 0;
    }
    let mut rng = stream(seed, Purpose::MonteCarlo, index);
    (0..n_mc)
        .filter(|_| region.trajectory_safe(system.simulate(x0, horizon, &mut rng).states()))
        .count() as u32
}

/// `p_mc[g] = #{safe rollouts from grid point g} / n_mc`.
pub fn mc_ground_truth<S: StochasticSystem + ?Sized>(
    system: &S,
    region: &SafeRegion,
    grid: &PointSet,
    horizon: usize,
    n_mc: u32,
    seed: u64,
) -> Result<GroundTruthGrid> {
    if n_mc == 0 {
        return Err(invalid("n_mc must be at least 1"));
    }
    check_dim(system.dim(), grid.dim())?;
    check_dim(region.dim(), grid.dim())?;
    let safe_counts = grid
        .rows()
        .enumerate()
        .map(|(g, x0)| count_safe_rollouts(system, region, x0, horizon, n_mc, seed, g as u64))
        .collect();
    Ok(GroundTruthGrid { points: grid.clone(), safe_counts, n_mc })
}

/// Source of trajectories drawn from the true law, e.g. for L₂(μ_T) norms.
pub trait TrajectorySource {
    fn draw(&self, count: usize, seed: u64) -> Result<Vec<Trajectory>>;
}

/// Fresh simulations from uniform initial states.
pub struct Simulator<'a, S: ?Sized> {
    pub system: &'a S,
    pub initial: AxisBox,
    pub horizon: usize,
}

impl<S: StochasticSystem + ?Sized> TrajectorySource for Simulator<'_, S> {
    fn draw(&self, count: usize, seed: u64) -> Result<Vec<Trajectory>> {
        check_dim(self.system.dim(), self.initial.dim())?;
        Ok((0..count)
            .map(|i| {
                let mut rng = stream(seed, Purpose::HeldOut, i as u64);
                let x0 = sample_uniform(&self.initial, &mut rng);
                self.system.simulate(&x0, self.horizon, &mut rng)
            })
            .collect())
    }
}

/// Held-out trajectories, subsampled without replacement.
impl TrajectorySource for TrajectorySet {
    fn draw(&self, count: usize, seed: u64) -> Result<Vec<Trajectory>> {
        if count > self.len() {
            return Err(invalid(format!("requested {count} held-out trajectories, only {} stored", self.len())));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        let mut rng = stream(seed, Purpose::HeldOut, 0);
        for k in 0..count {
            let j = rng.random_range(k..idx.len());
            idx.swap(k, j);
        }
        Ok(idx[..count].iter().map(|&i| self.trajectories[i].clone()).collect())
    }
}
