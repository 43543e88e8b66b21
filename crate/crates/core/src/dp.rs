//! Recursive (dynamic-programming) safety estimation from one-step pairs.
//!
//! With one-step samples `(x^{(i)}, x_+^{(i)})` and ridge weights `w`, the
//! value functions are represented by their values at the successors:
//!
//! ```text
//! v_T = 1_S(x_+)
//! v_l = 1_S(x_+) ⊙ clamp(M v_{l+1} − εκ‖V_{l+1}‖, 0, 1),   M_ij = w_j(x_+^{(i)})
//! ```
//!
//! and `P(x_0) ≈ 1_S(x_0) · clamp(w(x_0)ᵀ v_1 − εκ‖V_1‖, 0, 1)`.

use std::io::Write;

use crate::benchmark::TransitionSet;
use crate::error::{check_dim, invalid, Error, Result};
use crate::kernels::{fit_weights, GramSystem, KernelSpec, KAPPA};
use crate::points::PointSet;
use crate::region::SafeRegion;

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 10_000;

/// A one-step transfer operator on sample values.
pub struct DpModel {
    gram: Option<GramSystem>,
    targets: Option<PointSet>,
    safe_next: Vec<bool>,
    /// Row-major `n × n`.
    transfer: Vec<f64>,
    n: usize,
    epsilon: f64,
    region: Option<SafeRegion>,
}

impl std::fmt::Debug for DpModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DpModel").field("n", &self.n).field("epsilon", &self.epsilon).finish()
    }
}

pub fn fit_dp(spec: &KernelSpec, pairs: &TransitionSet, region: &SafeRegion, epsilon: f64) -> Result<DpModel> {
    if !(epsilon >= 0.0) {
        return Err(invalid("ε must be nonnegative"));
    }
    check_dim(region.dim(), pairs.sources.dim())?;
    let gram = fit_weights(spec, &pairs.sources)?;
    let w = gram.weights_at_many(&pairs.targets)?;
    let n = pairs.len();
    let mut transfer = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            transfer.push(w[(i, j)]);
        }
    }
    let safe_next = pairs.targets.rows().map(|x| region.is_safe(x)).collect();
    Ok(DpModel { gram: Some(gram), targets: Some(pairs.targets.clone()), safe_next, transfer, n, epsilon, region: Some(region.clone()) })
}

impl DpModel {
    /// A finite chain with transition matrix `p` (rows) and safe-state mask.
    /// The norm term uses the Euclidean norm of the value vector.
    pub fn from_chain(p: &[Vec<f64>], safe: &[bool], epsilon: f64) -> Result<Self> {
        let n = p.len();
        check_dim(n, safe.len())?;
        if n == 0 {
            return Err(invalid("empty chain"));
        }
        if !(epsilon >= 0.0) {
            return Err(invalid("ε must be nonnegative"));
        }
        let mut transfer = Vec::with_capacity(n * n);
        for row in p {
            check_dim(n, row.len())?;
            transfer.extend_from_slice(row);
        }
        Ok(Self { gram: None, targets: None, safe_next: safe.to_vec(), transfer, n, epsilon, region: None })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Successor states `x_+^{(i)}`; `None` for explicit chains.
    pub fn targets(&self) -> Option<&PointSet> {
        self.targets.as_ref()
    }

    pub fn gram(&self) -> Option<&GramSystem> {
        self.gram.as_ref()
    }

    pub fn safe_next(&self) -> &[bool] {
        &self.safe_next
    }

    /// Entry `(i, j)` of the transfer matrix.
    pub fn transfer(&self, i: usize, j: usize) -> f64 {
        self.transfer[i * self.n + j]
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(invalid("ε must be nonnegative"));
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    fn matvec(&self, v: &[f64]) -> Vec<f64> {
        self.transfer.chunks_exact(self.n).map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }

    fn norm(&self, v: &[f64]) -> Result<f64> {
        match &self.gram {
            Some(g) => g.representer_norm(v),
            None => Ok(v.iter().map(|x| x * x).sum::<f64>().sqrt()),
        }
    }

    fn penalty(&self, v: &[f64]) -> Result<f64> {
        if self.epsilon == 0.0 {
            return Ok(0.0);
        }
        Ok(self.epsilon * KAPPA * self.norm(v)?)
    }

    fn step(&self, next: &[f64]) -> Result<Vec<f64>> {
        let pen = self.penalty(next)?;
        Ok(self
            .matvec(next)
            .into_iter()
            .zip(&self.safe_next)
            .map(|(m, &s)| if s { (m - pen).clamp(0.0, 1.0) } else { 0.0 })
            .collect())
    }

    /// Runs the backward recursion for horizon `T`, keeping every level.
    pub fn backward_value(&self, horizon: usize) -> Result<ValueStack> {
        let mut levels = vec![Vec::new(); horizon + 1];
        levels[horizon] = self.safe_next.iter().map(|&s| s as u8 as f64).collect();
        for l in (0..horizon).rev() {
            levels[l] = self.step(&levels[l + 1])?;
        }
        Ok(ValueStack { levels })
    }

    /// `V_0(x_0)`.
    pub fn evaluate_dp(&self, stack: &ValueStack, x0: &[f64]) -> Result<f64> {
        let pts = PointSet::from_rows(x0.len(), &[x0])?;
        Ok(self.evaluate_dp_many(stack, &pts)?[0])
    }

    pub fn evaluate_dp_many(&self, stack: &ValueStack, points: &PointSet) -> Result<Vec<f64>> {
        let (gram, region) = match (&self.gram, &self.region) {
            (Some(g), Some(r)) => (g, r),
            _ => return Err(invalid("chain models are evaluated through ValueStack::level(0)")),
        };
        check_dim(region.dim(), points.dim())?;
        let safe: Vec<bool> = points.rows().map(|x| region.is_safe(x)).collect();
        if stack.horizon() == 0 {
            return Ok(safe.iter().map(|&s| s as u8 as f64).collect());
        }
        let v1 = stack.level(1);
        let pen = self.penalty(v1)?;
        let w = gram.weights_at_many(points)?;
        Ok((0..points.len())
            .map(|q| {
                if !safe[q] {
                    return 0.0;
                }
                let s: f64 = (0..self.n).map(|j| w[(q, j)] * v1[j]).sum();
                (s - pen).clamp(0.0, 1.0)
            })
            .collect())
    }

    /// Spectral radius of `diag(1_S(x_+)) M` by power iteration, and the
    /// resulting decay factor `ρ^T`.
    ///
    /// Besides the Rayleigh quotient, each step fits `A²x ≈ a·Ax + b·x`, which
    /// converges when the dominant eigenvalues are a complex-conjugate or
    /// `±λ` pair; `ρ` is then the largest root modulus of `μ² − aμ − b`.
    pub fn spectral_decay(&self, horizon: usize) -> Result<SpectralDecay> {
        let masked = |v: &[f64]| -> Vec<f64> {
            self.matvec(v).into_iter().zip(&self.safe_next).map(|(m, &s)| if s { m } else { 0.0 }).collect()
        };
        let n = self.n;
        let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.01 * ((i * 7919) % 13) as f64).collect();
        normalize(&mut x);
        let mut y = masked(&x);
        let mut estimate = 0.0;
        for it in 1..=POWER_MAX_ITER {
            let ynorm = dot(&y, &y).sqrt();
            if ynorm == 0.0 {
                return Ok(SpectralDecay::new(0.0, it, horizon));
            }
            let lambda = dot(&x, &y);
            let resid = y.iter().zip(&x).map(|(a, b)| (a - lambda * b).powi(2)).sum::<f64>().sqrt();
            if resid <= POWER_TOL * lambda.abs().max(f64::MIN_POSITIVE) {
                return Ok(SpectralDecay::new(lambda.abs(), it, horizon));
            }
            let z = masked(&y);
            if let Some(radius) = pair_radius(&x, &y, &z) {
                return Ok(SpectralDecay::new(radius, it, horizon));
            }
            estimate = ynorm;
            x = y.iter().map(|v| v / ynorm).collect();
            y = z.into_iter().map(|v| v / ynorm).collect();
        }
        Err(Error::NoConvergence { iterations: POWER_MAX_ITER, estimate, last_iterate: x })
    }
}

/// Largest root modulus of the two-term recurrence `z ≈ a·y + b·x`, if the
/// least-squares fit is well posed and its residual is below tolerance.
fn pair_radius(x: &[f64], y: &[f64], z: &[f64]) -> Option<f64> {
    let (yy, xy, xx) = (dot(y, y), dot(x, y), dot(x, x));
    let det = yy * xx - xy * xy;
    if det <= 1e-12 * yy * xx {
        return None;
    }
    let (yz, xz) = (dot(y, z), dot(x, z));
    let a = (yz * xx - xz * xy) / det;
    let b = (xz * yy - yz * xy) / det;
    let resid = z.iter().zip(y).zip(x).map(|((zi, yi), xi)| (zi - a * yi - b * xi).powi(2)).sum::<f64>().sqrt();
    if resid > POWER_TOL * dot(z, z).sqrt() {
        return None;
    }
    let disc = a * a + 4.0 * b;
    Some(if disc >= 0.0 { (a.abs() + disc.sqrt()) / 2.0 } else { (-b).sqrt() })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SpectralDecay {
    pub radius: f64,
    pub iterations: usize,
    /// `ρ^T`.
    pub bound: f64,
}

impl SpectralDecay {
    fn new(radius: f64, iterations: usize, horizon: usize) -> Self {
        Self { radius, iterations, bound: radius.powi(horizon as i32) }
    }
}

/// Sample values `v_0, …, v_T` of the backward recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueStack {
    levels: Vec<Vec<f64>>,
}

impl ValueStack {
    pub fn horizon(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, l: usize) -> &[f64] {
        &self.levels[l]
    }

    /// Rows `level,i,v`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "level,i,v")?;
        for (l, vals) in self.levels.iter().enumerate() {
            for (i, v) in vals.iter().enumerate() {
                writeln!(out, "{l},{i},{v:.17e}")?;
            }
        }
        Ok(())
    }
}
