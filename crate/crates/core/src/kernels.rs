//! Gaussian ARD kernels and the kernel-ridge weight map
//! `w(x) = k_M(x)^T [K_M + M λ I]^{-1}` shared by every estimator.
//!
//! The regularized Gram matrix is factored once per [`GramSystem`] and
//! reused for all subsequent queries. Weights are returned raw: they may be
//! negative and need not sum to one.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::points::PointSet;

/// `sup_x sqrt(k(x, x))` for the Gaussian kernel.
pub const KAPPA: f64 = 1.0;

/// Gaussian kernel `exp(-½ Σ_j (x_j - y_j)² / σ_j²)` plus the ridge parameter λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    lengthscales: Vec<f64>,
    regularizer: f64,
}

impl KernelSpec {
    pub fn new(lengthscales: Vec<f64>, regularizer: f64) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(invalid("kernel needs at least one lengthscale"));
        }
        if lengthscales.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(invalid(format!("lengthscales must be positive, got {lengthscales:?}")));
        }
        if !(regularizer.is_finite() && regularizer > 0.0) {
            return Err(invalid(format!("regularizer must be positive, got {regularizer}")));
        }
        Ok(Self { lengthscales, regularizer })
    }

    /// Single bandwidth γ shared by all `dim` coordinates.
    pub fn isotropic(bandwidth: f64, dim: usize, regularizer: f64) -> Result<Self> {
        Self::new(vec![bandwidth; dim], regularizer)
    }

    /// Builds the kernel from squared lengthscales `σ_j²`, the form in which
    /// tuned hyperparameters are usually tabulated.
    pub fn from_squared_lengthscales(squared: &[f64], regularizer: f64) -> Result<Self> {
        if squared.iter().any(|s| !(*s > 0.0)) {
            return Err(invalid(format!("squared lengthscales must be positive, got {squared:?}")));
        }
        Self::new(squared.iter().map(|s| s.sqrt()).collect(), regularizer)
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn regularizer(&self) -> f64 {
        self.regularizer
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        check_dim(self.dim(), y.len())?;
        Ok(self.eval_unchecked(x, y))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for j in 0..x.len() {
            let d = (x[j] - y[j]) / self.lengthscales[j];
            acc += d * d;
        }
        (-0.5 * acc).exp()
    }

    /// `[k(a_i, b_j)]` as a dense `|a| × |b|` matrix.
    pub fn cross_matrix(&self, a: &PointSet, b: &PointSet) -> Result<Mat<f64>> {
        check_dim(self.dim(), a.dim())?;
        check_dim(self.dim(), b.dim())?;
        Ok(Mat::from_fn(a.len(), b.len(), |i, j| self.eval_unchecked(a.row(i), b.row(j))))
    }

    /// Symmetric Gram matrix of `points`, unit diagonal.
    pub fn gram(&self, points: &PointSet) -> Result<Mat<f64>> {
        check_dim(self.dim(), points.dim())?;
        let m = points.len();
        let mut k = Mat::<f64>::zeros(m, m);
        for i in 0..m {
            k[(i, i)] = 1.0;
            for j in 0..i {
                let v = self.eval_unchecked(points.row(i), points.row(j));
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(k)
    }
}

/// A fitted kernel-ridge system over `M` training inputs.
///
/// Holds the Gram matrix `K` and a Cholesky factor of `K + MλI`.
/// Immutable after construction.
pub struct GramSystem {
    spec: KernelSpec,
    inputs: PointSet,
    gram: Mat<f64>,
    factor: faer::linalg::solvers::Llt<f64>,
}

impl std::fmt::Debug for GramSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GramSystem")
            .field("spec", &self.spec)
            .field("size", &self.inputs.len())
            .finish()
    }
}

/// Factors `K + MλI` over the training inputs.
pub fn fit_weights(spec: &KernelSpec, inputs: &PointSet) -> Result<GramSystem> {
    if inputs.is_empty() {
        return Err(invalid("kernel system needs at least one training input"));
    }
    let gram = spec.gram(inputs)?;
    let m = inputs.len();
    let ridge = m as f64 * spec.regularizer;
    let mut reg = gram.clone();
    for i in 0..m {
        reg[(i, i)] += ridge;
    }
    let factor = reg.llt(Side::Lower).map_err(|e| {
        let pivot = match e {
            faer::linalg::cholesky::llt::factor::LltError::NonPositivePivot { index } => index,
        };
        Error::Factorization { pivot, size: m, ridge, max_diag: 1.0 + ridge }
    })?;
    Ok(GramSystem { spec: spec.clone(), inputs: inputs.clone(), gram, factor })
}

impl GramSystem {
    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn inputs(&self) -> &PointSet {
        &self.inputs
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn gram(&self) -> &Mat<f64> {
        &self.gram
    }

    /// `k_M(x) = [k(x, x_i)]_i`.
    pub fn kernel_vector(&self, query: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.spec.dim(), query.len())?;
        Ok(self.inputs.rows().map(|r| self.spec.eval_unchecked(query, r)).collect())
    }

    /// `[K + MλI]^{-1} v`.
    pub fn solve(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.len(), v.len())?;
        let rhs = Mat::from_fn(v.len(), 1, |i, _| v[i]);
        let x = self.factor.solve(&rhs);
        Ok((0..v.len()).map(|i| x[(i, 0)]).collect())
    }

    /// Solves with many right-hand sides stored as columns, in place.
    pub fn solve_columns(&self, rhs: &mut Mat<f64>) -> Result<()> {
        check_dim(self.len(), rhs.nrows())?;
        self.factor.solve_in_place(rhs.as_mut());
        Ok(())
    }

    /// `w(x) = k_M(x)^T [K + MλI]^{-1}`.
    pub fn weights_at(&self, query: &[f64]) -> Result<Vec<f64>> {
        let k = self.kernel_vector(query)?;
        self.solve(&k)
    }

    /// Weight rows for every query: a `Q × M` matrix with row `q` equal to `w(x_q)`.
    pub fn weights_at_many(&self, queries: &PointSet) -> Result<Mat<f64>> {
        let mut kt = self.spec.cross_matrix(&self.inputs, queries)?;
        self.factor.solve_in_place(kt.as_mut());
        Ok(kt.transpose().to_owned())
    }

    /// `k_M(x)^T c` for a coefficient vector `c`, e.g. `c = [K + MλI]^{-1} y`.
    pub fn expand(&self, coefficients: &[f64], query: &[f64]) -> Result<f64> {
        check_dim(self.len(), coefficients.len())?;
        check_dim(self.spec.dim(), query.len())?;
        Ok(self
            .inputs
            .rows()
            .zip(coefficients)
            .map(|(r, c)| c * self.spec.eval_unchecked(query, r))
            .sum())
    }

    /// RKHS norm of the ridge interpolant of `v`: `sqrt(αᵀ K α)` with
    /// `α = [K + MλI]^{-1} v`.
    pub fn representer_norm(&self, v: &[f64]) -> Result<f64> {
        let alpha = self.solve(v)?;
        Ok(quadratic_form(&self.gram, &alpha).max(0.0).sqrt())
    }
}

pub(crate) fn quadratic_form(k: &Mat<f64>, a: &[f64]) -> f64 {
    let n = a.len();
    let mut acc = 0.0;
    for j in 0..n {
        let col = k.col(j);
        let mut s = 0.0;
        for i in 0..n {
            s += col[i] * a[i];
        }
        acc += s * a[j];
    }
    acc
}
