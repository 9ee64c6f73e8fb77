//! Ridge and min-norm estimators in kernel form, θ̂ = Xᵀ(XXᵀ + nλI)†y.
//!
//! All solves go through one symmetric eigendecomposition of XXᵀ, shared
//! along a λ-path.

use faer::MatRef;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, SymEigen};

/// Relative eigenvalue cutoff of the pseudoinverse at λ = 0.
pub const PINV_RTOL: f64 = 1e-12;

#[derive(Clone, Debug, Serialize)]
pub struct RidgeFit {
    pub theta_hat: Vec<f64>,
    pub lambda: f64,
    /// ‖Xθ̂ − y‖.
    pub residual_norm: f64,
    /// μ₁/μₙ of XXᵀ + nλI (infinite when singular).
    pub gram_condition: f64,
    /// Forward-error scale of the solve, ε·n·(effective condition number).
    pub solver_tolerance: f64,
    /// Dual coefficients c with θ̂ = Xᵀc.
    pub dual: Vec<f64>,
}

/// Eigendecomposition of A = XXᵀ = U diag(μ) Uᵀ.
#[derive(Clone, Debug)]
pub struct GramFactor {
    n: usize,
    eig: SymEigen,
    cutoff: f64,
}

impl GramFactor {
    pub fn new(x: MatRef<'_, f64>) -> Result<Self> {
        linalg::check_finite("design matrix", linalg::mat_values(x))?;
        if x.nrows() == 0 {
            return Err(Error::invalid("X", "needs at least one row"));
        }
        let a = linalg::gram(x);
        let eig = linalg::sym_eigen(a.as_ref())?;
        let cutoff = PINV_RTOL * eig.values[0].max(0.0);
        Ok(GramFactor {
            n: x.nrows(),
            eig,
            cutoff,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// μ₁ ≥ … ≥ μₙ of XXᵀ.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eig.values
    }

    pub fn eigenvectors(&self) -> MatRef<'_, f64> {
        self.eig.vectors.as_ref()
    }

    /// Eigenvalues with those below the cutoff set to zero.
    pub fn clipped_eigenvalues(&self) -> Vec<f64> {
        self.eig
            .values
            .iter()
            .map(|&m| if m > self.cutoff { m } else { 0.0 })
            .collect()
    }

    pub fn rank(&self) -> usize {
        self.eig
            .values
            .iter()
            .filter(|&&m| m > self.cutoff && m > 0.0)
            .count()
    }

    /// Diagonal of (diag(μ) + nλI)† in the eigenbasis.
    pub fn resolvent(&self, lambda: f64) -> Vec<f64> {
        let shift = self.n as f64 * lambda;
        self.clipped_eigenvalues()
            .into_iter()
            .map(|m| {
                let d = m + shift;
                if d > 0.0 && (lambda > 0.0 || m > 0.0) {
                    1.0 / d
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn condition(&self, lambda: f64) -> f64 {
        let mu = self.clipped_eigenvalues();
        let shift = self.n as f64 * lambda;
        (mu[0] + shift) / (mu[self.n - 1] + shift)
    }

    /// Uᵀv.
    pub fn rotate(&self, v: &[f64]) -> Vec<f64> {
        linalg::matvec_t(self.eigenvectors(), v)
    }

    /// Uv.
    pub fn unrotate(&self, v: &[f64]) -> Vec<f64> {
        linalg::matvec(self.eigenvectors(), v)
    }

    fn solve_rotated(&self, x: MatRef<'_, f64>, uty: &[f64], y: &[f64], lambda: f64) -> RidgeFit {
        let r = self.resolvent(lambda);
        let c_rot: Vec<f64> = uty.iter().zip(&r).map(|(a, b)| a * b).collect();
        let dual = self.unrotate(&c_rot);
        let theta_hat = linalg::matvec_t(x, &dual);
        let fitted = linalg::matvec(x, &theta_hat);
        let residual_norm = fitted
            .iter()
            .zip(y)
            .map(|(f, t)| (f - t) * (f - t))
            .sum::<f64>()
            .sqrt();
        let gram_condition = self.condition(lambda);
        let shift = self.n as f64 * lambda;
        let mu = self.clipped_eigenvalues();
        let smallest_kept = mu
            .iter()
            .rev()
            .map(|m| m + shift)
            .find(|&d| d > 0.0)
            .unwrap_or(1.0);
        let effective = (mu[0] + shift) / smallest_kept;
        RidgeFit {
            theta_hat,
            lambda,
            residual_norm,
            gram_condition,
            solver_tolerance: f64::EPSILON * self.n as f64 * effective,
            dual,
        }
    }
}

fn check_inputs(x: MatRef<'_, f64>, y: &[f64]) -> Result<()> {
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "y has length {} but X has {} rows",
            y.len(),
            x.nrows()
        )));
    }
    linalg::check_finite("labels", y.iter().copied())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            "lambda",
            format!("must be non-negative and finite, got {lambda}"),
        ))
    }
}

pub fn fit_ridge(x: MatRef<'_, f64>, y: &[f64], lambda: f64) -> Result<RidgeFit> {
    check_lambda(lambda)?;
    check_inputs(x, y)?;
    let f = GramFactor::new(x)?;
    let uty = f.rotate(y);
    Ok(f.solve_rotated(x, &uty, y, lambda))
}

/// The ridgeless estimator Xᵀ(XXᵀ)†y.
pub fn fit_minnorm(x: MatRef<'_, f64>, y: &[f64]) -> Result<RidgeFit> {
    fit_ridge(x, y, 0.0)
}

/// One fit per λ, sharing a single factorization of XXᵀ.
pub fn ridge_path(x: MatRef<'_, f64>, y: &[f64], grid: &[f64]) -> Result<Vec<RidgeFit>> {
    if grid.is_empty() {
        return Err(Error::invalid("lambda_grid", "must be non-empty"));
    }
    for &l in grid {
        check_lambda(l)?;
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("lambda_grid", "must be sorted increasingly"));
    }
    check_inputs(x, y)?;
    let f = GramFactor::new(x)?;
    ridge_path_with(&f, x, y, grid)
}

/// As [`ridge_path`] with a precomputed factorization of XXᵀ.
pub fn ridge_path_with(
    f: &GramFactor,
    x: MatRef<'_, f64>,
    y: &[f64],
    grid: &[f64],
) -> Result<Vec<RidgeFit>> {
    check_inputs(x, y)?;
    if f.n() != x.nrows() {
        return Err(Error::DimensionMismatch(
            "factor built for another design".into(),
        ));
    }
    let uty = f.rotate(y);
    Ok(grid
        .iter()
        .map(|&l| f.solve_rotated(x, &uty, y, l))
        .collect())
}
