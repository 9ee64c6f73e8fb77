use faer::{Mat, MatRef};
use serde::Serialize;

use super::kernels::kernel_from_preacts;
use super::{features_t_times, flatten, outputs_at_init, preactivations, NtkModel};
use crate::error::{Error, Result};
use crate::linalg;

/// Relative eigenvalue cutoff below which K is treated as singular.
pub const KERNEL_RTOL: f64 = 1e-12;

/// Consecutive increases of the distance trace that count as divergence.
const DIVERGENCE_RUN: usize = 10;

#[derive(Clone, Debug, Serialize)]
pub struct NtkFit {
    pub w_hat: Vec<f64>,
    /// Coefficients c with ŵ − w₀ = ∇Fᵀc.
    pub dual: Vec<f64>,
    /// ‖Kc − (y − F)‖ of the closed-form solve.
    pub solve_residual: f64,
    /// ‖w_t − ŵ_closed‖ for t = 0, 1, …, steps.
    pub gd_trace: Option<Vec<f64>>,
}

struct System {
    a: Mat<f64>,
    k: Mat<f64>,
    rhs: Vec<f64>,
    eig: linalg::SymEigen,
}

fn system(model: &NtkModel, x: MatRef<'_, f64>, y: &[f64]) -> Result<System> {
    model.check_rows(x)?;
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "y has length {} but X has {} rows",
            y.len(),
            x.nrows()
        )));
    }
    linalg::check_finite("labels", y.iter().copied())?;
    let a = preactivations(model, x);
    let k = kernel_from_preacts(model, a.as_ref(), x);
    let f = outputs_at_init(model, a.as_ref());
    let rhs = y.iter().zip(&f).map(|(y, f)| y - f).collect();
    let eig = linalg::sym_eigen(k.as_ref())?;
    Ok(System { a, k, rhs, eig })
}

impl System {
    fn solve(&self) -> Result<Vec<f64>> {
        let mu = &self.eig.values;
        let cutoff = KERNEL_RTOL * mu[0];
        let min = mu[mu.len() - 1];
        if !(min >= cutoff && min > 0.0) {
            return Err(Error::SingularKernel { min, cutoff });
        }
        let v = self.eig.vectors.as_ref();
        let rot = linalg::matvec_t(v, &self.rhs);
        let scaled: Vec<f64> = rot.iter().zip(mu).map(|(r, m)| r / m).collect();
        Ok(linalg::matvec(v, &scaled))
    }

    fn residual(&self, c: &[f64]) -> f64 {
        let kc = linalg::matvec(self.k.as_ref(), c);
        kc.iter()
            .zip(&self.rhs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    fn w_of(&self, model: &NtkModel, x: MatRef<'_, f64>, c: &[f64]) -> Vec<f64> {
        let (mut d_theta, mut d_u) = features_t_times(model, self.a.as_ref(), x, c);
        let th0 = model.theta0();
        for k in 0..model.p() {
            for j in 0..model.m() {
                d_theta[(j, k)] += th0[(j, k)];
            }
        }
        for (d, u) in d_u.iter_mut().zip(model.u0()) {
            *d += u;
        }
        flatten(model, d_theta.as_ref(), &d_u)
    }

    /// ‖∇Fᵀd‖ = √(dᵀKd).
    fn primal_norm(&self, d: &[f64]) -> f64 {
        linalg::dot(d, &linalg::matvec(self.k.as_ref(), d))
            .max(0.0)
            .sqrt()
    }
}

/// ŵ = w₀ + ∇Fᵀ(∇F∇Fᵀ)⁻¹(y − F).
pub fn ntk_fixed_point(model: &NtkModel, x: MatRef<'_, f64>, y: &[f64]) -> Result<NtkFit> {
    let sys = system(model, x, y)?;
    let c = sys.solve()?;
    Ok(NtkFit {
        w_hat: sys.w_of(model, x, &c),
        solve_residual: sys.residual(&c),
        dual: c,
        gd_trace: None,
    })
}

/// n/λ_max(K): gradient descent on the 1/n-scaled loss converges for step
/// sizes below twice this value and is guaranteed monotone below it.
pub fn stability_threshold(model: &NtkModel, x: MatRef<'_, f64>) -> Result<f64> {
    model.check_rows(x)?;
    let k = super::empirical_kernel(model, x)?;
    let top = linalg::sym_eigenvalues(k.as_ref())?[0];
    Ok(x.nrows() as f64 / top)
}

/// Gradient descent w_{t+1} = w_t − (γ/n)Σᵢ(f_NTK(w_t, xᵢ) − yᵢ)∇_w f(w₀, xᵢ).
///
/// Every iterate satisfies w_t − w₀ = ∇Fᵀc_t, so the iteration runs on the
/// coefficients, c_{t+1} = c_t − (γ/n)(Kc_t + F − y), which is the same
/// sequence of parameters at O(n²) per step.
pub fn gd_train(
    model: &NtkModel,
    x: MatRef<'_, f64>,
    y: &[f64],
    gamma: f64,
    steps: usize,
) -> Result<NtkFit> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(
            "gamma",
            format!("must be positive, got {gamma}"),
        ));
    }
    let sys = system(model, x, y)?;
    let n = x.nrows() as f64;
    let threshold = n / sys.eig.values[0];
    let c_hat = sys.solve()?;
    let mut c = vec![0.0; c_hat.len()];
    let dist = |c: &[f64]| {
        let d: Vec<f64> = c.iter().zip(&c_hat).map(|(a, b)| a - b).collect();
        sys.primal_norm(&d)
    };
    let mut trace = Vec::with_capacity(steps + 1);
    trace.push(dist(&c));
    let mut run = 0;
    for step in 1..=steps {
        let kc = linalg::matvec(sys.k.as_ref(), &c);
        for i in 0..c.len() {
            c[i] -= gamma / n * (kc[i] - sys.rhs[i]);
        }
        let d = dist(&c);
        let prev = trace[trace.len() - 1];
        trace.push(d);
        if !d.is_finite() {
            return Err(Error::Diverged {
                step,
                gamma,
                threshold,
            });
        }
        if d > prev {
            run += 1;
            if run >= DIVERGENCE_RUN {
                return Err(Error::Diverged {
                    step,
                    gamma,
                    threshold,
                });
            }
        } else {
            run = 0;
        }
    }
    Ok(NtkFit {
        w_hat: sys.w_of(model, x, &c),
        solve_residual: sys.residual(&c_hat),
        dual: c,
        gd_trace: Some(trace),
    })
}
