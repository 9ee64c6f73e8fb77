//! Two-layer ReLU network f(w, x) = (1/√(mp)) Σⱼ uⱼ h(θⱼᵀx) and its
//! linearization around the initialization w₀.
//!
//! Parameter vectors are flattened neuron-major, θⱼ before uⱼ:
//! `[θ₁ (p entries), u₁, θ₂, u₂, …]`, length m(p+1). h′(0) is taken as 0.
//!
//! Batched quantities never materialize the n×m(p+1) feature matrix; they
//! are assembled from the n×m pre-activation matrix XΘ₀ᵀ instead.

mod fit;
mod kernels;
mod risk;

pub use fit::{gd_train, ntk_fixed_point, stability_threshold, NtkFit};
pub use kernels::{
    arccos_kernel, empirical_kernel, kernel_to_csv, kernels, linearized_kernel, KernelTriple,
};
pub use risk::{
    gradient_norm_at_init, make_target, ntk_labels, ntk_risks, NtkRiskReport, PGA_STEPS,
};

use faer::{Mat, MatRef};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;

/// Default cap on m(p+1), about 1 GiB of parameters.
pub const DEFAULT_PARAM_BUDGET: usize = 1 << 27;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// The network itself.
    Nn,
    /// First-order expansion around w₀.
    Ntk,
}

#[derive(Clone, Debug)]
pub struct NtkModel {
    m: usize,
    p: usize,
    seed: u64,
    radius: f64,
    /// Θ₀, m×p.
    theta: Mat<f64>,
    u: Vec<f64>,
}

pub fn init_network(m: usize, p: usize, seed: u64) -> Result<NtkModel> {
    init_network_with_budget(m, p, seed, DEFAULT_PARAM_BUDGET)
}

/// Draws w₀ with i.i.d. N(0, 1) entries from one stream, in layout order.
pub fn init_network_with_budget(m: usize, p: usize, seed: u64, budget: usize) -> Result<NtkModel> {
    if m == 0 {
        return Err(Error::invalid("m", "width must be at least 1"));
    }
    if p == 0 {
        return Err(Error::invalid("p", "input dimension must be at least 1"));
    }
    let requested = m.checked_mul(p + 1).ok_or(Error::MemoryBudget {
        requested: usize::MAX,
        budget,
    })?;
    if requested > budget {
        return Err(Error::MemoryBudget { requested, budget });
    }
    let mut r = rng::stream(seed, 0);
    let mut theta = Mat::zeros(m, p);
    let mut u = vec![0.0; m];
    for j in 0..m {
        for k in 0..p {
            theta[(j, k)] = StandardNormal.sample(&mut r);
        }
        u[j] = StandardNormal.sample(&mut r);
    }
    Ok(NtkModel {
        m,
        p,
        seed,
        radius: 1.0,
        theta,
        u,
    })
}

impl NtkModel {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Radius R of the neighborhood B(w₀, R) holding the target.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn with_radius(mut self, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid(
                "radius",
                format!("must be positive, got {radius}"),
            ));
        }
        self.radius = radius;
        Ok(self)
    }

    pub fn n_params(&self) -> usize {
        self.m * (self.p + 1)
    }

    pub fn theta0(&self) -> MatRef<'_, f64> {
        self.theta.as_ref()
    }

    pub fn u0(&self) -> &[f64] {
        &self.u
    }

    /// 1/√(mp).
    pub fn scale(&self) -> f64 {
        1.0 / ((self.m * self.p) as f64).sqrt()
    }

    /// Flattened w₀.
    pub fn w0(&self) -> Vec<f64> {
        flatten(self, self.theta.as_ref(), &self.u)
    }

    fn check_w(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "parameter vector has length {} but the network has {}",
                w.len(),
                self.n_params()
            )));
        }
        Ok(())
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.p {
            return Err(Error::DimensionMismatch(format!(
                "input has dimension {} but the network expects {}",
                x.len(),
                self.p
            )));
        }
        Ok(())
    }

    fn check_rows(&self, x: MatRef<'_, f64>) -> Result<()> {
        if x.ncols() != self.p {
            return Err(Error::DimensionMismatch(format!(
                "inputs have dimension {} but the network expects {}",
                x.ncols(),
                self.p
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::invalid("X", "needs at least one row"));
        }
        linalg::check_finite("inputs", linalg::mat_values(x))
    }
}

#[inline]
pub(crate) fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn relu_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        0.0
    }
}

pub(crate) fn flatten(model: &NtkModel, theta: MatRef<'_, f64>, u: &[f64]) -> Vec<f64> {
    let p = model.p;
    let mut w = Vec::with_capacity(model.n_params());
    for j in 0..model.m {
        for k in 0..p {
            w.push(theta[(j, k)]);
        }
        w.push(u[j]);
    }
    w
}

/// Splits `w − w₀` into (ΔΘ, Δu).
pub(crate) fn offset(model: &NtkModel, w: &[f64]) -> (Mat<f64>, Vec<f64>) {
    let p = model.p;
    let d_theta = Mat::from_fn(model.m, p, |j, k| w[j * (p + 1) + k] - model.theta[(j, k)]);
    let d_u = (0..model.m)
        .map(|j| w[j * (p + 1) + p] - model.u[j])
        .collect();
    (d_theta, d_u)
}

/// f(w, x) in either mode.
pub fn forward(model: &NtkModel, w: &[f64], x: &[f64], mode: Mode) -> Result<f64> {
    model.check_w(w)?;
    model.check_x(x)?;
    let p = model.p;
    let w0 = model.w0();
    let mut sum = 0.0;
    for j in 0..model.m {
        let blk = j * (p + 1);
        match mode {
            Mode::Nn => {
                let a = linalg::dot(&w[blk..blk + p], x);
                sum += w[blk + p] * relu(a);
            }
            Mode::Ntk => {
                let a0 = linalg::dot(&w0[blk..blk + p], x);
                let u0 = w0[blk + p];
                let d_u = w[blk + p] - u0;
                let d_lin: f64 = (0..p).map(|k| (w[blk + k] - w0[blk + k]) * x[k]).sum();
                sum += u0 * relu(a0) + (d_u * relu(a0) + u0 * relu_grad(a0) * d_lin);
            }
        }
    }
    Ok(sum * model.scale())
}

/// ∇_w f(w₀, x), in the flattened layout.
pub fn ntk_features(model: &NtkModel, x: &[f64]) -> Result<Vec<f64>> {
    model.check_x(x)?;
    let s = model.scale();
    let mut out = Vec::with_capacity(model.n_params());
    for j in 0..model.m {
        let a: f64 = (0..model.p).map(|k| model.theta[(j, k)] * x[k]).sum();
        let g = model.u[j] * relu_grad(a) * s;
        out.extend(x.iter().map(|xk| g * xk));
        out.push(relu(a) * s);
    }
    Ok(out)
}

/// Pre-activations XΘ₀ᵀ, n×m.
pub(crate) fn preactivations(model: &NtkModel, x: MatRef<'_, f64>) -> Mat<f64> {
    linalg::mul(x, model.theta.transpose())
}

/// ∇Fᵀc = Σᵢ cᵢ∇_w f(w₀, xᵢ) as (ΔΘ, Δu).
pub(crate) fn features_t_times(
    model: &NtkModel,
    a: MatRef<'_, f64>,
    x: MatRef<'_, f64>,
    c: &[f64],
) -> (Mat<f64>, Vec<f64>) {
    let s = model.scale();
    let (n, m) = (a.nrows(), a.ncols());
    let d_u = (0..m)
        .map(|j| s * (0..n).map(|i| c[i] * relu(a[(i, j)])).sum::<f64>())
        .collect();
    let gate = Mat::from_fn(m, n, |j, i| relu_grad(a[(i, j)]) * c[i]);
    let mut d_theta = linalg::mul(gate.as_ref(), x);
    for k in 0..model.p {
        for j in 0..m {
            d_theta[(j, k)] *= s * model.u[j];
        }
    }
    (d_theta, d_u)
}

/// f(w₀, xᵢ) for each row.
pub(crate) fn outputs_at_init(model: &NtkModel, a: MatRef<'_, f64>) -> Vec<f64> {
    let s = model.scale();
    (0..a.nrows())
        .map(|i| {
            s * (0..model.m)
                .map(|j| model.u[j] * relu(a[(i, j)]))
                .sum::<f64>()
        })
        .collect()
}

/// The linearized network at a fixed offset w − w₀.
pub(crate) struct Linearized<'a> {
    model: &'a NtkModel,
    d_theta: Mat<f64>,
    d_u: Vec<f64>,
}

impl<'a> Linearized<'a> {
    pub(crate) fn new(model: &'a NtkModel, w: &[f64]) -> Result<Self> {
        model.check_w(w)?;
        let (d_theta, d_u) = offset(model, w);
        Ok(Linearized {
            model,
            d_theta,
            d_u,
        })
    }

    /// f_NTK(w, z).
    pub(crate) fn value(&self, z: &[f64]) -> f64 {
        let md = self.model;
        let a = linalg::matvec(md.theta.as_ref(), z);
        let lin = linalg::matvec(self.d_theta.as_ref(), z);
        let mut sum = 0.0;
        for j in 0..md.m {
            sum += (md.u[j] + self.d_u[j]) * relu(a[j]) + md.u[j] * relu_grad(a[j]) * lin[j];
        }
        sum * md.scale()
    }

    /// ∇_z f_NTK(w, z) = (1/√(mp)) Σⱼ h′(θ₀ⱼᵀz)[(u₀ⱼ + Δuⱼ)θ₀ⱼ + u₀ⱼΔθⱼ].
    pub(crate) fn input_gradient(&self, z: &[f64]) -> Vec<f64> {
        let md = self.model;
        let a = linalg::matvec(md.theta.as_ref(), z);
        let c1: Vec<f64> = (0..md.m)
            .map(|j| relu_grad(a[j]) * (md.u[j] + self.d_u[j]))
            .collect();
        let c2: Vec<f64> = (0..md.m).map(|j| relu_grad(a[j]) * md.u[j]).collect();
        let g1 = linalg::matvec_t(md.theta.as_ref(), &c1);
        let g2 = linalg::matvec_t(self.d_theta.as_ref(), &c2);
        let s = md.scale();
        g1.iter().zip(&g2).map(|(a, b)| s * (a + b)).collect()
    }
}

/// ∇_x f_NTK(w, x).
pub fn input_gradient(model: &NtkModel, w: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    model.check_x(x)?;
    Ok(Linearized::new(model, w)?.input_gradient(x))
}
