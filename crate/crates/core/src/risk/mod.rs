//! Conditional (fixed-X) risks, adversarial risks and Monte Carlo checks.
//!
//! Conventions: Σ = diag(λ), D = diag(θ̃²), and the design is the
//! p-coordinate truncation, so every quantity here refers to the
//! materialized coordinates only.

mod conditional;
mod montecarlo;
mod woodbury;

pub use conditional::{conditional_moments, ConditionalMoments, Moments};
pub use montecarlo::{mc_risks, McRisks};
pub use woodbury::EigenbasisCache;

use serde::Serialize;

use crate::datagen::DesignDist;
use crate::error::{Error, Result};
use crate::spectra::Spectrum;

/// Mean, standard error and trial count of a Monte Carlo average.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub trials: usize,
}

impl McEstimate {
    /// Mean and standard error of `samples`, summed in index order.
    pub fn from_samples(samples: &[f64]) -> Result<McEstimate> {
        let t = samples.len();
        if t < 2 {
            return Err(Error::TooFewTrials(t));
        }
        let mean = samples.iter().sum::<f64>() / t as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (t - 1) as f64;
        Ok(McEstimate {
            mean,
            std_error: (var / t as f64).sqrt(),
            trials: t,
        })
    }
}

/// Standard risk, parameter norm and adversarial risk of a fitted λ.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RiskReport {
    pub lambda: f64,
    pub std_bias: f64,
    pub std_variance: f64,
    pub std_total: f64,
    pub norm_bias: f64,
    pub norm_variance: f64,
    pub norm_total: f64,
    pub adv_lower: f64,
    pub adv_upper: f64,
    pub adv_exact_gaussian: Option<f64>,
    /// Monte Carlo standard error of `adv_exact_gaussian`.
    pub adv_exact_gaussian_se: Option<f64>,
    pub budget: f64,
    pub mc_estimate: Option<McEstimate>,
}

impl RiskReport {
    /// Assembles the report from conditional moments; the adversarial
    /// sandwich follows from α²E‖θ̂‖² + S ≤ A ≤ 2(α²E‖θ̂‖² + S).
    pub fn from_moments(m: &Moments, noise_variance: f64, budget: f64) -> RiskReport {
        let std_variance = noise_variance * m.variance;
        let norm_variance = noise_variance * m.norm_variance;
        let std_total = m.bias + std_variance;
        let norm_total = m.norm_bias + norm_variance;
        let adv_lower = budget * budget * norm_total + std_total;
        RiskReport {
            lambda: m.lambda,
            std_bias: m.bias,
            std_variance,
            std_total,
            norm_bias: m.norm_bias,
            norm_variance,
            norm_total,
            adv_lower,
            adv_upper: 2.0 * adv_lower,
            adv_exact_gaussian: None,
            adv_exact_gaussian_se: None,
            budget,
            mc_estimate: None,
        }
    }
}

/// sup_{‖δ‖≤α} ((x+δ)ᵀθ̂ − xᵀθ)² = (|xᵀ(θ̂−θ)| + α‖θ̂‖)².
pub fn adversarial_sup(theta_hat: &[f64], theta: &[f64], x: &[f64], alpha: f64) -> f64 {
    let err: f64 = x
        .iter()
        .zip(theta_hat.iter().zip(theta))
        .map(|(xi, (a, b))| xi * (a - b))
        .sum();
    let nrm = theta_hat.iter().map(|v| v * v).sum::<f64>().sqrt();
    (err.abs() + alpha * nrm).powi(2)
}

/// E_x sup_{‖δ‖≤α} ((x+δ)ᵀθ̂ − xᵀθ)² for x ~ N(0, Σ):
/// α²‖θ̂‖² + 2α‖θ̂‖√(2/π)‖θ̂−θ‖_Σ + ‖θ̂−θ‖²_Σ.
pub fn adversarial_risk_gaussian(
    theta_hat: &[f64],
    theta: &[f64],
    spec: &Spectrum,
    alpha: f64,
    dist: DesignDist,
) -> Result<f64> {
    if dist != DesignDist::Gaussian {
        return Err(Error::NonGaussianDesign(dist.to_string()));
    }
    if theta_hat.len() != spec.truncation_dim() || theta.len() != spec.truncation_dim() {
        return Err(Error::DimensionMismatch(format!(
            "vectors of length {} and {} against a spectrum of dimension {}",
            theta_hat.len(),
            theta.len(),
            spec.truncation_dim()
        )));
    }
    let (nrm2, err2) = gaussian_parts(theta_hat, theta, spec.eigenvalues());
    Ok(gaussian_closed_form(nrm2, err2, alpha))
}

/// (‖θ̂‖², ‖θ̂ − θ‖²_Σ).
pub(crate) fn gaussian_parts(theta_hat: &[f64], theta: &[f64], lam: &[f64]) -> (f64, f64) {
    let nrm2 = theta_hat.iter().map(|v| v * v).sum();
    let err2 = theta_hat
        .iter()
        .zip(theta)
        .zip(lam)
        .map(|((a, b), l)| l * (a - b) * (a - b))
        .sum();
    (nrm2, err2)
}

pub(crate) const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

pub(crate) fn gaussian_closed_form(nrm2: f64, err2: f64, alpha: f64) -> f64 {
    alpha * alpha * nrm2 + 2.0 * alpha * nrm2.sqrt() * SQRT_2_OVER_PI * err2.sqrt() + err2
}
