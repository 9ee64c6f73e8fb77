use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{RiskReport, SQRT_2_OVER_PI};
use crate::datagen::sample_theta_with;
use crate::error::{Error, Result};
use crate::linalg::{self, par};
use crate::ridge::GramFactor;
use crate::rng;
use crate::spectra::{ParameterWeights, Spectrum};

/// Noise-free parts of the conditional risks at one λ.
///
/// Standard risk = `bias + σ²·variance`, E‖θ̂‖² = `norm_bias + σ²·norm_variance`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    pub lambda: f64,
    pub bias: f64,
    pub variance: f64,
    pub norm_bias: f64,
    pub norm_variance: f64,
}

/// Reusable state for evaluating conditional risks of one design along a
/// λ-grid.
///
/// With A = XXᵀ = U diag(μ) Uᵀ and X̃ = UᵀX, the n×n matrices
/// G_S = X̃ΣX̃ᵀ and G_D = X̃DX̃ᵀ carry all the p-dimensional work, after
/// which each λ costs O(n²). X̃ is stored transposed (p×n), the layout in
/// which the Gram products are fastest.
pub struct ConditionalMoments {
    factor: GramFactor,
    lam: Vec<f64>,
    wts: Vec<f64>,
    /// X̃ᵀ = XᵀU.
    xt_t: Mat<f64>,
    g_s: Mat<f64>,
    g_d: Mat<f64>,
    diag_sd: Vec<f64>,
    tr_sd: f64,
}

/// X̃ diag(scale) X̃ᵀ from X̃ᵀ.
fn scaled_gram(xt_t: MatRef<'_, f64>, scale: &[f64]) -> Mat<f64> {
    let roots: Vec<f64> = scale.iter().map(|s| s.sqrt()).collect();
    let mut y = xt_t.to_owned();
    for i in 0..y.ncols() {
        for (j, r) in roots.iter().enumerate() {
            y[(j, i)] *= r;
        }
    }
    linalg::gram_cols(y.as_ref())
}

impl ConditionalMoments {
    pub fn new(x: MatRef<'_, f64>, spec: &Spectrum, w: &ParameterWeights) -> Result<Self> {
        let factor = GramFactor::new(x)?;
        Self::with_factor(factor, x, spec, w)
    }

    pub fn with_factor(
        factor: GramFactor,
        x: MatRef<'_, f64>,
        spec: &Spectrum,
        w: &ParameterWeights,
    ) -> Result<Self> {
        let p = x.ncols();
        if spec.truncation_dim() != p {
            return Err(Error::DimensionMismatch(format!(
                "design has {p} columns but the spectrum has dimension {}",
                spec.truncation_dim()
            )));
        }
        w.check_aligned(spec)?;
        if factor.n() != x.nrows() {
            return Err(Error::DimensionMismatch(
                "factor built for another design".into(),
            ));
        }
        let lam = spec.eigenvalues().to_vec();
        let wts = w.weights_sq().to_vec();
        let x_t = x.transpose().to_owned();
        let xt_t = linalg::mul(x_t.as_ref(), factor.eigenvectors());
        drop(x_t);
        let g_s = scaled_gram(xt_t.as_ref(), &lam);
        let g_d = scaled_gram(xt_t.as_ref(), &wts);
        let sd: Vec<f64> = lam.iter().zip(&wts).map(|(l, t)| l * t).collect();
        let diag_sd = (0..x.nrows())
            .map(|k| (0..p).map(|j| sd[j] * xt_t[(j, k)] * xt_t[(j, k)]).sum())
            .collect();
        let tr_sd = sd.iter().rev().sum();
        Ok(ConditionalMoments {
            factor,
            lam,
            wts,
            xt_t,
            g_s,
            g_d,
            diag_sd,
            tr_sd,
        })
    }

    pub fn factor(&self) -> &GramFactor {
        &self.factor
    }

    /// ‖θ‖²_Σ of the materialized coordinates.
    pub fn signal_energy(&self) -> f64 {
        self.tr_sd
    }

    pub fn moments(&self, lambda: f64) -> Result<Moments> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::invalid(
                "lambda",
                format!("must be non-negative, got {lambda}"),
            ));
        }
        let r = self.factor.resolvent(lambda);
        let mu = self.factor.clipped_eigenvalues();
        let n = r.len();
        let mut cross = 0.0;
        for l in 0..n {
            let mut col = 0.0;
            for k in 0..n {
                col += r[k] * self.g_s[(k, l)] * self.g_d[(k, l)];
            }
            cross += r[l] * col;
        }
        let lin: f64 = (0..n).map(|k| r[k] * self.diag_sd[k]).sum();
        let bias = (self.tr_sd - 2.0 * lin + cross).max(0.0);
        let variance = (0..n).map(|k| r[k] * r[k] * self.g_s[(k, k)]).sum();
        let norm_bias = (0..n).map(|k| r[k] * r[k] * mu[k] * self.g_d[(k, k)]).sum();
        let norm_variance = (0..n).map(|k| r[k] * r[k] * mu[k]).sum();
        Ok(Moments {
            lambda,
            bias,
            variance,
            norm_bias,
            norm_variance,
        })
    }

    pub fn report(&self, lambda: f64, noise_variance: f64, budget: f64) -> Result<RiskReport> {
        Ok(RiskReport::from_moments(
            &self.moments(lambda)?,
            noise_variance,
            budget,
        ))
    }

    /// Adds the Gaussian-design adversarial risk to each report.
    ///
    /// Conditional on (θ, y) the closed form is
    /// α²‖θ̂‖² + 2α‖θ̂‖√(2/π)‖θ̂−θ‖_Σ + ‖θ̂−θ‖²_Σ. The quadratic part has the
    /// exact expectation `adv_lower`; only the cross term is integrated by
    /// Monte Carlo over (θ, y), as a ratio to the quadratic part. Each
    /// sample's ratio lies in [0, √(2/π)], so the result always lies in
    /// [adv_lower, (1 + √(2/π))·adv_lower].
    pub fn attach_adversarial_gaussian(
        &self,
        reports: &mut [RiskReport],
        noise_variance: f64,
        trials: usize,
        seed: u64,
    ) -> Result<()> {
        if trials < 2 {
            return Err(Error::TooFewTrials(trials));
        }
        let n = self.factor.n();
        let p = self.lam.len();
        let sd = noise_variance.sqrt();
        // Columns: θ per trial, and Uᵀy = X̃θ + Uᵀε.
        let draws: Vec<(Vec<f64>, Vec<f64>)> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut r = rng::stream(seed, t as u64);
                let theta = sample_theta_with(&self.wts, &mut r);
                let eps: Vec<f64> = (0..n)
                    .map(|_| sd * Distribution::<f64>::sample(&StandardNormal, &mut r))
                    .collect();
                (theta, eps)
            })
            .collect();
        let theta = Mat::from_fn(p, trials, |j, t| draws[t].0[j]);
        let eps = Mat::from_fn(n, trials, |i, t| draws[t].1[i]);
        drop(draws);
        let mut uty = linalg::mul(self.xt_t.transpose(), theta.as_ref());
        matmul(
            uty.as_mut(),
            Accum::Add,
            self.factor.eigenvectors().transpose(),
            eps.as_ref(),
            1.0,
            par(),
        );
        let mut coef = Mat::<f64>::zeros(n, trials);
        let mut theta_hat = Mat::<f64>::zeros(p, trials);
        for rep in reports.iter_mut() {
            let alpha = rep.budget;
            if alpha == 0.0 {
                rep.adv_exact_gaussian = Some(rep.adv_lower);
                rep.adv_exact_gaussian_se = Some(0.0);
                continue;
            }
            let r = self.factor.resolvent(rep.lambda);
            for t in 0..trials {
                for k in 0..n {
                    coef[(k, t)] = r[k] * uty[(k, t)];
                }
            }
            matmul(
                theta_hat.as_mut(),
                Accum::Replace,
                self.xt_t.as_ref(),
                coef.as_ref(),
                1.0,
                par(),
            );
            let (cross, quad): (Vec<f64>, Vec<f64>) = (0..trials)
                .map(|t| {
                    let mut nrm2 = 0.0;
                    let mut err2 = 0.0;
                    for j in 0..p {
                        let h = theta_hat[(j, t)];
                        let e = h - theta[(j, t)];
                        nrm2 += h * h;
                        err2 += self.lam[j] * e * e;
                    }
                    (
                        2.0 * alpha * SQRT_2_OVER_PI * (nrm2 * err2).sqrt(),
                        alpha * alpha * nrm2 + err2,
                    )
                })
                .unzip();
            let (ratio, ratio_se) = ratio_estimate(&cross, &quad);
            rep.adv_exact_gaussian = Some(rep.adv_lower * (1.0 + ratio));
            rep.adv_exact_gaussian_se = Some(rep.adv_lower * ratio_se);
        }
        Ok(())
    }
}

/// Σc/Σq with its delta-method standard error.
fn ratio_estimate(c: &[f64], q: &[f64]) -> (f64, f64) {
    let t = c.len() as f64;
    let sq: f64 = q.iter().sum();
    if sq <= 0.0 {
        return (0.0, 0.0);
    }
    let ratio = c.iter().sum::<f64>() / sq;
    let mq = sq / t;
    let var = c
        .iter()
        .zip(q)
        .map(|(ci, qi)| (ci - ratio * qi).powi(2))
        .sum::<f64>()
        / (t - 1.0);
    (ratio, (var / t).sqrt() / mq)
}

/// Conditional risks of θ̂_λ on a fixed design.
pub fn conditional_moments(
    x: MatRef<'_, f64>,
    lambda: f64,
    spec: &Spectrum,
    w: &ParameterWeights,
    noise_variance: f64,
) -> Result<RiskReport> {
    if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
        return Err(Error::invalid(
            "noise_variance",
            format!("must be non-negative, got {noise_variance}"),
        ));
    }
    ConditionalMoments::new(x, spec, w)?.report(lambda, noise_variance, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{make_spectrum, Family};

    #[test]
    fn identity_design_closed_form() {
        let n = 4;
        let wts = vec![0.1, 0.4, 0.2, 0.3];
        let fam = Family::Custom {
            eigenvalues: vec![1.0; n],
            weights_sq: wts.clone(),
            noise: 1.0,
        };
        let (s, w, _) = make_spectrum(&fam, 2, n).unwrap();
        let x = Mat::<f64>::identity(n, n);
        let lam = 0.3;
        let m = ConditionalMoments::new(x.as_ref(), &s, &w)
            .unwrap()
            .moments(lam)
            .unwrap();
        let nl = n as f64 * lam;
        assert!((m.variance - n as f64 / (1.0 + nl).powi(2)).abs() < 1e-12);
        let b: f64 = wts.iter().sum::<f64>() * (nl / (1.0 + nl)).powi(2);
        assert!((m.bias - b).abs() < 1e-12);
    }

    #[test]
    fn square_invertible_design_interpolates_signal() {
        let n = 5;
        let (s, w, _) = make_spectrum(&Family::Isotropic { d: n, noise: 1.0 }, 2, n).unwrap();
        let x = Mat::from_fn(n, n, |i, j| {
            if i == j {
                2.0
            } else {
                0.3 * ((i + j) as f64).sin()
            }
        });
        let m = ConditionalMoments::new(x.as_ref(), &s, &w)
            .unwrap()
            .moments(0.0)
            .unwrap();
        assert!(m.bias.abs() < 1e-12);
    }

    #[test]
    fn ratio_estimate_is_bounded() {
        let c = [0.5, 0.1, 0.7];
        let q = [1.0, 0.2, 0.9];
        let (r, se) = ratio_estimate(&c, &q);
        assert!((r - 1.3 / 2.1).abs() < 1e-15);
        assert!(se > 0.0);
    }
}
