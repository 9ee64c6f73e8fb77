use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use super::{adversarial_sup, McEstimate};
use crate::datagen::{sample_point, sample_theta_with, DesignSample};
use crate::error::{Error, Result};
use crate::linalg;
use crate::ridge::GramFactor;
use crate::rng;
use crate::spectra::{ParameterWeights, Spectrum};

/// Monte Carlo estimates of the standard risk, the adversarial risk and the
/// squared parameter norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McRisks {
    pub std: McEstimate,
    pub adv: McEstimate,
    pub norm: McEstimate,
}

/// Averages over fresh sign flips of θ, fresh label noise and a fresh test
/// point x⋆ per trial, on the fixed design. Trial t uses stream (seed, t);
/// results are reduced in trial order, so they do not depend on threading.
#[allow(clippy::too_many_arguments)]
pub fn mc_risks(
    design: &DesignSample,
    spec: &Spectrum,
    w: &ParameterWeights,
    noise_variance: f64,
    lambda: f64,
    alpha: f64,
    trials: usize,
    seed: u64,
) -> Result<McRisks> {
    if trials < 2 {
        return Err(Error::TooFewTrials(trials));
    }
    if design.p() != spec.truncation_dim() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} columns but the spectrum has dimension {}",
            design.p(),
            spec.truncation_dim()
        )));
    }
    w.check_aligned(spec)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(
            "lambda",
            format!("must be non-negative, got {lambda}"),
        ));
    }
    let x = design.x.as_ref();
    let factor = GramFactor::new(x)?;
    let r = factor.resolvent(lambda);
    let sqrt_l: Vec<f64> = spec.eigenvalues().iter().map(|l| l.sqrt()).collect();
    let sd = noise_variance.sqrt();

    let samples: Vec<[f64; 3]> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut g = rng::stream(seed, t as u64);
            let theta = sample_theta_with(w.weights_sq(), &mut g);
            let mut y = linalg::matvec(x, &theta);
            for yi in y.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut g);
                *yi += sd * e;
            }
            let mut c = factor.rotate(&y);
            for (ci, ri) in c.iter_mut().zip(&r) {
                *ci *= ri;
            }
            let theta_hat = linalg::matvec_t(x, &factor.unrotate(&c));
            let x_star = sample_point(&sqrt_l, design.dist, &mut g);
            let err: f64 = x_star
                .iter()
                .zip(theta_hat.iter().zip(&theta))
                .map(|(xi, (a, b))| xi * (a - b))
                .sum();
            [
                err * err,
                adversarial_sup(&theta_hat, &theta, &x_star, alpha),
                linalg::norm_sq(&theta_hat),
            ]
        })
        .collect();
    debug_assert_eq!(samples.len(), trials);
    let col = |i: usize| samples.iter().map(|s| s[i]).collect::<Vec<_>>();
    Ok(McRisks {
        std: McEstimate::from_samples(&col(0))?,
        adv: McEstimate::from_samples(&col(1))?,
        norm: McEstimate::from_samples(&col(2))?,
    })
}
