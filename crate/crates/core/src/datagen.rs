//! Synthetic designs, ground-truth parameters and labels.
//!
//! Rows are xᵢ = Λ^{1/2}ηᵢ in the eigenbasis of Σ. Each row is drawn from its
//! own stream (seed, row), so a design is identical whatever the thread count.

use faer::Mat;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::spectra::{ParameterWeights, Spectrum};

/// Distribution of the whitened entries ηᵢⱼ; all have mean 0 and variance 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignDist {
    #[default]
    Gaussian,
    Rademacher,
    /// Uniform on [−√3, √3].
    Uniform,
}

impl DesignDist {
    pub fn draw(self, r: &mut rng::Rng) -> f64 {
        match self {
            DesignDist::Gaussian => StandardNormal.sample(r),
            DesignDist::Rademacher => {
                if r.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            DesignDist::Uniform => 3f64.sqrt() * (2.0 * r.random::<f64>() - 1.0),
        }
    }
}

impl std::fmt::Display for DesignDist {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DesignDist::Gaussian => "gaussian",
            DesignDist::Rademacher => "rademacher",
            DesignDist::Uniform => "uniform",
        })
    }
}

/// n×p design with rows Λ^{1/2}ηᵢ.
#[derive(Clone, Debug)]
pub struct DesignSample {
    pub x: Mat<f64>,
    /// Text form of the generating spectrum family.
    pub spectrum_ref: String,
    pub dist: DesignDist,
    pub seed: u64,
}

impl DesignSample {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

#[derive(Clone, Debug)]
pub struct LabeledSample {
    pub design: DesignSample,
    pub y: Vec<f64>,
    pub theta_true: Vec<f64>,
    pub noise_variance: f64,
}

/// One whitened draw Λ^{1/2}η from stream `r`.
pub fn sample_point(sqrt_lambda: &[f64], dist: DesignDist, r: &mut rng::Rng) -> Vec<f64> {
    sqrt_lambda.iter().map(|s| s * dist.draw(r)).collect()
}

pub fn sample_design(spec: &Spectrum, n: usize, dist: DesignDist, seed: u64) -> DesignSample {
    let sqrt_l: Vec<f64> = spec.eigenvalues().iter().map(|l| l.sqrt()).collect();
    let p = sqrt_l.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| sample_point(&sqrt_l, dist, &mut rng::stream(seed, i as u64)))
        .collect();
    let x = Mat::from_fn(n, p, |i, j| rows[i][j]);
    DesignSample {
        x,
        spectrum_ref: spec.family().to_string(),
        dist,
        seed,
    }
}

/// θᵢ = ±√θ̃ᵢ² with independent fair signs.
pub fn sample_theta(w: &ParameterWeights, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, 0);
    sample_theta_with(w.weights_sq(), &mut r)
}

pub(crate) fn sample_theta_with(weights_sq: &[f64], r: &mut rng::Rng) -> Vec<f64> {
    weights_sq
        .iter()
        .map(|w| {
            if r.random::<bool>() {
                w.sqrt()
            } else {
                -w.sqrt()
            }
        })
        .collect()
}

/// Noise distribution of the labels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseDist {
    #[default]
    Gaussian,
}

/// y = Xθ + ε with εᵢ ~ N(0, σ²).
pub fn sample_labels(
    design: &DesignSample,
    theta: &[f64],
    noise_variance: f64,
    noise: NoiseDist,
    seed: u64,
) -> Result<LabeledSample> {
    if theta.len() != design.p() {
        return Err(Error::DimensionMismatch(format!(
            "theta has length {} but the design has {} columns",
            theta.len(),
            design.p()
        )));
    }
    if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
        return Err(Error::invalid(
            "noise_variance",
            format!("must be non-negative, got {noise_variance}"),
        ));
    }
    let NoiseDist::Gaussian = noise;
    let sd = noise_variance.sqrt();
    let mut r = rng::stream(seed, 0);
    let signal = crate::linalg::matvec(design.x.as_ref(), theta);
    let y = signal
        .into_iter()
        .map(|s| {
            let e: f64 = StandardNormal.sample(&mut r);
            s + sd * e
        })
        .collect();
    Ok(LabeledSample {
        design: design.clone(),
        y,
        theta_true: theta.to_vec(),
        noise_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{make_spectrum, Family};

    fn iso(d: usize) -> Spectrum {
        make_spectrum(&Family::Isotropic { d, noise: 1.0 }, 2, d)
            .unwrap()
            .0
    }

    #[test]
    fn rademacher_support() {
        let d = sample_design(&iso(3), 50, DesignDist::Rademacher, 1);
        for i in 0..50 {
            for j in 0..3 {
                assert!(d.x[(i, j)] == 1.0 || d.x[(i, j)] == -1.0);
            }
        }
    }

    #[test]
    fn scaling_the_spectrum_scales_entries() {
        let s = iso(5);
        let s4 = s.scaled(4.0).unwrap();
        let a = sample_design(&s, 10, DesignDist::Gaussian, 9);
        let b = sample_design(&s4, 10, DesignDist::Gaussian, 9);
        for i in 0..10 {
            for j in 0..5 {
                assert_eq!(b.x[(i, j)], 2.0 * a.x[(i, j)]);
            }
        }
    }

    #[test]
    fn column_variances_match_spectrum() {
        let fam = Family::Custom {
            eigenvalues: vec![2.0, 0.5],
            weights_sq: vec![1.0, 1.0],
            noise: 0.0,
        };
        let (s, _, _) = make_spectrum(&fam, 2, 2).unwrap();
        let n = 20_000;
        let d = sample_design(&s, n, DesignDist::Gaussian, 3);
        for (j, lam) in [2.0, 0.5].into_iter().enumerate() {
            let v: f64 = (0..n).map(|i| d.x[(i, j)].powi(2)).sum::<f64>() / n as f64;
            assert!(
                (v - lam).abs() <= 3.0 * (2.0 / n as f64).sqrt() * lam,
                "{v} vs {lam}"
            );
        }
    }

    #[test]
    fn uniform_has_unit_variance_support() {
        let d = sample_design(&iso(2), 1000, DesignDist::Uniform, 4);
        let bound = 3f64.sqrt();
        for i in 0..1000 {
            assert!(d.x[(i, 0)].abs() <= bound);
        }
    }

    #[test]
    fn theta_signs() {
        let w = ParameterWeights::new(vec![1.0, 0.0, 0.0], None).unwrap();
        for seed in 0..20 {
            let t = sample_theta(&w, seed);
            assert!(t == vec![1.0, 0.0, 0.0] || t == vec![-1.0, 0.0, 0.0]);
        }
        let w = ParameterWeights::new(vec![0.3, 2.0, 0.7], None).unwrap();
        for seed in 0..20 {
            let t = sample_theta(&w, seed);
            let nrm: f64 = t.iter().map(|v| v * v).sum();
            assert!((nrm - w.norm_sq()).abs() < 1e-15);
        }
    }

    #[test]
    fn theta_coordinates_are_centred() {
        let w = ParameterWeights::new(vec![1.0, 0.25], None).unwrap();
        let trials = 10_000;
        let mut mean = [0.0; 2];
        for seed in 0..trials {
            let t = sample_theta(&w, seed);
            mean[0] += t[0];
            mean[1] += t[1];
        }
        for (m, wt) in mean.iter().zip([1.0f64, 0.25]) {
            assert!((m / trials as f64).abs() <= 3.0 / (trials as f64).sqrt() * wt.sqrt());
        }
    }

    #[test]
    fn labels_noiseless_and_deterministic() {
        let s = iso(4);
        let d = sample_design(&s, 6, DesignDist::Gaussian, 2);
        let theta = vec![1.0, -2.0, 0.5, 0.0];
        let l = sample_labels(&d, &theta, 0.0, NoiseDist::Gaussian, 3).unwrap();
        for i in 0..6 {
            let xt: f64 = (0..4).map(|j| d.x[(i, j)] * theta[j]).sum();
            assert!((l.y[i] - xt).abs() < 1e-14);
        }
        let a = sample_labels(&d, &theta, 0.5, NoiseDist::Gaussian, 3).unwrap();
        let b = sample_labels(&d, &theta, 0.5, NoiseDist::Gaussian, 3).unwrap();
        assert_eq!(a.y, b.y);
        assert!(sample_labels(&d, &theta[..3], 0.5, NoiseDist::Gaussian, 3).is_err());
    }

    #[test]
    fn noise_variance_concentrates() {
        let s = iso(2);
        let n = 100_000;
        let d = sample_design(&s, n, DesignDist::Gaussian, 5);
        let theta = vec![0.0, 0.0];
        let sig = 0.7;
        let l = sample_labels(&d, &theta, sig, NoiseDist::Gaussian, 6).unwrap();
        let m: f64 = l.y.iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!((m - sig).abs() <= 3.0 * sig * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn distinct_seeds_are_uncorrelated() {
        let s = iso(2);
        let n = 10_000;
        let a = sample_design(&s, n, DesignDist::Gaussian, 11);
        let b = sample_design(&s, n, DesignDist::Gaussian, 12);
        let c: f64 = (0..n).map(|i| a.x[(i, 0)] * b.x[(i, 0)]).sum::<f64>() / n as f64;
        assert!(c.abs() <= 3.0 / (n as f64).sqrt());
    }
}
