use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use super::{
    features_t_times, flatten, offset, preactivations, relu, relu_grad, Linearized, NtkFit,
    NtkModel,
};
use crate::datagen::{sample_design, sample_point, DesignDist};
use crate::error::{Error, Result};
use crate::linalg::{self, par};
use crate::risk::McEstimate;
use crate::rng;
use crate::spectra::Spectrum;

/// Ascent steps of the projected-gradient validation attack; the step size
/// is α/10.
pub const PGA_STEPS: usize = 50;

const BATCH: usize = 256;

#[derive(Clone, Debug, Serialize)]
pub struct NtkRiskReport {
    /// E_x[(f_NTK(ŵ, x) − f_NTK(w⋆, x))²].
    pub std: McEstimate,
    /// E_x‖∇_x f_NTK(ŵ, x)‖².
    pub grad_norm_sq: McEstimate,
    /// E_x‖∇_x f_NTK(w₀, x)‖².
    pub grad_norm_sq_init: McEstimate,
    /// α²·E‖∇_x f_NTK(ŵ, x)‖².
    pub adv_proxy: f64,
    pub adv_proxy_se: f64,
    pub budget: f64,
    /// ‖ŵ − w₀‖.
    pub param_distance: f64,
    /// ‖w⋆ − w₀‖.
    pub target_distance: f64,
    /// Empirical sup over the α-ball by projected gradient ascent.
    pub pga: Option<McEstimate>,
}

fn check_spec(model: &NtkModel, spec: &Spectrum) -> Result<Vec<f64>> {
    if spec.truncation_dim() != model.p() {
        return Err(Error::DimensionMismatch(format!(
            "spectrum has dimension {} but the network expects {}",
            spec.truncation_dim(),
            model.p()
        )));
    }
    Ok(spec.eigenvalues().iter().map(|l| l.sqrt()).collect())
}

fn norm(d_theta: &Mat<f64>, d_u: &[f64]) -> f64 {
    let mut s = linalg::norm_sq(d_u);
    for k in 0..d_theta.ncols() {
        for j in 0..d_theta.nrows() {
            s += d_theta[(j, k)] * d_theta[(j, k)];
        }
    }
    s.sqrt()
}

/// Per-trial samples (squared error, ‖∇f(ŵ)‖², ‖∇f(w₀)‖²) at fresh
/// x ~ N(0, Σ), x for trial t drawn from stream (seed, t).
fn mc_pass(
    model: &NtkModel,
    hat: (&Mat<f64>, &[f64]),
    err: (&Mat<f64>, &[f64]),
    sqrt_l: &[f64],
    trials: usize,
    seed: u64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (m, p) = (model.m(), model.p());
    let s = model.scale();
    let u0 = model.u0();
    let th0 = model.theta0();
    let mut out = (
        Vec::with_capacity(trials),
        Vec::with_capacity(trials),
        Vec::with_capacity(trials),
    );
    let mut start = 0;
    while start < trials {
        let t = BATCH.min(trials - start);
        let pts: Vec<Vec<f64>> = (start..start + t)
            .into_par_iter()
            .map(|i| {
                sample_point(
                    sqrt_l,
                    DesignDist::Gaussian,
                    &mut rng::stream(seed, i as u64),
                )
            })
            .collect();
        let xb = Mat::from_fn(p, t, |k, i| pts[i][k]);
        let a = linalg::mul(th0, xb.as_ref());
        let e = linalg::mul(err.0.as_ref(), xb.as_ref());
        let mut gates = Mat::<f64>::zeros(m, 2 * t);
        for i in 0..t {
            for j in 0..m {
                let g = relu_grad(a[(j, i)]);
                gates[(j, i)] = g * (u0[j] + hat.1[j]);
                gates[(j, t + i)] = g * u0[j];
            }
        }
        let g0 = linalg::mul(th0.transpose(), gates.as_ref());
        let mut g_hat = Mat::<f64>::zeros(p, t);
        matmul(
            g_hat.as_mut(),
            Accum::Replace,
            hat.0.transpose(),
            gates.as_ref().subcols(t, t),
            1.0,
            par(),
        );
        for i in 0..t {
            let mut diff = 0.0;
            for j in 0..m {
                let aj = a[(j, i)];
                diff += err.1[j] * relu(aj) + u0[j] * relu_grad(aj) * e[(j, i)];
            }
            let diff = s * diff;
            out.0.push(diff * diff);
            let (mut gh, mut gi) = (0.0, 0.0);
            for k in 0..p {
                let v = s * (g0[(k, i)] + g_hat[(k, i)]);
                let w = s * g0[(k, t + i)];
                gh += v * v;
                gi += w * w;
            }
            out.1.push(gh);
            out.2.push(gi);
        }
        start += t;
    }
    out
}

/// Standard risk and gradient-norm adversarial proxy of a fitted network,
/// by Monte Carlo over fresh inputs. The risks are conditional on the
/// training data; `pga` adds the projected-gradient-ascent sup estimate.
#[allow(clippy::too_many_arguments)]
pub fn ntk_risks(
    model: &NtkModel,
    fit: &NtkFit,
    w_star: &[f64],
    alpha: f64,
    trials: usize,
    seed: u64,
    spec: &Spectrum,
    pga: bool,
) -> Result<NtkRiskReport> {
    if trials < 2 {
        return Err(Error::TooFewTrials(trials));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(
            "alpha",
            format!("must be non-negative, got {alpha}"),
        ));
    }
    let sqrt_l = check_spec(model, spec)?;
    model.check_w(&fit.w_hat)?;
    model.check_w(w_star)?;
    let (h_theta, h_u) = offset(model, &fit.w_hat);
    let (s_theta, s_u) = offset(model, w_star);
    let target_distance = norm(&s_theta, &s_u);
    if target_distance > model.radius() * (1.0 + 1e-12) {
        return Err(Error::invalid(
            "w_star",
            format!(
                "‖w⋆ − w₀‖ = {target_distance} exceeds the radius {}",
                model.radius()
            ),
        ));
    }
    let e_theta = Mat::from_fn(model.m(), model.p(), |j, k| {
        h_theta[(j, k)] - s_theta[(j, k)]
    });
    let e_u: Vec<f64> = h_u.iter().zip(&s_u).map(|(a, b)| a - b).collect();
    let (sq, gh, gi) = mc_pass(
        model,
        (&h_theta, &h_u),
        (&e_theta, &e_u),
        &sqrt_l,
        trials,
        seed,
    );
    let grad_norm_sq = McEstimate::from_samples(&gh)?;
    let pga = if pga {
        Some(pga_estimate(
            model, fit, w_star, alpha, &sqrt_l, trials, seed,
        )?)
    } else {
        None
    };
    Ok(NtkRiskReport {
        std: McEstimate::from_samples(&sq)?,
        grad_norm_sq,
        grad_norm_sq_init: McEstimate::from_samples(&gi)?,
        adv_proxy: alpha * alpha * grad_norm_sq.mean,
        adv_proxy_se: alpha * alpha * grad_norm_sq.std_error,
        budget: alpha,
        param_distance: norm(&h_theta, &h_u),
        target_distance,
        pga,
    })
}

/// sup over ‖δ‖ ≤ α of (f_NTK(ŵ, x + δ) − f_NTK(w⋆, x))², by PGA_STEPS
/// normalized ascent steps of size α/10 from the one-step linear optimum,
/// keeping the best iterate.
fn pga_estimate(
    model: &NtkModel,
    fit: &NtkFit,
    w_star: &[f64],
    alpha: f64,
    sqrt_l: &[f64],
    trials: usize,
    seed: u64,
) -> Result<McEstimate> {
    let hat = Linearized::new(model, &fit.w_hat)?;
    let star = Linearized::new(model, w_star)?;
    let step = alpha / 10.0;
    let vals: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let x = sample_point(
                sqrt_l,
                DesignDist::Gaussian,
                &mut rng::stream(seed, t as u64),
            );
            let target = star.value(&x);
            let obj = |d: &[f64]| {
                let z: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + b).collect();
                let r = hat.value(&z) - target;
                (r * r, r, z)
            };
            let mut delta = vec![0.0; x.len()];
            let (mut best, r0, _) = obj(&delta);
            let g = hat.input_gradient(&x);
            let gn = linalg::norm_sq(&g).sqrt();
            if gn > 0.0 && alpha > 0.0 {
                let sign = if r0 >= 0.0 { 1.0 } else { -1.0 };
                delta = g.iter().map(|v| sign * alpha * v / gn).collect();
            }
            for _ in 0..PGA_STEPS {
                let (val, r, z) = obj(&delta);
                best = best.max(val);
                let g = hat.input_gradient(&z);
                let gn = linalg::norm_sq(&g).sqrt();
                if gn == 0.0 || r == 0.0 {
                    break;
                }
                let sign = r.signum();
                for (d, gv) in delta.iter_mut().zip(&g) {
                    *d += step * sign * gv / gn;
                }
                let dn = linalg::norm_sq(&delta).sqrt();
                if dn > alpha {
                    for d in delta.iter_mut() {
                        *d *= alpha / dn;
                    }
                }
            }
            best.max(obj(&delta).0)
        })
        .collect();
    McEstimate::from_samples(&vals)
}

/// E_x‖∇_x f(w₀, x)‖² by Monte Carlo.
pub fn gradient_norm_at_init(
    model: &NtkModel,
    spec: &Spectrum,
    trials: usize,
    seed: u64,
) -> Result<McEstimate> {
    if trials < 2 {
        return Err(Error::TooFewTrials(trials));
    }
    let sqrt_l = check_spec(model, spec)?;
    let zt = Mat::<f64>::zeros(model.m(), model.p());
    let zu = vec![0.0; model.m()];
    let (_, _, gi) = mc_pass(model, (&zt, &zu), (&zt, &zu), &sqrt_l, trials, seed);
    McEstimate::from_samples(&gi)
}

/// w⋆ = w₀ + R·d/‖d‖ with d = ∇F(X′)ᵀv for a held-out design X′ of
/// `holdout_n` rows and Gaussian v, so w⋆ − w₀ lies in a feature row space.
pub fn make_target(
    model: &NtkModel,
    spec: &Spectrum,
    holdout_n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_spec(model, spec)?;
    if holdout_n == 0 {
        return Err(Error::invalid("holdout_n", "must be positive"));
    }
    let design = sample_design(spec, holdout_n, DesignDist::Gaussian, seed);
    let a = preactivations(model, design.x.as_ref());
    let mut r = rng::stream(rng::derive(seed, &[1]), 0);
    let v: Vec<f64> = (0..holdout_n)
        .map(|_| StandardNormal.sample(&mut r))
        .collect();
    let (mut d_theta, mut d_u) = features_t_times(model, a.as_ref(), design.x.as_ref(), &v);
    let nrm = norm(&d_theta, &d_u);
    if nrm == 0.0 {
        return Err(Error::ZeroParameterNorm);
    }
    let f = model.radius() / nrm;
    let th0 = model.theta0();
    for k in 0..model.p() {
        for j in 0..model.m() {
            d_theta[(j, k)] = th0[(j, k)] + f * d_theta[(j, k)];
        }
    }
    for (d, u) in d_u.iter_mut().zip(model.u0()) {
        *d = u + f * *d;
    }
    Ok(flatten(model, d_theta.as_ref(), &d_u))
}

/// yᵢ = f_NTK(w⋆, xᵢ) + εᵢ, εᵢ ~ N(0, σ²) from stream (seed, 0).
pub fn ntk_labels(
    model: &NtkModel,
    w_star: &[f64],
    x: MatRef<'_, f64>,
    noise_variance: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    model.check_rows(x)?;
    model.check_w(w_star)?;
    if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
        return Err(Error::invalid(
            "noise_variance",
            format!("must be non-negative, got {noise_variance}"),
        ));
    }
    let (d_theta, d_u) = offset(model, w_star);
    let a = preactivations(model, x);
    let lin = linalg::mul(x, d_theta.transpose());
    let u0 = model.u0();
    let s = model.scale();
    let sd = noise_variance.sqrt();
    let mut r = rng::stream(seed, 0);
    Ok((0..x.nrows())
        .map(|i| {
            let mut f = 0.0;
            for j in 0..model.m() {
                let aij = a[(i, j)];
                f += (u0[j] + d_u[j]) * relu(aij) + u0[j] * relu_grad(aij) * lin[(i, j)];
            }
            let e: f64 = StandardNormal.sample(&mut r);
            s * f + sd * e
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ntk::{forward, init_network, input_gradient, ntk_fixed_point, Mode};
    use crate::spectra::{make_spectrum, Family};

    fn iso(p: usize) -> Spectrum {
        make_spectrum(&Family::Isotropic { d: p, noise: 1.0 }, 2, p)
            .unwrap()
            .0
    }

    #[test]
    fn target_is_on_the_sphere() {
        let md = init_network(30, 4, 1).unwrap().with_radius(2.0).unwrap();
        let w = make_target(&md, &iso(4), 5, 3).unwrap();
        let w0 = md.w0();
        let d: f64 = w
            .iter()
            .zip(&w0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!((d - 2.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_fit_has_zero_risk() {
        let md = init_network(20, 3, 2).unwrap();
        let spec = iso(3);
        let w_star = make_target(&md, &spec, 4, 5).unwrap();
        let fit = NtkFit {
            w_hat: w_star.clone(),
            dual: vec![],
            solve_residual: 0.0,
            gd_trace: None,
        };
        let r = ntk_risks(&md, &fit, &w_star, 0.1, 50, 1, &spec, false).unwrap();
        assert_eq!(r.std.mean, 0.0);
        assert_eq!(r.std.std_error, 0.0);
    }

    #[test]
    fn batched_samples_match_pointwise_evaluation() {
        let md = init_network(25, 3, 4).unwrap();
        let spec = iso(3);
        let w_star = make_target(&md, &spec, 6, 7).unwrap();
        let x = sample_design(&spec, 6, DesignDist::Gaussian, 8);
        let y = ntk_labels(&md, &w_star, x.x.as_ref(), 0.0, 1).unwrap();
        for i in 0..6 {
            let xi: Vec<f64> = (0..3).map(|j| x.x[(i, j)]).collect();
            let f = forward(&md, &w_star, &xi, Mode::Ntk).unwrap();
            assert!((f - y[i]).abs() < 1e-12);
        }
        let y = ntk_labels(&md, &w_star, x.x.as_ref(), 0.3, 1).unwrap();
        let fit = ntk_fixed_point(&md, x.x.as_ref(), &y).unwrap();
        let trials = 300;
        let r = ntk_risks(&md, &fit, &w_star, 1.0, trials, 9, &spec, false).unwrap();
        let sqrt_l = vec![1.0; 3];
        let (mut sq, mut gh) = (0.0, 0.0);
        for t in 0..trials {
            let z = sample_point(&sqrt_l, DesignDist::Gaussian, &mut rng::stream(9, t as u64));
            let d = forward(&md, &fit.w_hat, &z, Mode::Ntk).unwrap()
                - forward(&md, &w_star, &z, Mode::Ntk).unwrap();
            sq += d * d;
            gh += linalg::norm_sq(&input_gradient(&md, &fit.w_hat, &z).unwrap());
        }
        assert!((r.std.mean - sq / trials as f64).abs() < 1e-12 * (1.0 + r.std.mean));
        assert!((r.grad_norm_sq.mean - gh / trials as f64).abs() < 1e-10);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let md = init_network(12, 4, 3).unwrap();
        let mut w = md.w0();
        for (i, v) in w.iter_mut().enumerate() {
            *v += 0.05 * ((i * 7) as f64).cos();
        }
        let x = [0.7, -0.2, 1.3, 0.4];
        let g = input_gradient(&md, &w, &x).unwrap();
        let h = 1e-6;
        for k in 0..4 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let fd = (forward(&md, &w, &xp, Mode::Ntk).unwrap()
                - forward(&md, &w, &xm, Mode::Ntk).unwrap())
                / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6, "{fd} {}", g[k]);
        }
    }

    #[test]
    fn pga_dominates_the_unperturbed_error() {
        let md = init_network(30, 3, 6).unwrap();
        let spec = iso(3);
        let w_star = make_target(&md, &spec, 5, 1).unwrap();
        let x = sample_design(&spec, 5, DesignDist::Gaussian, 2);
        let y = ntk_labels(&md, &w_star, x.x.as_ref(), 0.5, 3).unwrap();
        let fit = ntk_fixed_point(&md, x.x.as_ref(), &y).unwrap();
        let r = ntk_risks(&md, &fit, &w_star, 0.5, 40, 4, &spec, true).unwrap();
        assert!(r.pga.unwrap().mean >= r.std.mean);
    }

    #[test]
    fn rejects_far_targets_and_few_trials() {
        let md = init_network(10, 2, 1).unwrap();
        let spec = iso(2);
        let mut w_star = md.w0();
        w_star[0] += 1.5;
        let fit = NtkFit {
            w_hat: md.w0(),
            dual: vec![],
            solve_residual: 0.0,
            gd_trace: None,
        };
        assert!(ntk_risks(&md, &fit, &w_star, 0.1, 10, 1, &spec, false).is_err());
        assert!(ntk_risks(&md, &fit, &md.w0(), 0.1, 1, 1, &spec, false).is_err());
    }
}
