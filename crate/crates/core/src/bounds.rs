//! Shapes of the ridge risk bounds, up to the unspecified constants.
//!
//! Every multiplier C₁…C₉ defaults to 1; the bounds are meant for trend
//! and dominance checks with constants calibrated on data, never for
//! absolute comparisons.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectra::{
    critical_index, effective_ranks, signal_energy, tradeoff_index, ParameterWeights, Spectrum,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    pub c7: f64,
    pub c8: f64,
    pub c9: f64,
    pub c: f64,
    pub b: f64,
}

impl Default for BoundConstants {
    fn default() -> Self {
        BoundConstants {
            c1: 1.0,
            c2: 1.0,
            c3: 1.0,
            c4: 1.0,
            c5: 1.0,
            c6: 1.0,
            c7: 1.0,
            c8: 1.0,
            c9: 1.0,
            c: 1.0,
            b: 2.0,
        }
    }
}

impl BoundConstants {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("c1", self.c1),
            ("c2", self.c2),
            ("c3", self.c3),
            ("c4", self.c4),
            ("c5", self.c5),
            ("c6", self.c6),
            ("c7", self.c7),
            ("c8", self.c8),
            ("c9", self.c9),
            ("c", self.c),
            ("b", self.b),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(
                    format!("constants.{name}"),
                    format!("must be positive, got {v}"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Regime {
    /// λ ≤ λ_{k*+1}r_{k*}/n.
    SmallReg,
    Intermediate,
    /// λ ≥ λ₁.
    LargeReg,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::SmallReg => "small",
            Regime::Intermediate => "intermediate",
            Regime::LargeReg => "large",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub srisk_upper: f64,
    pub srisk_lower: Option<f64>,
    pub norm_lower: f64,
    pub regime: Regime,
    pub delta_lambda: Option<f64>,
    pub note: Option<String>,
}

/// A bound split into its noise-free part and its σ²-proportional part;
/// the bound is the multiplier times their sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundParts {
    pub signal: f64,
    pub noise: f64,
}

impl BoundParts {
    pub fn total(self, c: f64) -> f64 {
        c * (self.signal + self.noise)
    }
}

/// Spectral quantities at the critical index shared by all bounds.
struct Head {
    n: f64,
    k: usize,
    /// λ_{k*+1} r_{k*} = Σ_{i>k*} λᵢ.
    s: f64,
    lambda_next: f64,
    big_r: f64,
    /// ‖θ_{k*:∞}‖²_Σ.
    tail_signal: f64,
    /// ‖θ_{0:k*}‖²_{Σ⁻¹}.
    head_inv: f64,
    /// Σ_{j>k*} θ̃ⱼ²λⱼ².
    tail_wl2: f64,
    /// Σ_{i>k*} λᵢ².
    tail_l2: f64,
}

impl Head {
    fn new(spec: &Spectrum, w: &ParameterWeights, n: usize, b: f64) -> Result<Head> {
        w.check_aligned(spec)?;
        if n == 0 {
            return Err(Error::invalid("n", "must be positive"));
        }
        let k = critical_index(spec, b, n).ok_or(Error::MissingCriticalIndex { b, n })?;
        let (_, big_r) = effective_ranks(spec, k)?;
        let lam = spec.eigenvalues();
        let th = w.weights_sq();
        let tail = w.tail();
        let tail_signal = lam[k..]
            .iter()
            .zip(&th[k..])
            .map(|(l, t)| l * t)
            .sum::<f64>()
            + tail.weighted;
        let tail_wl2 = lam[k..]
            .iter()
            .zip(&th[k..])
            .map(|(l, t)| l * l * t)
            .sum::<f64>()
            + tail.weighted_sq;
        let head_inv = lam[..k].iter().zip(&th[..k]).map(|(l, t)| t / l).sum();
        Ok(Head {
            n: n as f64,
            k,
            s: spec.sum_after(k),
            lambda_next: spec.lambda_after(k),
            big_r,
            tail_signal,
            head_inv,
            tail_wl2,
            tail_l2: spec.sum_sq_after(k),
        })
    }

    fn boundary(&self) -> f64 {
        self.s / self.n
    }
}

fn check_common(noise_variance: f64, lambda: f64, consts: &BoundConstants) -> Result<()> {
    if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
        return Err(Error::invalid(
            "noise_variance",
            format!("must be non-negative, got {noise_variance}"),
        ));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(
            "lambda",
            format!("must be non-negative, got {lambda}"),
        ));
    }
    consts.validate()
}

/// λ_{k*+1}r_{k*}/n, the upper edge of the small-λ regime.
pub fn small_regime_boundary(spec: &Spectrum, n: usize, b: f64) -> Result<f64> {
    let k = critical_index(spec, b, n).ok_or(Error::MissingCriticalIndex { b, n })?;
    Ok(spec.sum_after(k) / n as f64)
}

fn classify(h: &Head, spec: &Spectrum, lambda: f64) -> Regime {
    if lambda <= h.boundary() {
        Regime::SmallReg
    } else if lambda >= spec.eigenvalues()[0] {
        Regime::LargeReg
    } else {
        Regime::Intermediate
    }
}

fn ridge_parts(
    h: &Head,
    spec: &Spectrum,
    w: &ParameterWeights,
    sigma2: f64,
    lambda: f64,
) -> (BoundParts, BoundParts) {
    let n = h.n;
    let nl = n * lambda;
    let srisk = BoundParts {
        signal: h.tail_signal + (h.s * h.s + nl * nl) / (n * n) * h.head_inv,
        noise: sigma2 * (h.k as f64 / n + n * h.tail_l2 / (h.s + nl).powi(2)),
    };
    let lam = spec.eigenvalues();
    let th = w.weights_sq();
    let (mut head_sig, mut head_noise) = (0.0, 0.0);
    for i in 0..h.k {
        let m = (1.0 / n).min(n * lam[i] * lam[i] / (h.s + nl).powi(2));
        head_sig += n * th[i] * m;
        head_noise += sigma2 / lam[i] * m;
    }
    let den = h.s * h.s + nl * nl;
    let norm = BoundParts {
        signal: head_sig + n * n * h.tail_wl2 / den,
        noise: head_noise + n * sigma2 * h.s / den,
    };
    (srisk, norm)
}

/// Signal and noise parts of the general-λ bounds (standard-risk upper,
/// parameter-norm lower).
pub fn thm_ridge_parts(
    spec: &Spectrum,
    w: &ParameterWeights,
    noise_variance: f64,
    n: usize,
    lambda: f64,
    b: f64,
) -> Result<(BoundParts, BoundParts)> {
    let h = Head::new(spec, w, n, b)?;
    Ok(ridge_parts(&h, spec, w, noise_variance, lambda))
}

/// Bounds valid for every λ ≥ 0.
pub fn thm_ridge_bounds(
    spec: &Spectrum,
    w: &ParameterWeights,
    noise_variance: f64,
    n: usize,
    lambda: f64,
    consts: &BoundConstants,
) -> Result<BoundReport> {
    check_common(noise_variance, lambda, consts)?;
    let h = Head::new(spec, w, n, consts.b)?;
    let (s, nm) = ridge_parts(&h, spec, w, noise_variance, lambda);
    Ok(BoundReport {
        srisk_upper: s.total(consts.c1),
        srisk_lower: None,
        norm_lower: nm.total(consts.c2),
        regime: classify(&h, spec, lambda),
        delta_lambda: None,
        note: None,
    })
}

/// Signal and noise parts of the small-λ bounds.
pub fn small_reg_parts(
    spec: &Spectrum,
    w: &ParameterWeights,
    noise_variance: f64,
    n: usize,
    b: f64,
) -> Result<(BoundParts, BoundParts)> {
    let h = Head::new(spec, w, n, b)?;
    Ok(small_parts(&h, spec, w, noise_variance))
}

fn small_parts(
    h: &Head,
    spec: &Spectrum,
    w: &ParameterWeights,
    sigma2: f64,
) -> (BoundParts, BoundParts) {
    let n = h.n;
    let t = h.s / n;
    let srisk = BoundParts {
        signal: h.tail_signal + t * t * h.head_inv,
        noise: sigma2 * (h.k as f64 / n + n / h.big_r),
    };
    let lam = spec.eigenvalues();
    let th = w.weights_sq();
    let (mut head_sig, mut head_noise) = (0.0, 0.0);
    for i in 0..h.k {
        let m = (1.0 / n).min(n * lam[i] * lam[i] / (h.s * h.s));
        head_sig += n * th[i] * m;
        head_noise += sigma2 / lam[i] * m;
    }
    let norm = BoundParts {
        signal: head_sig + n * n * h.tail_wl2 / (h.s * h.s),
        noise: head_noise + n * sigma2 / h.s,
    };
    (srisk, norm)
}

/// Bounds for λ ≤ λ_{k*+1}r_{k*}/n.
pub fn small_reg_bounds(
    spec: &Spectrum,
    w: &ParameterWeights,
    noise_variance: f64,
    n: usize,
    lambda: f64,
    consts: &BoundConstants,
) -> Result<BoundReport> {
    check_common(noise_variance, lambda, consts)?;
    let h = Head::new(spec, w, n, consts.b)?;
    if lambda > h.boundary() {
        return Err(Error::RegimeMismatch {
            lambda,
            boundary: h.boundary(),
            detail: "small-regularization bounds need λ ≤ λ_{k*+1}r_{k*}/n".into(),
        });
    }
    let (s, nm) = small_parts(&h, spec, w, noise_variance);
    Ok(BoundReport {
        srisk_upper: s.total(consts.c3),
        srisk_lower: None,
        norm_lower: nm.total(consts.c4),
        regime: Regime::SmallReg,
        delta_lambda: None,
        note: None,
    })
}

/// Signal and noise parts of the large-λ lower bounds. Tail coordinates
/// count as λᵢ < λ.
pub fn large_reg_parts(
    spec: &Spectrum,
    w: &ParameterWeights,
    noise_variance: f64,
    lambda: f64,
    n: usize,
) -> (BoundParts, BoundParts) {
    let lam = spec.eigenvalues();
    let th = w.weights_sq();
    let tail = w.tail();
    let l2 = lambda * lambda;
    let (mut s_sig, mut s_cnt, mut s_small) = (0.0, 0.0, 0.0);
    let (mut n_sig, mut n_inv, mut n_small) = (0.0, 0.0, 0.0);
    for (&li, &ti) in lam.iter().zip(th) {
        if li >= lambda {
            s_sig += ti * l2 / li;
            s_cnt += 1.0;
            n_sig += ti;
            n_inv += 1.0 / li;
        } else {
            s_sig += ti * li;
            s_small += li * li / l2;
            n_sig += ti * li * li / l2;
            n_small += li / l2;
        }
    }
    s_sig += tail.weighted;
    n_sig += tail.weighted_sq / l2;
    s_small += spec.tail_sum_sq().unwrap_or(0.0) / l2;
    n_small += spec.tail_sum().unwrap_or(0.0) / l2;
    let nf = n as f64;
    (
        BoundParts {
            signal: s_sig,
            noise: noise_variance / nf * (s_cnt + s_small),
        },
        BoundParts {
            signal: n_sig,
            noise: noise_variance / nf * (n_inv + n_small),
        },
    )
}

/// Lower bounds for λ ≥ λ_{k*+1}r_{k*}/n; the general upper bound is
/// carried along since it holds for every λ.
pub fn large_reg_lower(
    spec: &Spectrum,
    w: &ParameterWeights,
    noise_variance: f64,
    n: usize,
    lambda: f64,
    consts: &BoundConstants,
) -> Result<BoundReport> {
    check_common(noise_variance, lambda, consts)?;
    let h = Head::new(spec, w, n, consts.b)?;
    if lambda < h.boundary() {
        return Err(Error::RegimeMismatch {
            lambda,
            boundary: h.boundary(),
            detail: "large-regularization bounds need λ ≥ λ_{k*+1}r_{k*}/n".into(),
        });
    }
    let (s, nm) = large_reg_parts(spec, w, noise_variance, lambda, n);
    let (up, _) = ridge_parts(&h, spec, w, noise_variance, lambda);
    Ok(BoundReport {
        srisk_upper: up.total(consts.c1),
        srisk_lower: Some(s.total(consts.c5)),
        norm_lower: nm.total(consts.c6),
        regime: classify(&h, spec, lambda),
        delta_lambda: None,
        note: None,
    })
}

/// Δ(λ) of the intermediate regime.
#[allow(clippy::too_many_arguments)]
fn delta(
    h: &Head,
    spec: &Spectrum,
    w: &ParameterWeights,
    lambda: f64,
    alpha: f64,
    adv_risk_ref: f64,
) -> f64 {
    let lam = spec.eigenvalues();
    let th = w.weights_sq();
    let mut num = 0.0;
    for (&li, &ti) in lam.iter().zip(th) {
        if li > lambda {
            num += lambda * lambda * ti / li;
        } else {
            num += ti * li;
        }
    }
    num += w.tail().weighted;
    let den = w.norm_sq() * (h.lambda_next * h.lambda_next * h.head_inv + h.tail_signal);
    let first = num / den;
    let rate = (h.k as f64 / h.n).max(h.n / h.big_r).sqrt();
    let second = alpha * alpha / (adv_risk_ref * rate);
    first.min(second)
}

/// Regime of λ with the matching lower bound on the standard risk:
/// none for small λ, C₉‖θ‖²S(0)Δ(λ) below λ_{w*}, ‖θ‖²S(0) from λ_{w*} to
/// λ₁, and C₈‖θ‖²_Σ beyond λ₁.
#[allow(clippy::too_many_arguments)]
pub fn regime_classify(
    spec: &Spectrum,
    w: &ParameterWeights,
    noise_variance: f64,
    n: usize,
    lambda: f64,
    alpha: f64,
    consts: &BoundConstants,
    minnorm_srisk_ref: f64,
    adv_risk_ref: f64,
) -> Result<BoundReport> {
    check_common(noise_variance, lambda, consts)?;
    let h = Head::new(spec, w, n, consts.b)?;
    let (up, nm) = ridge_parts(&h, spec, w, noise_variance, lambda);
    let regime = classify(&h, spec, lambda);
    let mut report = BoundReport {
        srisk_upper: up.total(consts.c1),
        srisk_lower: None,
        norm_lower: nm.total(consts.c2),
        regime,
        delta_lambda: None,
        note: None,
    };
    let theta2 = w.norm_sq();
    match regime {
        Regime::SmallReg => {}
        Regime::LargeReg => {
            report.srisk_lower = Some(consts.c8 * signal_energy(spec, w));
        }
        Regime::Intermediate => {
            let w_star = if theta2 > 0.0 {
                tradeoff_index(spec, w, n, consts.b)?
            } else {
                None
            };
            match w_star {
                None => {
                    report.note =
                        Some("w* absent: intermediate-regime bound unavailable".to_string());
                }
                Some(ws) => {
                    // λ_{w*} with w* = 0 read as λ₁.
                    let lw = spec.eigenvalues()[ws.saturating_sub(1)];
                    if lambda < lw {
                        let d = delta(&h, spec, w, lambda, alpha, adv_risk_ref);
                        report.delta_lambda = Some(d);
                        report.srisk_lower = Some(consts.c9 * theta2 * minnorm_srisk_ref * d);
                    } else {
                        report.srisk_lower = Some(theta2 * minnorm_srisk_ref);
                    }
                }
            }
        }
    }
    Ok(report)
}
