//! Covariance spectra, parameter weights and effective-rank diagnostics.
//!
//! Everything is expressed in the eigenbasis of Σ (V = I), so a spectrum is
//! just its non-increasing eigenvalue sequence and the ground truth enters
//! only through the squared weights θ̃ᵢ².

mod conditions;
mod family;
mod ranks;
mod tail;

pub use conditions::{
    check_conditions, check_family_conditions, condition_points, ConditionKind, ConditionPoint,
    ConditionReport, Term, Truncation, Verdict, WidthRule,
};
pub use family::Family;
pub use ranks::{
    critical_index, cross_effective_rank, effective_ranks, rank_report, tradeoff_index, RankReport,
};

use serde::Serialize;

use crate::error::{Error, Result};
use tail::{series_tail, Series, Upper};

/// Materialized eigenvalues with optional analytic tail sums.
#[derive(Clone, Debug)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    tail_sum: Option<f64>,
    tail_sum_sq: Option<f64>,
    family: Family,
    // suffix[k] = Σ_{i>k} λᵢ (1-based i), tail included; length p + 1.
    suffix: Vec<f64>,
    suffix_sq: Vec<f64>,
}

impl Spectrum {
    pub fn new(
        eigenvalues: Vec<f64>,
        tail_sum: Option<f64>,
        tail_sum_sq: Option<f64>,
        family: Family,
    ) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::invalid("eigenvalues", "must be non-empty"));
        }
        if let Some(&bad) = eigenvalues.iter().find(|&&l| !(l.is_finite() && l > 0.0)) {
            return Err(Error::invalid(
                "eigenvalues",
                format!("must be positive and finite, got {bad}"),
            ));
        }
        if let Some(i) = eigenvalues.windows(2).position(|w| w[1] > w[0]) {
            return Err(Error::invalid(
                "eigenvalues",
                format!("must be non-increasing (index {})", i + 1),
            ));
        }
        let last = *eigenvalues.last().unwrap();
        if tail_sum.is_some() != tail_sum_sq.is_some() {
            return Err(Error::invalid(
                "tail",
                "tail_sum and tail_sum_sq come together",
            ));
        }
        if let (Some(t), Some(t2)) = (tail_sum, tail_sum_sq) {
            if !(t.is_finite() && t >= 0.0 && t2.is_finite() && t2 >= 0.0) {
                return Err(Error::invalid(
                    "tail",
                    format!("invalid tail sums ({t}, {t2})"),
                ));
            }
            if t2 > t * last * (1.0 + 1e-9) {
                return Err(Error::invalid(
                    "tail_sum_sq",
                    format!("{t2} exceeds tail_sum·λ_p = {}", t * last),
                ));
            }
        }
        let p = eigenvalues.len();
        let mut suffix = vec![0.0; p + 1];
        let mut suffix_sq = vec![0.0; p + 1];
        suffix[p] = tail_sum.unwrap_or(0.0);
        suffix_sq[p] = tail_sum_sq.unwrap_or(0.0);
        for i in (0..p).rev() {
            suffix[i] = suffix[i + 1] + eigenvalues[i];
            suffix_sq[i] = suffix_sq[i + 1] + eigenvalues[i] * eigenvalues[i];
        }
        Ok(Spectrum {
            eigenvalues,
            tail_sum,
            tail_sum_sq,
            family,
            suffix,
            suffix_sq,
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn truncation_dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn tail_sum(&self) -> Option<f64> {
        self.tail_sum
    }

    pub fn tail_sum_sq(&self) -> Option<f64> {
        self.tail_sum_sq
    }

    pub fn has_tail(&self) -> bool {
        self.tail_sum.map_or(false, |t| t > 0.0)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    /// λ_{k+1} in 1-based indexing.
    pub fn lambda_after(&self, k: usize) -> f64 {
        self.eigenvalues[k]
    }

    /// Σ_{i>k} λᵢ including the tail.
    pub fn sum_after(&self, k: usize) -> f64 {
        self.suffix[k.min(self.eigenvalues.len())]
    }

    /// Σ_{i>k} λᵢ² including the tail.
    pub fn sum_sq_after(&self, k: usize) -> f64 {
        self.suffix_sq[k.min(self.eigenvalues.len())]
    }

    /// l = r₀(Σ) = tr Σ.
    pub fn trace(&self) -> f64 {
        self.suffix[0]
    }

    /// tr Σ².
    pub fn trace_sq(&self) -> f64 {
        self.suffix_sq[0]
    }

    /// Materialized eigenvalues scaled by `t`, tails scaled accordingly.
    pub fn scaled(&self, t: f64) -> Result<Self> {
        Spectrum::new(
            self.eigenvalues.iter().map(|l| l * t).collect(),
            self.tail_sum.map(|s| s * t),
            self.tail_sum_sq.map(|s| s * t * t),
            self.family.clone(),
        )
    }
}

/// Tail contributions of the weights beyond the truncation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct WeightTail {
    /// Σ_{i>p} θ̃ᵢ².
    pub mass: f64,
    /// Σ_{i>p} λᵢθ̃ᵢ².
    pub weighted: f64,
    /// Σ_{i>p} λᵢ²θ̃ᵢ².
    pub weighted_sq: f64,
}

/// Squared ground-truth weights θ̃ᵢ² in the eigenbasis.
#[derive(Clone, Debug)]
pub struct ParameterWeights {
    weights_sq: Vec<f64>,
    tail: WeightTail,
    norm_sq: f64,
}

impl ParameterWeights {
    pub fn new(weights_sq: Vec<f64>, tail: Option<WeightTail>) -> Result<Self> {
        if let Some(&bad) = weights_sq.iter().find(|&&w| !(w.is_finite() && w >= 0.0)) {
            return Err(Error::invalid(
                "weights_sq",
                format!("must be non-negative and finite, got {bad}"),
            ));
        }
        let tail = tail.unwrap_or_default();
        for (name, v) in [
            ("tail.mass", tail.mass),
            ("tail.weighted", tail.weighted),
            ("tail.weighted_sq", tail.weighted_sq),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid("weights tail", format!("{name} = {v}")));
            }
        }
        let norm_sq = weights_sq.iter().rev().sum::<f64>() + tail.mass;
        Ok(ParameterWeights {
            weights_sq,
            tail,
            norm_sq,
        })
    }

    pub fn weights_sq(&self) -> &[f64] {
        &self.weights_sq
    }

    pub fn len(&self) -> usize {
        self.weights_sq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights_sq.is_empty()
    }

    pub fn tail(&self) -> WeightTail {
        self.tail
    }

    /// ‖θ‖² including the tail.
    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }

    /// ‖θ‖² of the materialized coordinates only.
    pub fn materialized_norm_sq(&self) -> f64 {
        self.weights_sq.iter().rev().sum()
    }

    pub(crate) fn check_aligned(&self, spec: &Spectrum) -> Result<()> {
        if self.len() != spec.truncation_dim() {
            return Err(Error::DimensionMismatch(format!(
                "weights have length {} but the spectrum has dimension {}",
                self.len(),
                spec.truncation_dim()
            )));
        }
        Ok(())
    }
}

/// ‖θ‖²_Σ = Σᵢ λᵢθ̃ᵢ² including tails.
pub fn signal_energy(spec: &Spectrum, w: &ParameterWeights) -> f64 {
    spec.eigenvalues()
        .iter()
        .zip(w.weights_sq())
        .rev()
        .map(|(l, t)| l * t)
        .sum::<f64>()
        + w.tail().weighted
}

/// Builds the spectrum, weights and noise level σ² of a family at sample
/// size `n`, materialized to `p` coordinates.
pub fn make_spectrum(
    family: &Family,
    n: usize,
    p: usize,
) -> Result<(Spectrum, ParameterWeights, f64)> {
    family.validate()?;
    if n < 2 {
        return Err(Error::invalid("n", format!("must be at least 2, got {n}")));
    }
    if p < 2 {
        return Err(Error::invalid(
            "p",
            format!("truncation must be at least 2, got {p}"),
        ));
    }
    let nf = n as f64;
    match family {
        Family::Example1 => {
            let e = 1.0 / nf.sqrt();
            let lam: Vec<f64> = (1..=p).map(|i| (i as f64).powf(-(1.0 + e))).collect();
            let wts: Vec<f64> = (1..=p).map(|i| ex1_weight(i as f64)).collect();
            let start = p as u64 + 1;
            let up = Upper::Infinite;
            let t = |f: &dyn Fn(f64) -> f64, g: &dyn Fn(f64) -> f64| {
                series_tail(&Series { f, g }, start, up)
            };
            let ts = t(&|x| x.powf(-(1.0 + e)), &|u| (-e * u).exp());
            let ts2 = t(&|x| x.powf(-2.0 * (1.0 + e)), &|u| {
                (-(1.0 + 2.0 * e) * u).exp()
            });
            let wt = WeightTail {
                mass: t(&ex1_weight, &|u| lnp1_pow(u, 2)),
                weighted: t(&|x| x.powf(-(1.0 + e)) * ex1_weight(x), &|u| {
                    (-(1.0 + e) * u).exp() * lnp1_pow(u, 2)
                }),
                weighted_sq: t(&|x| x.powf(-2.0 * (1.0 + e)) * ex1_weight(x), &|u| {
                    (-(2.0 + 2.0 * e) * u).exp() * lnp1_pow(u, 2)
                }),
            };
            Ok((
                Spectrum::new(lam, Some(ts), Some(ts2), family.clone())?,
                ParameterWeights::new(wts, Some(wt))?,
                nf.powf(-0.25),
            ))
        }
        Family::Example2 => {
            let ln_n_max = nf.powf(0.75);
            // N = ⌊e^{n^{3/4}}⌋, exact while it fits in an integer.
            let ln_last = if ln_n_max < 36.0 {
                let last = ln_n_max.exp().floor();
                if (p as f64) > last {
                    return Err(Error::invalid(
                        "p",
                        format!("example2 at n = {n} has only {last} eigenvalues, got p = {p}"),
                    ));
                }
                last.ln()
            } else {
                ln_n_max
            };
            let lam: Vec<f64> = (1..=p).map(|i| 1.0 / i as f64).collect();
            let wts: Vec<f64> = (1..=p).map(|i| ex2_weight(i as f64)).collect();
            let complete = (p as f64) >= ln_last.exp().round();
            let start = p as u64 + 1;
            let up = Upper::Finite { ln_last };
            let t = |f: &dyn Fn(f64) -> f64, g: &dyn Fn(f64) -> f64| {
                series_tail(&Series { f, g }, start, up)
            };
            let (tails, wt) = if complete {
                ((None, None), None)
            } else {
                (
                    (
                        Some(t(&|x| 1.0 / x, &|_| 1.0)),
                        Some(t(&|x| 1.0 / (x * x), &|u| (-u).exp())),
                    ),
                    Some(WeightTail {
                        mass: t(&ex2_weight, &|u| lnp1_pow(u, 3)),
                        weighted: t(&|x| ex2_weight(x) / x, &|u| (-u).exp() * lnp1_pow(u, 3)),
                        weighted_sq: t(&|x| ex2_weight(x) / (x * x), &|u| {
                            (-2.0 * u).exp() * lnp1_pow(u, 3)
                        }),
                    }),
                )
            };
            Ok((
                Spectrum::new(lam, tails.0, tails.1, family.clone())?,
                ParameterWeights::new(wts, wt)?,
                1.0 / nf.ln(),
            ))
        }
        Family::NtkExample { s, noise } => {
            let pn = n * n;
            if p > pn {
                return Err(Error::invalid(
                    "p",
                    format!("ntk example at n = {n} has p_n = {pn} eigenvalues, got p = {p}"),
                ));
            }
            let all = ntk_eigenvalues(*s, n);
            let w = 1.0 / pn as f64;
            finite_family(family, all, vec![w; pn], p, *noise)
        }
        Family::PolyDecay {
            decay,
            weight_decay,
            noise,
        } => {
            let (a, c) = (*decay, *weight_decay);
            let lam: Vec<f64> = (1..=p).map(|i| (i as f64).powf(-a)).collect();
            let wts: Vec<f64> = (1..=p).map(|i| (i as f64).powf(-c)).collect();
            let start = p as u64 + 1;
            let pw = |q: f64| {
                series_tail(
                    &Series {
                        f: &|x: f64| x.powf(-q),
                        g: &|u: f64| (-(q - 1.0) * u).exp(),
                    },
                    start,
                    Upper::Infinite,
                )
            };
            let wt = WeightTail {
                mass: pw(c),
                weighted: pw(a + c),
                weighted_sq: pw(2.0 * a + c),
            };
            Ok((
                Spectrum::new(lam, Some(pw(a)), Some(pw(2.0 * a)), family.clone())?,
                ParameterWeights::new(wts, Some(wt))?,
                *noise,
            ))
        }
        Family::Isotropic { d, noise } => {
            if p > *d {
                return Err(Error::invalid(
                    "p",
                    format!("isotropic spectrum has d = {d} eigenvalues, got p = {p}"),
                ));
            }
            finite_family(family, vec![1.0; *d], vec![1.0 / *d as f64; *d], p, *noise)
        }
        Family::Custom {
            eigenvalues,
            weights_sq,
            noise,
        } => {
            if p > eigenvalues.len() {
                return Err(Error::invalid(
                    "p",
                    format!(
                        "custom spectrum has {} eigenvalues, got p = {p}",
                        eigenvalues.len()
                    ),
                ));
            }
            finite_family(family, eigenvalues.clone(), weights_sq.clone(), p, *noise)
        }
    }
}

/// Natural truncation of a family at sample size `n` for the given factor.
pub fn default_truncation(family: &Family, n: usize, p_factor: f64) -> usize {
    let scaled = ((n as f64) * p_factor).ceil().max(2.0) as usize;
    match family {
        Family::Example1 | Family::PolyDecay { .. } => scaled,
        Family::Example2 => {
            let ln_n_max = (n as f64).powf(0.75);
            if ln_n_max < 36.0 {
                scaled.min(ln_n_max.exp().floor() as usize)
            } else {
                scaled
            }
        }
        Family::NtkExample { .. } => n * n,
        Family::Isotropic { d, .. } => *d,
        Family::Custom { eigenvalues, .. } => eigenvalues.len(),
    }
}

fn ex1_weight(x: f64) -> f64 {
    1.0 / (x * (x + 1.0).ln().powi(2))
}

fn ex2_weight(x: f64) -> f64 {
    1.0 / (x * (x + 1.0).ln().powi(3))
}

/// 1/ln^k(e^u + 1), stable for very large u.
fn lnp1_pow(u: f64, k: i32) -> f64 {
    let l = u + (-u).exp().ln_1p();
    l.powi(-k)
}

/// Example 3 eigenvalues at sample size n, sorted non-increasingly.
fn ntk_eigenvalues(s: f64, n: usize) -> Vec<f64> {
    let pn = n * n;
    let nf = n as f64;
    let base = 1.0 + s * s - 2.0 * s * (std::f64::consts::PI / (pn as f64 + 1.0)).cos();
    let scale = nf.powf(-1.2);
    let mut v = Vec::with_capacity(pn);
    v.push(1.0);
    for k in 2..=pn {
        let num =
            1.0 + s * s - 2.0 * s * (k as f64 * std::f64::consts::PI / (pn as f64 + 1.0)).cos();
        v.push(scale * num / base);
    }
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

fn finite_family(
    family: &Family,
    lam: Vec<f64>,
    wts: Vec<f64>,
    p: usize,
    noise: f64,
) -> Result<(Spectrum, ParameterWeights, f64)> {
    let (head_l, rest_l) = lam.split_at(p);
    let (head_w, rest_w) = wts.split_at(p);
    let (tails, wt) = if rest_l.is_empty() {
        ((None, None), None)
    } else {
        let s: f64 = rest_l.iter().rev().sum();
        let s2: f64 = rest_l.iter().rev().map(|l| l * l).sum();
        let wt = WeightTail {
            mass: rest_w.iter().rev().sum(),
            weighted: rest_l.iter().zip(rest_w).rev().map(|(l, w)| l * w).sum(),
            weighted_sq: rest_l
                .iter()
                .zip(rest_w)
                .rev()
                .map(|(l, w)| l * l * w)
                .sum(),
        };
        ((Some(s), Some(s2)), Some(wt))
    };
    Ok((
        Spectrum::new(head_l.to_vec(), tails.0, tails.1, family.clone())?,
        ParameterWeights::new(head_w.to_vec(), wt)?,
        noise,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isotropic_is_constant() {
        let (s, w, noise) = make_spectrum(
            &Family::Isotropic {
                d: 1000,
                noise: 1.0,
            },
            100,
            1000,
        )
        .unwrap();
        assert!(s.eigenvalues().iter().all(|&l| l == 1.0));
        assert_eq!(s.truncation_dim(), 1000);
        assert!(s.tail_sum().is_none());
        assert!((w.norm_sq() - 1.0).abs() < 1e-12);
        assert_eq!(noise, 1.0);
    }

    #[test]
    fn example1_head_and_noise() {
        let (s, w, noise) = make_spectrum(&Family::Example1, 10_000, 200).unwrap();
        assert_eq!(s.eigenvalues()[0], 1.0);
        assert!((s.eigenvalues()[1] - 2f64.powf(-1.01)).abs() < 1e-15);
        assert!((noise - 0.1).abs() < 1e-15);
        assert!((w.weights_sq()[0] - 1.0 / 2f64.ln().powi(2)).abs() < 1e-15);
        assert!(s.has_tail());
    }

    #[test]
    fn ntk_example_matches_formula() {
        let n = 10;
        let s = 0.5;
        let (spec, w, _) = make_spectrum(&Family::NtkExample { s, noise: 1.0 }, n, 100).unwrap();
        let pn = 100.0;
        let pi = std::f64::consts::PI;
        let mut expect: Vec<f64> = vec![1.0];
        for k in 2..=100 {
            let k = k as f64;
            expect.push(
                10f64.powf(-1.2) * (1.25 - (k * pi / (pn + 1.0)).cos())
                    / (1.25 - (pi / (pn + 1.0)).cos()),
            );
        }
        expect.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in spec.eigenvalues().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14 * b);
        }
        assert!((w.norm_sq() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_truncations() {
        assert!(make_spectrum(&Family::Example1, 100, 1).is_err());
        assert!(make_spectrum(&Family::Example1, 1, 10).is_err());
        assert!(make_spectrum(&Family::Example2, 2, 6).is_err());
        assert!(make_spectrum(&Family::Example2, 2, 5).is_ok());
        assert!(make_spectrum(&Family::Isotropic { d: 4, noise: 1.0 }, 10, 5).is_err());
        assert!(make_spectrum(&Family::NtkExample { s: 0.5, noise: 1.0 }, 4, 17).is_err());
    }

    #[test]
    fn spectrum_invariants_enforced() {
        let f = Family::Example1;
        assert!(Spectrum::new(vec![1.0, 2.0], None, None, f.clone()).is_err());
        assert!(Spectrum::new(vec![1.0, 0.0], None, None, f.clone()).is_err());
        assert!(Spectrum::new(vec![1.0, 0.5], Some(1.0), Some(0.6), f.clone()).is_err());
        assert!(Spectrum::new(vec![1.0, 0.5], Some(1.0), Some(0.4), f).is_ok());
    }

    #[test]
    fn finite_tails_are_exact() {
        let fam = Family::Custom {
            eigenvalues: vec![4.0, 2.0, 1.0, 0.5],
            weights_sq: vec![1.0, 0.0, 2.0, 4.0],
            noise: 0.0,
        };
        let (s, w, _) = make_spectrum(&fam, 2, 2).unwrap();
        assert_eq!(s.tail_sum(), Some(1.5));
        assert_eq!(s.tail_sum_sq(), Some(1.25));
        assert_eq!(w.tail().mass, 6.0);
        assert_eq!(w.tail().weighted, 4.0);
        assert_eq!(w.tail().weighted_sq, 3.0);
        assert_eq!(w.norm_sq(), 7.0);
        assert_eq!(s.trace(), 7.5);
    }
}
