use serde::Serialize;

use super::{ParameterWeights, Spectrum};
use crate::error::{Error, Result};

/// Rank diagnostics of a spectrum at sample size n.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankReport {
    /// Index the ranks are reported at (k* when it exists, else 0).
    pub k: usize,
    pub r_k: f64,
    #[serde(rename = "R_k")]
    pub big_r_k: f64,
    pub s_k: Option<f64>,
    pub k_star: Option<usize>,
    pub w_star: Option<usize>,
    pub b: f64,
}

/// (r_k, R_k) = (Σ_{i>k}λᵢ / λ_{k+1}, (Σ_{i>k}λᵢ)² / Σ_{i>k}λᵢ²).
pub fn effective_ranks(spec: &Spectrum, k: usize) -> Result<(f64, f64)> {
    if k >= spec.truncation_dim() {
        return Err(Error::UndefinedRank { k });
    }
    let s = spec.sum_after(k);
    Ok((s / spec.lambda_after(k), s * s / spec.sum_sq_after(k)))
}

/// k*(b) = min{k : r_k ≥ b·n}, searched within the truncation.
pub fn critical_index(spec: &Spectrum, b: f64, n: usize) -> Option<usize> {
    let target = b * n as f64;
    (0..spec.truncation_dim()).find(|&k| spec.sum_after(k) >= target * spec.lambda_after(k))
}

/// Σ_{i>k} λᵢθ̃ᵢ² for every k, tail included; length p + 1.
fn weighted_suffix(spec: &Spectrum, w: &ParameterWeights) -> Vec<f64> {
    let p = spec.truncation_dim();
    let mut out = vec![0.0; p + 1];
    out[p] = w.tail().weighted;
    for i in (0..p).rev() {
        out[i] = out[i + 1] + spec.eigenvalues()[i] * w.weights_sq()[i];
    }
    out
}

fn s_from(spec: &Spectrum, norm_sq: f64, weighted_after: f64, k: usize) -> f64 {
    let l = spec.lambda_after(k);
    weighted_after * spec.sum_after(k) / (norm_sq * l * l)
}

/// Cross effective rank s_k = ‖θ_{k:∞}‖²_Σ · Σ_{i>k}λᵢ / (‖θ‖² λ_{k+1}²).
pub fn cross_effective_rank(spec: &Spectrum, w: &ParameterWeights, k: usize) -> Result<f64> {
    w.check_aligned(spec)?;
    if k >= spec.truncation_dim() {
        return Err(Error::UndefinedRank { k });
    }
    if w.norm_sq() <= 0.0 {
        return Err(Error::ZeroParameterNorm);
    }
    let p = spec.truncation_dim();
    let weighted: f64 = spec.eigenvalues()[k..]
        .iter()
        .zip(&w.weights_sq()[k..])
        .rev()
        .map(|(l, t)| l * t)
        .sum::<f64>()
        + w.tail().weighted;
    debug_assert!(p > k);
    Ok(s_from(spec, w.norm_sq(), weighted, k))
}

/// w* = min{w : s_w ≥ n·√max(k*/n, n/R_{k*})} with threshold multiplier 1.
pub fn tradeoff_index(
    spec: &Spectrum,
    w: &ParameterWeights,
    n: usize,
    b: f64,
) -> Result<Option<usize>> {
    w.check_aligned(spec)?;
    let k_star = critical_index(spec, b, n).ok_or(Error::MissingCriticalIndex { b, n })?;
    if w.norm_sq() <= 0.0 {
        return Err(Error::ZeroParameterNorm);
    }
    let threshold = tradeoff_threshold(spec, n, k_star)?;
    let suffix = weighted_suffix(spec, w);
    Ok((0..spec.truncation_dim()).find(|&k| s_from(spec, w.norm_sq(), suffix[k], k) >= threshold))
}

pub(crate) fn tradeoff_threshold(spec: &Spectrum, n: usize, k_star: usize) -> Result<f64> {
    let nf = n as f64;
    let (_, big_r) = effective_ranks(spec, k_star)?;
    Ok(nf * (k_star as f64 / nf).max(nf / big_r).sqrt())
}

/// Ranks at k* (or at 0 when k* is absent), s_{k}, k* and w*.
pub fn rank_report(spec: &Spectrum, w: &ParameterWeights, n: usize, b: f64) -> Result<RankReport> {
    let k_star = critical_index(spec, b, n);
    let k = k_star.unwrap_or(0);
    let (r_k, big_r_k) = effective_ranks(spec, k)?;
    let s_k = if w.norm_sq() > 0.0 {
        Some(cross_effective_rank(spec, w, k)?)
    } else {
        None
    };
    let w_star = match k_star {
        Some(_) if w.norm_sq() > 0.0 => tradeoff_index(spec, w, n, b)?,
        _ => None,
    };
    Ok(RankReport {
        k,
        r_k,
        big_r_k,
        s_k,
        k_star,
        w_star,
        b,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{make_spectrum, Family};
    use super::*;

    fn geometric(m: usize) -> Spectrum {
        let v: Vec<f64> = (1..=m).map(|i| 0.5f64.powi(i as i32)).collect();
        Spectrum::new(v, None, None, Family::Example1).unwrap()
    }

    #[test]
    fn isotropic_ranks() {
        let (s, _, _) = make_spectrum(
            &Family::Isotropic {
                d: 1000,
                noise: 1.0,
            },
            100,
            1000,
        )
        .unwrap();
        let (r, big_r) = effective_ranks(&s, 0).unwrap();
        assert!((r - 1000.0).abs() < 1e-9);
        assert!((big_r - 1000.0).abs() < 1e-9);
        assert_eq!(critical_index(&s, 1.0, 100), Some(0));
    }

    #[test]
    fn geometric_ranks_by_summation() {
        let s = geometric(50);
        let (r0, _) = effective_ranks(&s, 0).unwrap();
        let oracle: f64 = (1..=50).map(|i| 0.5f64.powi(i)).sum::<f64>() / 0.5;
        assert!((r0 - oracle).abs() < 1e-12);
        assert!((r0 - 2.0).abs() < 1e-9);
        assert_eq!(critical_index(&s, 1.0, 100), None);
    }

    #[test]
    fn rank_past_truncation_is_undefined() {
        let s = geometric(5);
        assert!(matches!(
            effective_ranks(&s, 5),
            Err(Error::UndefinedRank { k: 5 })
        ));
    }

    #[test]
    fn cross_rank_examples() {
        let (s, w, _) = make_spectrum(&Family::Isotropic { d: 4, noise: 1.0 }, 2, 4).unwrap();
        assert!((cross_effective_rank(&s, &w, 0).unwrap() - 4.0).abs() < 1e-12);

        let fam = Family::Custom {
            eigenvalues: vec![1.0, 0.5, 0.25],
            weights_sq: vec![1.0, 0.0, 0.0],
            noise: 1.0,
        };
        let (s, w, _) = make_spectrum(&fam, 2, 3).unwrap();
        assert_eq!(cross_effective_rank(&s, &w, 1).unwrap(), 0.0);

        let zero = ParameterWeights::new(vec![0.0; 3], None).unwrap();
        assert!(matches!(
            cross_effective_rank(&s, &zero, 0),
            Err(Error::ZeroParameterNorm)
        ));
    }

    #[test]
    fn tradeoff_index_requires_critical_index() {
        let s = geometric(20);
        let w = ParameterWeights::new(vec![1.0; 20], None).unwrap();
        assert!(matches!(
            tradeoff_index(&s, &w, 100, 1.0),
            Err(Error::MissingCriticalIndex { .. })
        ));
    }

    #[test]
    fn isotropic_tradeoff_index_is_zero() {
        let (s, w, _) = make_spectrum(
            &Family::Isotropic {
                d: 10_000,
                noise: 1.0,
            },
            50,
            10_000,
        )
        .unwrap();
        // s_0 = d = 10⁴, threshold = n·√(n/d) ≈ 3.5.
        assert_eq!(tradeoff_index(&s, &w, 50, 2.0).unwrap(), Some(0));
    }
}
