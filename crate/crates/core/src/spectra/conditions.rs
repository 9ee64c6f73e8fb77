use serde::Serialize;

use super::ranks::{critical_index, effective_ranks, tradeoff_index};
use super::{default_truncation, make_spectrum, Family, ParameterWeights, Spectrum};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ConditionKind {
    /// Benign overfitting condition for the linear model.
    Benign,
    /// Trade-off condition (cross effective rank, signal decay, SNR).
    TradeOff,
    /// Benign overfitting condition in the NTK regime.
    NtkBenign,
    /// High-dimension condition in the NTK regime.
    NtkHighDim,
}

impl ConditionKind {
    pub fn all() -> [ConditionKind; 4] {
        [
            ConditionKind::Benign,
            ConditionKind::TradeOff,
            ConditionKind::NtkBenign,
            ConditionKind::NtkHighDim,
        ]
    }

    pub fn label(self) -> &'static str {
        match self {
            ConditionKind::Benign => "benign overfitting (condition 1)",
            ConditionKind::TradeOff => "trade-off (condition 2)",
            ConditionKind::NtkBenign => "NTK benign overfitting (condition 3)",
            ConditionKind::NtkHighDim => "NTK high dimension (condition 4)",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Verdict {
    TrendsToZero,
    Violated,
    Inconclusive,
}

/// One evaluated quantity of a condition across the n-grid.
#[derive(Clone, Debug, Serialize)]
pub struct Term {
    pub name: String,
    /// NaN where the quantity is undefined (e.g. k* absent).
    pub values: Vec<f64>,
    /// Least-squares slope of log(value) against log(n) over positive values.
    pub slope: Option<f64>,
    pub decreasing: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionReport {
    pub condition: ConditionKind,
    pub n_grid: Vec<usize>,
    pub b: f64,
    pub k_star: Vec<Option<usize>>,
    pub w_star: Vec<Option<usize>>,
    pub terms: Vec<Term>,
    pub verdict: Verdict,
    pub notes: Vec<String>,
}

/// Inputs of a condition check at one sample size.
#[derive(Clone, Debug)]
pub struct ConditionPoint {
    pub n: usize,
    pub spectrum: Spectrum,
    pub weights: ParameterWeights,
    pub noise_variance: f64,
    /// Ambient input dimension p (the number of nonzero eigenvalues).
    pub ambient_dim: f64,
    /// Network width m, required by the high-dimension condition only.
    pub width: Option<f64>,
}

/// How many coordinates to materialize at sample size n.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Truncation {
    /// p = ⌈factor·n⌉, clipped to the family's own size.
    Factor(f64),
    Fixed(usize),
}

/// Network width as a function of n.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WidthRule {
    /// m = eⁿ.
    Exponential,
    Fixed(f64),
}

impl WidthRule {
    pub fn width(self, n: usize) -> f64 {
        match self {
            WidthRule::Exponential => (n as f64).exp(),
            WidthRule::Fixed(m) => m,
        }
    }
}

/// Ambient dimension of a family at n: the count of nonzero eigenvalues,
/// or infinity for infinite spectra.
fn ambient_dim(family: &Family, n: usize) -> f64 {
    match family {
        Family::Example1 | Family::PolyDecay { .. } => f64::INFINITY,
        Family::Example2 => (n as f64).powf(0.75).exp().floor(),
        Family::NtkExample { .. } => (n * n) as f64,
        Family::Isotropic { d, .. } => *d as f64,
        Family::Custom { eigenvalues, .. } => eigenvalues.len() as f64,
    }
}

/// Rebuilds the family at each n of the grid.
pub fn condition_points(
    family: &Family,
    n_grid: &[usize],
    truncation: Truncation,
    width: Option<WidthRule>,
) -> Result<Vec<ConditionPoint>> {
    n_grid
        .iter()
        .map(|&n| {
            let p = match truncation {
                Truncation::Factor(f) => default_truncation(family, n, f),
                Truncation::Fixed(p) => p,
            };
            let (spectrum, weights, noise_variance) = make_spectrum(family, n, p)?;
            Ok(ConditionPoint {
                n,
                spectrum,
                weights,
                noise_variance,
                ambient_dim: ambient_dim(family, n),
                width: width.map(|w| w.width(n)),
            })
        })
        .collect()
}

/// Convenience wrapper: build the points for a family and check them.
pub fn check_family_conditions(
    kind: ConditionKind,
    family: &Family,
    n_grid: &[usize],
    b: f64,
    truncation: Truncation,
    width: Option<WidthRule>,
) -> Result<ConditionReport> {
    validate_grid(n_grid)?;
    let points = condition_points(family, n_grid, truncation, width)?;
    check_conditions(kind, &points, b)
}

fn validate_grid(n_grid: &[usize]) -> Result<()> {
    if n_grid.len() < 3 {
        return Err(Error::invalid(
            "n_grid",
            format!("needs at least 3 points, got {}", n_grid.len()),
        ));
    }
    if n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("n_grid", "must be strictly increasing"));
    }
    Ok(())
}

struct Sums {
    /// Σ_{i≤k} θ̃ᵢ²/λᵢ for k = 0..=p.
    head_inv: Vec<f64>,
    /// Σ_{i>k} λᵢθ̃ᵢ² for k = 0..=p, tail included.
    tail_energy: Vec<f64>,
}

impl Sums {
    fn new(s: &Spectrum, w: &ParameterWeights) -> Sums {
        let p = s.truncation_dim();
        let lam = s.eigenvalues();
        let th = w.weights_sq();
        let mut head_inv = vec![0.0; p + 1];
        for i in 0..p {
            head_inv[i + 1] = head_inv[i] + th[i] / lam[i];
        }
        let mut tail_energy = vec![0.0; p + 1];
        tail_energy[p] = w.tail().weighted;
        for i in (0..p).rev() {
            tail_energy[i] = tail_energy[i + 1] + lam[i] * th[i];
        }
        Sums {
            head_inv,
            tail_energy,
        }
    }
}

/// Evaluates every term of the condition at each grid point and derives a
/// verdict from the monotone trend of the terms.
pub fn check_conditions(
    kind: ConditionKind,
    points: &[ConditionPoint],
    b: f64,
) -> Result<ConditionReport> {
    let n_grid: Vec<usize> = points.iter().map(|p| p.n).collect();
    validate_grid(&n_grid)?;
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::invalid("b", format!("must be positive, got {b}")));
    }
    let names: &[&str] = match kind {
        ConditionKind::Benign => &["tail_signal", "head_signal", "k_over_n", "n_over_big_r"],
        ConditionKind::TradeOff => &["w_over_k", "signal_decay_ratio", "snr_tail", "snr_head"],
        ConditionKind::NtkBenign => &["k_over_n", "n_tail_sq_over_l2", "l2_over_n_tail"],
        ConditionKind::NtkHighDim => &["p_over_sqrt_m", "n_over_l_4_3", "max_n_l_over_p"],
    };
    let mut values = vec![Vec::with_capacity(points.len()); names.len()];
    let mut k_stars = Vec::new();
    let mut w_stars = Vec::new();
    let mut notes = Vec::new();
    let mut structural_ok = true;

    for pt in points {
        pt.weights.check_aligned(&pt.spectrum)?;
        let s = &pt.spectrum;
        let nf = pt.n as f64;
        let k_star = critical_index(s, b, pt.n);
        k_stars.push(k_star);
        let needs_k = kind != ConditionKind::NtkHighDim;
        if needs_k && k_star.is_none() {
            structural_ok = false;
            notes.push(format!(
                "n = {}: k* absent (r_k < {}·n for every k < {})",
                pt.n,
                b,
                s.truncation_dim()
            ));
        }
        let mut w_star = None;
        let row: Vec<f64> = match (kind, k_star) {
            (ConditionKind::NtkHighDim, _) => {
                let m = pt.width.ok_or_else(|| {
                    Error::invalid("width", "the high-dimension condition needs m")
                })?;
                let l = s.trace();
                let p = pt.ambient_dim;
                vec![p / m.sqrt(), nf / l.powf(4.0 / 3.0), nf.max(l) / p]
            }
            (_, None) => vec![f64::NAN; names.len()],
            (ConditionKind::Benign, Some(k)) => {
                let sums = Sums::new(s, &pt.weights);
                let (r, big_r) = effective_ranks(s, k)?;
                let t = s.lambda_after(k) * r / nf;
                vec![
                    sums.tail_energy[k],
                    t * t * sums.head_inv[k],
                    k as f64 / nf,
                    nf / big_r,
                ]
            }
            (ConditionKind::TradeOff, Some(k)) => {
                let sums = Sums::new(s, &pt.weights);
                w_star = tradeoff_index(s, &pt.weights, pt.n, b)?;
                let lk = s.lambda_after(k);
                // Evaluated at i = 1, where λ₁/λ_{k*+1} is largest.
                let numerator = sums.tail_energy[0];
                let denominator = lk * lk * sums.head_inv[k] + sums.tail_energy[k];
                let ratio = denominator / numerator;
                match w_star {
                    Some(w) => {
                        if w >= k {
                            structural_ok = false;
                            notes.push(format!("n = {}: w* = {w} is not below k* = {k}", pt.n));
                        }
                        // λ_{w*} with w* = 0 read as λ₁.
                        let lw = s.eigenvalues()[w.saturating_sub(1)];
                        let sig = pt.noise_variance;
                        let head: f64 = s.eigenvalues()[..w].iter().map(|l| sig / (nf * l)).sum();
                        vec![
                            if k == 0 {
                                f64::INFINITY
                            } else {
                                w as f64 / k as f64
                            },
                            ratio,
                            sig * s.sum_after(w) / (nf * lw * lw),
                            head,
                        ]
                    }
                    None => {
                        structural_ok = false;
                        notes.push(format!("n = {}: w* absent", pt.n));
                        vec![f64::NAN, ratio, f64::NAN, f64::NAN]
                    }
                }
            }
            (ConditionKind::NtkBenign, Some(k)) => {
                let l = s.trace();
                vec![
                    k as f64 / nf,
                    nf * s.sum_sq_after(k) / (l * l),
                    l * l / (nf * s.sum_after(k)),
                ]
            }
        };
        w_stars.push(w_star);
        for (col, v) in values.iter_mut().zip(row) {
            col.push(v);
        }
    }

    let mut terms = Vec::with_capacity(names.len());
    let mut all_decreasing = true;
    let mut any_growth = false;
    for (name, vals) in names.iter().zip(values) {
        // w*/k* is structural (must stay below 1), not a vanishing term.
        let structural = *name == "w_over_k";
        let decreasing = vals
            .windows(2)
            .all(|w| w[1] < w[0] || (w[0] == 0.0 && w[1] == 0.0));
        if !structural {
            all_decreasing &= decreasing;
            let (first, last) = (vals[0], vals[vals.len() - 1]);
            if first.is_finite()
                && last.is_finite()
                && last >= first
                && !(last == 0.0 && first == 0.0)
            {
                any_growth = true;
            }
        }
        terms.push(Term {
            name: name.to_string(),
            slope: log_slope(&n_grid, &vals),
            values: vals,
            decreasing,
        });
    }
    let verdict = if !structural_ok || any_growth {
        Verdict::Violated
    } else if all_decreasing {
        Verdict::TrendsToZero
    } else {
        Verdict::Inconclusive
    };
    Ok(ConditionReport {
        condition: kind,
        n_grid,
        b,
        k_star: k_stars,
        w_star: w_stars,
        terms,
        verdict,
        notes,
    })
}

fn log_slope(ns: &[usize], vals: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = ns
        .iter()
        .zip(vals)
        .filter(|(_, v)| v.is_finite() && **v > 0.0)
        .map(|(&n, &v)| ((n as f64).ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_must_have_three_increasing_points() {
        let f = Family::Example1;
        let t = Truncation::Factor(2.0);
        assert!(
            check_family_conditions(ConditionKind::Benign, &f, &[256, 1024], 2.0, t, None).is_err()
        );
        assert!(check_family_conditions(
            ConditionKind::Benign,
            &f,
            &[256, 256, 1024],
            2.0,
            t,
            None
        )
        .is_err());
    }

    #[test]
    fn slope_of_power_law() {
        let ns = [10, 100, 1000];
        let v: Vec<f64> = ns.iter().map(|&n| (n as f64).powf(-0.5)).collect();
        assert!((log_slope(&ns, &v).unwrap() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn high_dim_needs_width() {
        let f = Family::NtkExample { s: 0.5, noise: 1.0 };
        let r = check_family_conditions(
            ConditionKind::NtkHighDim,
            &f,
            &[8, 16, 32],
            2.0,
            Truncation::Factor(1.0),
            None,
        );
        assert!(r.is_err());
    }
}
