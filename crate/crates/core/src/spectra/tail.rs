//! Analytic tails of slowly decaying series.
//!
//! A tail Σ_{i=a}^{N} f(i) is split into an explicit sum up to a switch
//! point and an Euler–Maclaurin remainder there. The integral is evaluated in
//! the variable u = ln x, where every family in this crate decays at most
//! like 1/u², so the quadrature never has to represent a huge x directly.

/// A summand known both on the integers and in logarithmic form.
pub(crate) struct Series<'a> {
    /// f(x) for moderate x.
    pub f: &'a dyn Fn(f64) -> f64,
    /// x·f(x) evaluated at x = e^u; must stay finite for very large u.
    pub g: &'a dyn Fn(f64) -> f64,
}

/// Upper end of a series.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Upper {
    Infinite,
    /// Last index N, given through ln N because N may overflow f64.
    Finite {
        ln_last: f64,
    },
}

const SWITCH: u64 = 1000;
const EXPLICIT_MAX: f64 = 2.0e6;

/// Σ_{i=start}^{upper} f(i).
pub(crate) fn series_tail(s: &Series<'_>, start: u64, upper: Upper) -> f64 {
    let a = start.max(SWITCH);
    if let Upper::Finite { ln_last } = upper {
        if ln_last < (a as f64 + EXPLICIT_MAX).ln() {
            let last = ln_last.exp().round() as u64;
            return explicit_sum(s.f, start, last);
        }
    }
    let head = if start < a {
        explicit_sum(s.f, start, a - 1)
    } else {
        0.0
    };
    let af = a as f64;
    let u_end = match upper {
        Upper::Infinite => f64::INFINITY,
        Upper::Finite { ln_last } => ln_last,
    };
    let integral = log_integral(s.g, af.ln(), u_end);
    let (d1, d3) = derivatives(s.f, af);
    let mut rem = integral + 0.5 * (s.f)(af) - d1 / 12.0 + d3 / 720.0;
    if let Upper::Finite { ln_last } = upper {
        // f(N)/2; the derivative corrections at N are below f(N)/N.
        rem += 0.5 * (s.g)(ln_last) * (-ln_last).exp();
    }
    head + rem
}

fn explicit_sum(f: &dyn Fn(f64) -> f64, from: u64, to: u64) -> f64 {
    // Smallest terms first.
    (from..=to).rev().map(|i| f(i as f64)).sum()
}

fn derivatives(f: &dyn Fn(f64) -> f64, a: f64) -> (f64, f64) {
    let h = a / 64.0;
    let (m2, m1, p1, p2) = (f(a - 2.0 * h), f(a - h), f(a + h), f(a + 2.0 * h));
    let d1 = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h);
    let d3 = (p2 - 2.0 * p1 + 2.0 * m1 - m2) / (2.0 * h * h * h);
    (d1, d3)
}

/// ∫_{u0}^{u1} g(u) du over geometric panels, u1 possibly infinite.
fn log_integral(g: &dyn Fn(f64) -> f64, u0: f64, u1: f64) -> f64 {
    let mut total = 0.0;
    let mut lo = u0;
    let mut width = 0.5_f64.max(u0.abs() * 0.25);
    loop {
        let hi = (lo + width).min(u1);
        total += adaptive(g, lo, hi, 0);
        if hi >= u1 {
            return total;
        }
        lo = hi;
        width *= 2.0;
        // For 1/u² decay the remainder is exactly u·g(u); faster decay makes
        // this an overestimate of a negligible quantity.
        let rem = lo * g(lo);
        if u1.is_infinite() && rem <= 1e-14 * total.abs() {
            return total + rem;
        }
        if lo > 1e300 {
            return total + rem;
        }
    }
}

const GL_X: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_W: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

fn gauss8(g: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let mut s = 0.0;
    for (x, w) in GL_X.iter().zip(GL_W.iter()) {
        s += w * (g(c - r * x) + g(c + r * x));
    }
    s * r
}

fn adaptive(g: &dyn Fn(f64) -> f64, a: f64, b: f64, depth: u32) -> f64 {
    let whole = gauss8(g, a, b);
    let m = 0.5 * (a + b);
    let halves = gauss8(g, a, m) + gauss8(g, m, b);
    if depth >= 40 || (whole - halves).abs() <= 1e-14 * halves.abs() + 1e-300 {
        halves
    } else {
        adaptive(g, a, m, depth + 1) + adaptive(g, m, b, depth + 1)
    }
}
