//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::Instant;

use benignadv::datagen::{sample_design, sample_labels, sample_theta, DesignDist, NoiseDist};
use benignadv::experiment::{
    median, run_experiment, summarize_tradeoff, ExperimentConfig, ResultsTable, Scenario,
};
use benignadv::linalg;
use benignadv::ntk::{
    arccos_kernel, empirical_kernel, gd_train, init_network,
    ntk_fixed_point, stability_threshold,
};
use benignadv::ridge::fit_minnorm;
use benignadv::risk::{
    adversarial_risk_gaussian, adversarial_sup, conditional_moments, mc_risks, ConditionalMoments,
    EigenbasisCache,
};
use benignadv::rng;
use benignadv::spectra::{make_spectrum, Family, Spectrum};
use benignadv::Error;
use faer::linalg::solvers::Solve;
use faer::Mat;
use rand::Rng;

type Outcome = Result<(bool, String), Error>;

fn gaussian_design(n: usize, p: usize, seed: u64) -> Mat<f64> {
    let (s, _, _) = make_spectrum(&Family::Isotropic { d: p, noise: 1.0 }, n, p).unwrap();
    sample_design(&s, n, DesignDist::Gaussian, seed).x
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(a, b)| a - b).collect()
}

fn norm(v: &[f64]) -> f64 {
    linalg::norm_sq(v).sqrt()
}

fn sigma_norm_sq(spec: &Spectrum, v: &[f64]) -> f64 {
    spec.eigenvalues()
        .iter()
        .zip(v)
        .map(|(l, v)| l * v * v)
        .sum()
}

fn c1_closed_form_vs_mc() -> Outcome {
    let t0 = Instant::now();
    let (spec, w, s2) = make_spectrum(&Family::Example1, 100, 500)?;
    let design = sample_design(&spec, 100, DesignDist::Gaussian, 11);
    let mut worst: f64 = 0.0;
    for lambda in [0.0, 1e-3] {
        let cf = conditional_moments(design.x.as_ref(), lambda, &spec, &w, s2)?;
        let mc = mc_risks(&design, &spec, &w, s2, lambda, 0.1, 2000, 12)?;
        worst = worst.max((cf.std_total - mc.std.mean).abs() / mc.std.std_error);
    }
    let secs = t0.elapsed().as_secs_f64();
    Ok((
        worst <= 3.0 && secs < 30.0,
        format!("max |closed − mc|/SE = {worst:.2}, {secs:.1} s"),
    ))
}

fn fibonacci_sphere(k: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..k)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / k as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

fn c2_sandwich() -> Outcome {
    let families = [
        Family::Example1,
        Family::PolyDecay {
            decay: 1.5,
            weight_decay: 1.5,
            noise: 0.5,
        },
        Family::Isotropic { d: 60, noise: 0.3 },
        Family::PolyDecay {
            decay: 1.2,
            weight_decay: 2.0,
            noise: 1.0,
        },
    ];
    let mut g = rng::stream(21, 0);
    let mut violations = 0;
    let mut fits = 0;
    for rep in 0..50 {
        let fam = &families[rep % families.len()];
        let n = 10 + g.random_range(0..20);
        let (spec, w, s2) = make_spectrum(fam, n, 60)?;
        let design = sample_design(&spec, n, DesignDist::Gaussian, 100 + rep as u64);
        let theta = sample_theta(&w, 200 + rep as u64);
        let y = sample_labels(&design, &theta, s2, NoiseDist::Gaussian, 300 + rep as u64)?;
        let cm = ConditionalMoments::new(design.x.as_ref(), &spec, &w)?;
        let lambdas: Vec<f64> = (0..4)
            .map(|k| {
                if k == 0 {
                    0.0
                } else {
                    10f64.powf(g.random_range(-4.0..1.0))
                }
            })
            .collect();
        let alpha = 10f64.powf(g.random_range(-2.0..0.5));
        let mut reports = lambdas
            .iter()
            .map(|&l| cm.report(l, s2, alpha))
            .collect::<Result<Vec<_>, _>>()?;
        cm.attach_adversarial_gaussian(&mut reports, s2, 200, 400 + rep as u64)?;
        for r in &reports {
            let a = r.adv_exact_gaussian.unwrap();
            if !(r.adv_lower <= a && a <= r.adv_upper) {
                violations += 1;
            }
            let fit = benignadv::ridge::fit_ridge(design.x.as_ref(), &y.y, r.lambda)?;
            let exact = adversarial_risk_gaussian(
                &fit.theta_hat,
                &theta,
                &spec,
                alpha,
                DesignDist::Gaussian,
            )?;
            let lo = alpha * alpha * linalg::norm_sq(&fit.theta_hat)
                + sigma_norm_sq(&spec, &sub(&fit.theta_hat, &theta));
            if !(lo <= exact * (1.0 + 1e-12) && exact <= 2.0 * lo * (1.0 + 1e-12)) {
                violations += 1;
            }
            fits += 1;
        }
    }
    let dirs = fibonacci_sphere(1_000_000);
    let mut worst: f64 = 0.0;
    for inst in 0..20 {
        let v =
            |g: &mut rng::Rng| -> Vec<f64> { (0..3).map(|_| g.random_range(-1.0..1.0)).collect() };
        let th_hat = v(&mut g);
        let th = v(&mut g);
        let x = v(&mut g);
        let alpha = 0.05 + inst as f64 * 0.05;
        let closed = adversarial_sup(&th_hat, &th, &x, alpha);
        let base: f64 = (0..3).map(|i| x[i] * (th_hat[i] - th[i])).sum();
        let grid = dirs
            .iter()
            .map(|d| {
                let s: f64 = (0..3).map(|i| alpha * d[i] * th_hat[i]).sum();
                (base + s).powi(2)
            })
            .fold(0.0, f64::max);
        worst = worst.max((closed - grid).abs() / closed.max(1e-300));
    }
    Ok((
        violations == 0 && worst <= 1e-4,
        format!("{fits} fits, {violations} violations; sup vs grid rel err {worst:.1e}"),
    ))
}

fn c3_minnorm() -> Outcome {
    let mut g = rng::stream(31, 0);
    let mut worst_interp: f64 = 0.0;
    let mut worst_row: f64 = 0.0;
    let mut norm_failures = 0;
    for inst in 0..50u64 {
        let n = 5 + g.random_range(0..20);
        let p = n + 1 + g.random_range(0..40);
        let x = gaussian_design(n, p, 1000 + inst);
        let y: Vec<f64> = (0..n).map(|_| g.random_range(-1.0..1.0)).collect();
        let fit = fit_minnorm(x.as_ref(), &y)?;
        let r = sub(&linalg::matvec(x.as_ref(), &fit.theta_hat), &y);
        worst_interp = worst_interp.max(norm(&r) / norm(&y));
        // Projector onto the row space via a Cholesky solve of XXᵀ.
        let a = linalg::gram(x.as_ref());
        let llt = a
            .llt(faer::Side::Lower)
            .map_err(|e| Error::Linalg(format!("{e:?}")))?;
        let project = |v: &[f64]| -> Vec<f64> {
            let xv = linalg::matvec(x.as_ref(), v);
            let mut c = Mat::from_fn(n, 1, |i, _| xv[i]);
            llt.solve_in_place(c.as_mut());
            let c: Vec<f64> = (0..n).map(|i| c[(i, 0)]).collect();
            linalg::matvec_t(x.as_ref(), &c)
        };
        let th = &fit.theta_hat;
        worst_row = worst_row.max(norm(&sub(th, &project(th))) / norm(th));
        let base = norm(th);
        for _ in 0..100 {
            let z: Vec<f64> = (0..p).map(|_| g.random_range(-1.0..1.0)).collect();
            let v = sub(&z, &project(&z));
            let pert: Vec<f64> = th.iter().zip(&v).map(|(a, b)| a + b).collect();
            if norm(&pert) < base * (1.0 - 1e-12) {
                norm_failures += 1;
            }
        }
    }
    Ok((
        worst_interp <= 1e-8 && worst_row <= 1e-8 && norm_failures == 0,
        format!(
            "interp rel {worst_interp:.1e}, off-row-space {worst_row:.1e}, {norm_failures} norm failures"
        ),
    ))
}

fn c4_woodbury() -> Outcome {
    let mut g = rng::stream(41, 0);
    let mut worst: f64 = 0.0;
    for inst in 0..20u64 {
        let n = 3 + g.random_range(0..18);
        let p = n + 1 + g.random_range(0..(60 - n));
        let (spec, _, _) = make_spectrum(
            &Family::PolyDecay {
                decay: 1.0 + g.random::<f64>(),
                weight_decay: 1.5,
                noise: 1.0,
            },
            n,
            p,
        )?;
        let design = sample_design(&spec, n, DesignDist::Gaussian, 2000 + inst);
        let cache = EigenbasisCache::new(design.x.as_ref(), &spec)?;
        for lambda in [1e-3, 0.1] {
            let terms = cache.leave_one_out_terms(lambda)?;
            let (v, nv) = cache.direct_traces(lambda)?;
            let sv: f64 = terms.iter().map(|t| t.0).sum();
            let snv: f64 = terms.iter().map(|t| t.1).sum();
            worst = worst.max((sv - v).abs() / v).max((snv - nv).abs() / nv);
        }
    }
    Ok((worst <= 1e-6, format!("max rel diff {worst:.1e}")))
}

fn medians_by_n(
    t: &ResultsTable,
    lambda_zero: bool,
    f: impl Fn(&benignadv::experiment::ResultRow) -> Option<f64>,
) -> Vec<(usize, f64)> {
    let mut ns: Vec<usize> = t.rows.iter().map(|r| r.n).collect();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let v: Vec<f64> = t
                .rows
                .iter()
                .filter(|r| r.n == n && (!lambda_zero || r.lambda == 0.0))
                .filter_map(&f)
                .collect();
            (n, median(&v))
        })
        .collect()
}

fn example1_run() -> Result<(ResultsTable, f64), Error> {
    let t0 = Instant::now();
    let cfg = ExperimentConfig::builtin(Scenario::Example1).map(|mut c| {
        c.output = None;
        c
    })?;
    let t = run_experiment(&cfg)?;
    Ok((t, t0.elapsed().as_secs_f64()))
}

fn c5_divergence(t: &ResultsTable, secs: f64) -> Outcome {
    let s = medians_by_n(t, true, |r| r.std_total);
    let nrm = medians_by_n(t, true, |r| r.norm_total);
    let dec = s.windows(2).all(|w| w[1].1 < w[0].1);
    let inc = nrm.windows(2).all(|w| w[1].1 > w[0].1);
    let fmt = |v: &[(usize, f64)]| {
        v.iter()
            .map(|(n, x)| format!("{n}:{x:.4}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    Ok((
        dec && inc && secs < 300.0,
        format!("std [{}], norm [{}], {secs:.0} s", fmt(&s), fmt(&nrm)),
    ))
}

fn c6_tradeoff(t: &ResultsTable) -> Outcome {
    let positive = ResultsTable::new(t.rows.iter().filter(|r| r.lambda > 0.0).cloned().collect());
    let grid = positive
        .rows
        .iter()
        .filter(|r| r.n == 256 && r.replicate == 0)
        .count();
    let s = summarize_tradeoff(&positive);
    let at = |n| {
        s.iter()
            .find(|x| x.n == n)
            .map(|x| x.objective_min)
            .unwrap_or(f64::NAN)
    };
    let (lo, hi) = (at(256), at(4096));
    Ok((
        grid == 25 && hi > lo,
        format!("{grid}-point grid, min objective n=256: {lo:.4}, n=4096: {hi:.4}"),
    ))
}

fn c7_regime(t: &ResultsTable) -> Outcome {
    let (spec, _, _) = make_spectrum(&Family::Example1, 256, 512)?;
    let l1 = spec.eigenvalues()[0];
    let rows: Vec<_> = t.rows.iter().filter(|r| r.lambda >= l1).collect();
    let worst = rows
        .iter()
        .map(|r| r.std_total.unwrap_or(f64::NAN) / r.signal_energy)
        .fold(f64::INFINITY, f64::min);
    Ok((
        !rows.is_empty() && worst >= 0.1,
        format!(
            "{} rows with λ ≥ λ₁, min std/‖θ‖²_Σ = {worst:.3}",
            rows.len()
        ),
    ))
}

fn c8_kernel_concentration() -> Outcome {
    let x = gaussian_design(32, 64, 81);
    let k_arc = arccos_kernel(x.as_ref())?;
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    for e in 8..=14 {
        let m = 1usize << e;
        let mut errs = Vec::new();
        for seed in 0..5 {
            let md = init_network(m, 64, 800 + seed)?;
            let k = empirical_kernel(&md, x.as_ref())?;
            let d = Mat::from_fn(32, 32, |i, j| k[(i, j)] - k_arc[(i, j)]);
            errs.push(linalg::sym_op_norm(d.as_ref())?);
        }
        lx.push((m as f64).ln());
        ly.push((errs.iter().sum::<f64>() / errs.len() as f64).ln());
    }
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let slope = lx
        .iter()
        .zip(&ly)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / lx.iter().map(|a| (a - mx).powi(2)).sum::<f64>();
    Ok(((slope + 0.5).abs() <= 0.2, format!("slope {slope:.3}")))
}

fn c9_fixed_point() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut detected = 0;
    for seed in 0..10u64 {
        let md = init_network(256, 16, 900 + seed)?;
        let x = gaussian_design(8, 16, 950 + seed);
        let mut g = rng::stream(seed, 99);
        let y: Vec<f64> = (0..8).map(|_| g.random_range(-1.0..1.0)).collect();
        let th = stability_threshold(&md, x.as_ref())?;
        let closed = ntk_fixed_point(&md, x.as_ref(), &y)?;
        let fit = gd_train(&md, x.as_ref(), &y, 0.9 * th, 100_000)?;
        worst = worst.max(norm(&sub(&fit.w_hat, &closed.w_hat)));
        if matches!(
            gd_train(&md, x.as_ref(), &y, 2.5 * th, 5000),
            Err(Error::Diverged { .. })
        ) {
            detected += 1;
        }
    }
    Ok((
        worst <= 1e-6 && detected == 10,
        format!("max ‖w_gd − ŵ‖ = {worst:.1e}, divergence detected {detected}/10"),
    ))
}

fn c10_ntk_divergence() -> Outcome {
    let cfg = ExperimentConfig::builtin(Scenario::NtkExample).map(|mut c| {
        c.output = None;
        c
    })?;
    let t = run_experiment(&cfg)?;
    let failed = t.rows.iter().filter(|r| r.error.is_some()).count();
    let s = medians_by_n(&t, false, |r| r.std_total);
    let a = medians_by_n(&t, false, |r| r.ntk_adv_proxy);
    let dec = s.windows(2).all(|w| w[1].1 < w[0].1);
    let inc = a.windows(2).all(|w| w[1].1 > w[0].1);
    // E over both w₀ and x: one estimate per replicate, each with its own init.
    let gi: Vec<f64> = t.rows.iter().filter_map(|r| r.ntk_grad_norm_sq_init).collect();
    let k = gi.len() as f64;
    let mean = gi.iter().sum::<f64>() / k;
    let se = (gi.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt();
    let z = (mean - 0.5).abs() / se;
    let fmt = |v: &[(usize, f64)]| {
        v.iter()
            .map(|(n, x)| format!("{n}:{x:.4}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    Ok((
        failed == 0 && dec && inc && z <= 3.0,
        format!(
            "std [{}], proxy [{}], E‖∇f(w₀)‖² = {:.4} ± {:.4} ({z:.2} SE)",
            fmt(&s),
            fmt(&a),
            mean,
            se
        ),
    ))
}

fn c11_determinism() -> Outcome {
    let mut cfg = ExperimentConfig::builtin(Scenario::Example2)?;
    cfg.output = None;
    cfg.n_grid = vec![128, 256];
    cfg.replicates = 3;
    std::env::set_var("BENIGNADV_WORKERS", "1");
    let a = run_experiment(&cfg)?.to_csv_string()?;
    std::env::set_var("BENIGNADV_WORKERS", "3");
    let b = run_experiment(&cfg)?.to_csv_string()?;
    std::env::remove_var("BENIGNADV_WORKERS");
    let c = run_experiment(&cfg)?.to_csv_string()?;
    let same = a == b && b == c;
    let msg = if same {
        format!("{} bytes, identical across 1, 3 and default workers", a.len())
    } else {
        "CSV differs across worker counts".to_string()
    };
    Ok((same, msg))
}

fn main() {
    let mut all = true;
    let mut report = |k: usize, o: Outcome| {
        let (ok, msg) = o.unwrap_or_else(|e| (false, format!("error: {e}")));
        all &= ok;
        println!(
            "criterion {k:>2}: {}  {msg}",
            if ok { "PASS" } else { "FAIL" }
        );
    };
    report(1, c1_closed_form_vs_mc());
    report(2, c2_sandwich());
    report(3, c3_minnorm());
    report(4, c4_woodbury());
    match example1_run() {
        Ok((t, secs)) => {
            report(5, c5_divergence(&t, secs));
            report(6, c6_tradeoff(&t));
            report(7, c7_regime(&t));
        }
        Err(e) => {
            for k in 5..=7 {
                report(k, Err(Error::Parse(format!("example1 run failed: {e}"))));
            }
        }
    }
    report(8, c8_kernel_concentration());
    report(9, c9_fixed_point());
    report(10, c10_ntk_divergence());
    report(11, c11_determinism());
    if !all {
        std::process::exit(1);
    }
}
