//! Configured sweeps producing flat CSV/JSON result tables.
//!
//! Each (n, replicate) task draws from seeds derived from
//! (master_seed, n, replicate), so the table does not depend on the worker
//! count or on execution order. Tasks run on a pool whose size is read from
//! `BENIGNADV_WORKERS` (default: one worker per core).

mod config;
mod table;

pub use config::{ExperimentConfig, NtkSettings, Scenario};
pub use table::{median, write_atomic, ResultRow, ResultsTable, SCHEMA_VERSION};

use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{regime_classify, small_regime_boundary};
use crate::datagen::{sample_design, DesignDist};
use crate::error::{Error, Result};
use crate::ntk::{init_network, make_target, ntk_fixed_point, ntk_labels, ntk_risks};
use crate::risk::{mc_risks, ConditionalMoments, RiskReport};
use crate::rng;
use crate::spectra::{
    check_family_conditions, critical_index, default_truncation, make_spectrum, rank_report,
    ConditionKind, ConditionReport, Family, ParameterWeights, Spectrum, Truncation, Verdict,
    WidthRule,
};

/// Environment variable holding the worker-pool size.
pub const WORKERS_ENV: &str = "BENIGNADV_WORKERS";

/// Points of the default λ grid.
pub const DEFAULT_GRID_POINTS: usize = 25;

fn workers() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(k) if k >= 1 => Ok(Some(k)),
            _ => Err(Error::config(
                WORKERS_ENV,
                format!("must be a positive integer, got `{v}`"),
            )),
        },
    }
}

fn in_pool<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    crate::linalg::pin_parallelism();
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(k) = workers()? {
        b = b.num_threads(k);
    }
    let pool = b
        .build()
        .map_err(|e| Error::config(WORKERS_ENV, e.to_string()))?;
    Ok(pool.install(f))
}

/// Geometric grid from λ_{k*+1}r_{k*}/(10n) to 10λ₁.
pub fn default_lambda_grid(spec: &Spectrum, n: usize, b: f64, points: usize) -> Result<Vec<f64>> {
    let lo = small_regime_boundary(spec, n, b)? / 10.0;
    let hi = 10.0 * spec.eigenvalues()[0];
    if points < 2 {
        return Ok(vec![lo]);
    }
    let (a, z) = (lo.ln(), hi.ln());
    Ok((0..points)
        .map(|i| {
            if i + 1 == points {
                hi
            } else {
                (a + (z - a) * i as f64 / (points - 1) as f64).exp()
            }
        })
        .collect())
}

struct Task {
    n: usize,
    replicate: usize,
}

impl Task {
    fn seed(&self, master: u64, stream: u64) -> u64 {
        rng::derive(master, &[self.n as u64, self.replicate as u64, stream])
    }
}

/// Everything the linear task needs to fill the common columns.
struct Setup {
    family: Family,
    spec: Spectrum,
    w: ParameterWeights,
    sigma2: f64,
    p: usize,
}

fn setup(cfg: &ExperimentConfig, n: usize) -> Result<Setup> {
    let family = cfg.resolved_family()?;
    let p = default_truncation(&family, n, cfg.p_factor);
    let (spec, w, sigma2) = make_spectrum(&family, n, p)?;
    Ok(Setup {
        family,
        spec,
        w,
        sigma2,
        p,
    })
}

fn grid_for(cfg: &ExperimentConfig, s: &Setup, n: usize) -> Result<Vec<f64>> {
    if let Some(g) = &cfg.lambda_grid {
        return Ok(g.clone());
    }
    if cfg.scenario.is_ntk() {
        return Ok(vec![0.0]);
    }
    let mut g = default_lambda_grid(&s.spec, n, cfg.b, DEFAULT_GRID_POINTS)?;
    if cfg.include_zero {
        g.insert(0, 0.0);
    }
    Ok(g)
}

fn base_row(cfg: &ExperimentConfig, t: &Task, s: &Setup, seed: u64, lambda: f64) -> ResultRow {
    ResultRow {
        schema_version: SCHEMA_VERSION,
        scenario: cfg.scenario.to_string(),
        family: s.family.to_string(),
        n: t.n,
        p: s.p,
        replicate: t.replicate,
        seed,
        lambda,
        budget: cfg.budget,
        noise_variance: s.sigma2,
        theta_norm_sq: s.w.norm_sq(),
        signal_energy: crate::spectra::signal_energy(&s.spec, &s.w),
        ..ResultRow::default()
    }
}

fn fill_ranks(row: &mut ResultRow, s: &Setup, n: usize, b: f64) {
    match rank_report(&s.spec, &s.w, n, b) {
        Ok(r) => {
            row.k_star = r.k_star;
            row.w_star = r.w_star;
            if r.k_star.is_some() {
                row.r_k_star = Some(r.r_k);
                row.big_r_k_star = Some(r.big_r_k);
            }
        }
        Err(e) => row.bound_note = Some(e.to_string()),
    }
}

fn fill_risk(row: &mut ResultRow, r: &RiskReport) {
    row.std_bias = Some(r.std_bias);
    row.std_variance = Some(r.std_variance);
    row.std_total = Some(r.std_total);
    row.norm_bias = Some(r.norm_bias);
    row.norm_variance = Some(r.norm_variance);
    row.norm_total = Some(r.norm_total);
    row.adv_lower = Some(r.adv_lower);
    row.adv_upper = Some(r.adv_upper);
    row.adv_exact_gaussian = r.adv_exact_gaussian;
    row.adv_exact_gaussian_se = r.adv_exact_gaussian_se;
}

/// std_total/(‖θ‖²·std_total(λ=0)) + adv_lower/α².
pub fn tradeoff_objective(
    std_total: f64,
    theta_norm_sq: f64,
    std_total_ref: f64,
    adv_lower: f64,
    budget: f64,
) -> Option<f64> {
    if budget > 0.0 && theta_norm_sq > 0.0 && std_total_ref > 0.0 {
        Some(std_total / (theta_norm_sq * std_total_ref) + adv_lower / (budget * budget))
    } else {
        None
    }
}

fn linear_task(cfg: &ExperimentConfig, t: &Task) -> Result<Vec<ResultRow>> {
    let s = setup(cfg, t.n)?;
    let grid = grid_for(cfg, &s, t.n)?;
    let design_seed = t.seed(cfg.master_seed, 0);
    let design = sample_design(&s.spec, t.n, cfg.design, design_seed);
    let cm = ConditionalMoments::new(design.x.as_ref(), &s.spec, &s.w)?;
    let reference = cm.report(0.0, s.sigma2, cfg.budget)?;
    let mut reports = grid
        .iter()
        .map(|&l| cm.report(l, s.sigma2, cfg.budget))
        .collect::<Result<Vec<_>>>()?;
    if cfg.exact_adversarial {
        cm.attach_adversarial_gaussian(
            &mut reports,
            s.sigma2,
            cfg.trials,
            t.seed(cfg.master_seed, 1),
        )?;
    }
    drop(cm);
    let consts = cfg.bound_constants();
    let mut rows = Vec::with_capacity(grid.len());
    for r in &reports {
        let mut row = base_row(cfg, t, &s, design_seed, r.lambda);
        fill_risk(&mut row, r);
        fill_ranks(&mut row, &s, t.n, cfg.b);
        row.std_total_ref = Some(reference.std_total);
        row.norm_total_ref = Some(reference.norm_total);
        row.tradeoff_objective = tradeoff_objective(
            r.std_total,
            row.theta_norm_sq,
            reference.std_total,
            r.adv_lower,
            cfg.budget,
        );
        if cfg.mc_check {
            let mc = mc_risks(
                &design,
                &s.spec,
                &s.w,
                s.sigma2,
                r.lambda,
                cfg.budget,
                cfg.trials,
                t.seed(cfg.master_seed, 2),
            )?;
            row.mc_std = Some(mc.std.mean);
            row.mc_std_se = Some(mc.std.std_error);
            row.mc_adv = Some(mc.adv.mean);
            row.mc_adv_se = Some(mc.adv.std_error);
            row.mc_norm = Some(mc.norm.mean);
            row.mc_norm_se = Some(mc.norm.std_error);
        }
        match regime_classify(
            &s.spec,
            &s.w,
            s.sigma2,
            t.n,
            r.lambda,
            cfg.budget,
            &consts,
            reference.std_total,
            r.adv_lower,
        ) {
            Ok(b) => {
                row.regime = Some(b.regime.as_str().to_string());
                row.srisk_upper = Some(b.srisk_upper);
                row.srisk_lower = b.srisk_lower;
                row.norm_lower = Some(b.norm_lower);
                row.delta_lambda = b.delta_lambda;
                if b.note.is_some() {
                    row.bound_note = b.note;
                }
            }
            Err(e) => row.bound_note = Some(e.to_string()),
        }
        rows.push(row);
    }
    Ok(rows)
}

fn ntk_task(cfg: &ExperimentConfig, t: &Task) -> Result<Vec<ResultRow>> {
    let s = setup(cfg, t.n)?;
    let data_seed = t.seed(cfg.master_seed, 0);
    let model = init_network(cfg.ntk.width, s.p, t.seed(cfg.master_seed, 3))?
        .with_radius(cfg.ntk.radius)?;
    let w_star = make_target(&model, &s.spec, cfg.ntk.holdout, t.seed(cfg.master_seed, 4))?;
    let design = sample_design(&s.spec, t.n, DesignDist::Gaussian, data_seed);
    let y = ntk_labels(
        &model,
        &w_star,
        design.x.as_ref(),
        s.sigma2,
        t.seed(cfg.master_seed, 5),
    )?;
    let fit = ntk_fixed_point(&model, design.x.as_ref(), &y)?;
    let r = ntk_risks(
        &model,
        &fit,
        &w_star,
        cfg.budget,
        cfg.trials,
        t.seed(cfg.master_seed, 6),
        &s.spec,
        cfg.ntk.pga,
    )?;
    let mut row = base_row(cfg, t, &s, data_seed, 0.0);
    fill_ranks(&mut row, &s, t.n, cfg.b);
    row.std_total = Some(r.std.mean);
    row.ntk_width = Some(cfg.ntk.width);
    row.ntk_std_se = Some(r.std.std_error);
    row.ntk_grad_norm_sq = Some(r.grad_norm_sq.mean);
    row.ntk_grad_norm_sq_se = Some(r.grad_norm_sq.std_error);
    row.ntk_grad_norm_sq_init = Some(r.grad_norm_sq_init.mean);
    row.ntk_grad_norm_sq_init_se = Some(r.grad_norm_sq_init.std_error);
    row.ntk_adv_proxy = Some(r.adv_proxy);
    row.ntk_param_distance = Some(r.param_distance);
    row.ntk_solve_residual = Some(fit.solve_residual);
    row.ntk_pga = r.pga.map(|p| p.mean);
    row.ntk_pga_se = r.pga.map(|p| p.std_error);
    Ok(vec![row])
}

/// Rows standing in for a failed task, one per grid point.
fn error_rows(cfg: &ExperimentConfig, t: &Task, err: &Error) -> Vec<ResultRow> {
    let grid = match setup(cfg, t.n).and_then(|s| grid_for(cfg, &s, t.n)) {
        Ok(g) => g,
        Err(_) => cfg.lambda_grid.clone().unwrap_or_else(|| vec![f64::NAN]),
    };
    let family = cfg
        .resolved_family()
        .map(|f| f.to_string())
        .unwrap_or_default();
    grid.into_iter()
        .map(|lambda| ResultRow {
            schema_version: SCHEMA_VERSION,
            scenario: cfg.scenario.to_string(),
            family: family.clone(),
            n: t.n,
            replicate: t.replicate,
            seed: t.seed(cfg.master_seed, 0),
            lambda,
            budget: cfg.budget,
            error: Some(err.to_string()),
            ..ResultRow::default()
        })
        .collect()
}

fn run_tasks(cfg: &ExperimentConfig) -> Result<ResultsTable> {
    cfg.validate()?;
    let tasks: Vec<Task> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.replicates).map(move |replicate| Task { n, replicate }))
        .collect();
    let results: Vec<Result<Vec<ResultRow>>> = in_pool(|| {
        tasks
            .par_iter()
            .map(|t| {
                if cfg.scenario.is_ntk() {
                    ntk_task(cfg, t)
                } else {
                    linear_task(cfg, t)
                }
            })
            .collect()
    })?;
    let mut rows = Vec::new();
    for (t, r) in tasks.iter().zip(results) {
        match r {
            Ok(mut v) => rows.append(&mut v),
            Err(e) if cfg.strict => return Err(e),
            Err(e) => rows.extend(error_rows(cfg, t, &e)),
        }
    }
    Ok(ResultsTable::new(rows))
}

/// Runs the configured sweep and, when `output` is set, writes the CSV
/// there and its JSON mirror next to it.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultsTable> {
    let table = run_tasks(cfg)?;
    if let Some(path) = &cfg.output {
        table.write(path, None::<&()>)?;
    }
    Ok(table)
}

/// Per-n summary of the trade-off objective.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TradeoffSummary {
    pub n: usize,
    /// Median over replicates of the per-replicate minimum over λ.
    pub objective_min: f64,
    pub per_replicate_min: Vec<f64>,
    /// λ attaining each replicate's minimum.
    pub argmin_lambda: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Summarizes the trade-off objective of a table, per n.
pub fn summarize_tradeoff(table: &ResultsTable) -> Vec<TradeoffSummary> {
    let mut ns: Vec<usize> = table.rows.iter().map(|r| r.n).collect();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let mut reps: Vec<usize> = table
                .rows
                .iter()
                .filter(|r| r.n == n)
                .map(|r| r.replicate)
                .collect();
            reps.sort_unstable();
            reps.dedup();
            let mut mins = Vec::new();
            let mut args = Vec::new();
            for rep in reps {
                let best = table
                    .rows
                    .iter()
                    .filter(|r| r.n == n && r.replicate == rep)
                    .filter_map(|r| r.tradeoff_objective.map(|o| (o, r.lambda)))
                    .min_by(|a, b| a.0.total_cmp(&b.0));
                if let Some((o, l)) = best {
                    mins.push(o);
                    args.push(l);
                }
            }
            TradeoffSummary {
                n,
                objective_min: median(&mins),
                per_replicate_min: mins,
                argmin_lambda: args,
                warnings: Vec::new(),
            }
        })
        .collect()
}

/// λ-sweep with the trade-off summary. The grid should reach below
/// λ_{k*+1}r_{k*}/n and above λ₁; a warning is attached otherwise.
pub fn tradeoff_curve(cfg: &ExperimentConfig) -> Result<(ResultsTable, Vec<TradeoffSummary>)> {
    if cfg.scenario.is_ntk() {
        return Err(Error::config(
            "scenario",
            "trade-off curves need a linear scenario",
        ));
    }
    if cfg.budget <= 0.0 {
        return Err(Error::config(
            "budget",
            "trade-off curves need a positive budget",
        ));
    }
    let table = run_tasks(cfg)?;
    let mut summary = summarize_tradeoff(&table);
    for s in summary.iter_mut() {
        let Ok(setup) = setup(cfg, s.n) else { continue };
        let Ok(grid) = grid_for(cfg, &setup, s.n) else {
            continue;
        };
        let lo = grid[0];
        let hi = grid[grid.len() - 1];
        if let Ok(edge) = small_regime_boundary(&setup.spec, s.n, cfg.b) {
            if lo > edge {
                s.warnings.push(format!(
                    "grid starts at {lo:e}, above the small-regularization edge {edge:e}"
                ));
            }
        }
        let l1 = setup.spec.eigenvalues()[0];
        if hi < l1 {
            s.warnings
                .push(format!("grid ends at {hi:e}, below λ₁ = {l1:e}"));
        }
    }
    if let Some(path) = &cfg.output {
        table.write(path, Some(&summary))?;
    }
    Ok((table, summary))
}

/// Condition checks for the scenario's family over `n_grid`: conditions 1
/// and 2 for linear scenarios, 3 and 4 for NTK scenarios.
pub fn report_conditions(cfg: &ExperimentConfig) -> Result<Vec<ConditionReport>> {
    cfg.validate()?;
    let family = cfg.resolved_family()?;
    let (kinds, width) = if cfg.scenario.is_ntk() {
        let rule = match family {
            Family::NtkExample { .. } => WidthRule::Exponential,
            _ => WidthRule::Fixed(cfg.ntk.width as f64),
        };
        (
            [ConditionKind::NtkBenign, ConditionKind::NtkHighDim],
            Some(rule),
        )
    } else {
        ([ConditionKind::Benign, ConditionKind::TradeOff], None)
    };
    kinds
        .iter()
        .map(|&k| {
            check_family_conditions(
                k,
                &family,
                &cfg.n_grid,
                cfg.b,
                Truncation::Factor(cfg.p_factor),
                width,
            )
        })
        .collect()
}

fn verdict_str(v: Verdict) -> &'static str {
    match v {
        Verdict::TrendsToZero => "trends to zero",
        Verdict::Violated => "violated",
        Verdict::Inconclusive => "inconclusive",
    }
}

/// Plain-text rendering, one block per condition.
pub fn render_conditions(reports: &[ConditionReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&format!(
            "{}: {}\n",
            r.condition.label(),
            verdict_str(r.verdict)
        ));
        out.push_str(&format!("  n      {:?}\n", r.n_grid));
        let ks: Vec<String> = r
            .k_star
            .iter()
            .map(|k| k.map_or("-".to_string(), |k| k.to_string()))
            .collect();
        out.push_str(&format!("  k*     [{}]\n", ks.join(", ")));
        for t in &r.terms {
            let vals: Vec<String> = t.values.iter().map(|v| format!("{v:.4e}")).collect();
            let slope = t.slope.map_or("-".to_string(), |s| format!("{s:.3}"));
            out.push_str(&format!(
                "  {:<20} slope {:>7}  [{}]\n",
                t.name,
                slope,
                vals.join(", ")
            ));
        }
        for n in &r.notes {
            out.push_str(&format!("  note: {n}\n"));
        }
        out.push('\n');
    }
    out
}

/// NTK sweep: one fixed-point fit per (n, replicate).
pub fn ntk_sweep(cfg: &ExperimentConfig) -> Result<ResultsTable> {
    if !cfg.scenario.is_ntk() {
        return Err(Error::config("scenario", "ntk-sweep needs an NTK scenario"));
    }
    run_experiment(cfg)
}

/// Critical index of the scenario at n, for reporting.
pub fn scenario_k_star(cfg: &ExperimentConfig, n: usize) -> Result<Option<usize>> {
    let s = setup(cfg, n)?;
    Ok(critical_index(&s.spec, cfg.b, n))
}
