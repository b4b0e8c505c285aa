//! The five subcommands. Each returns a [`Report`]; none of them writes to
//! disk, which is left to the binary.

use std::fmt::Write;

use tfilter_core::bounds::{
    beta_for_control, beta_for_filter, build_block_a, coupling_constant, verify_block_similarity,
};
use tfilter_core::control::{closed_loop_sim, decompose_disturbances, ClosedLoopRecord, ControlConfig};
use tfilter_core::filter::{fmt_float, run_filter_comparison, FilterConfig, RunMeta, TrajectoryRecord};
use tfilter_core::linalg::{spectral_norm, spectral_radius, stable_factorization};
use tfilter_core::system::{kalman_gain, lqr_gain, Provenance};
use tfilter_core::Result;

use crate::config::{matrix_literal, Experiment};
use crate::report::{Check, Report};
use crate::verify::{
    argmax_check, equivalence_check, equivalence_suite, factorization_checks, gap_check,
};
use crate::CliError;

/// DARE residual tolerance, relative to `‖P‖`.
pub const DARE_TOL: f64 = 1e-9;
/// Block-similarity tolerance, relative to `‖𝔸‖`.
pub const SIMILARITY_TOL: f64 = 1e-12;

/// `# key=value` lines describing the system and gains, so every verdict can
/// be recomputed from the CSV alone.
pub fn system_header(exp: &Experiment) -> String {
    let mut out = String::new();
    let sys = &exp.sys;
    for (key, m) in [("A", &sys.a), ("B", &sys.b), ("C", &sys.c), ("W", &sys.w_cov), ("V", &sys.v_cov)] {
        let _ = writeln!(out, "# {key}={}", matrix_literal(m));
    }
    let _ = writeln!(out, "# L={}", matrix_literal(exp.gains.l()));
    if let Some(k) = exp.gains.k() {
        let _ = writeln!(out, "# K={}", matrix_literal(k));
    }
    let _ = writeln!(out, "# gains={}", exp.gains.provenance().as_str());
    out
}

fn meta(exp: &Experiment, beta: f64, eps: Option<f64>) -> RunMeta {
    RunMeta {
        seed: exp.seed,
        beta,
        window: exp.window,
        eps,
    }
}

fn filter_beta(exp: &Experiment, eps: Option<f64>) -> Result<f64> {
    match (exp.beta, eps) {
        (Some(beta), _) => Ok(beta),
        (None, Some(eps)) => Ok(beta_for_filter(&exp.sys, &exp.gains, exp.window, eps)?.beta),
        (None, None) => unreachable!("config resolution requires eps or beta"),
    }
}

fn control_beta(exp: &Experiment, eps: Option<f64>) -> Result<f64> {
    match (exp.beta, eps) {
        (Some(beta), _) => Ok(beta),
        (None, Some(eps)) => Ok(beta_for_control(&exp.sys, &exp.gains, exp.window, eps)?.beta),
        (None, None) => unreachable!("config resolution requires eps or beta"),
    }
}

fn beta_source(exp: &Experiment) -> &'static str {
    if exp.beta.is_some() {
        "override"
    } else {
        "bound"
    }
}

pub fn run_filter(exp: &Experiment, beta: f64, eps: Option<f64>) -> Result<TrajectoryRecord> {
    let config = FilterConfig::new(exp.window, beta, exp.gains.clone())?.with_mode(exp.mode);
    let mut noise = exp.noise.source(&exp.sys, exp.seed)?;
    run_filter_comparison(&exp.sys, &config, exp.horizon, noise.as_mut(), meta(exp, beta, eps))
}

pub fn run_control(exp: &Experiment, beta: f64, eps: Option<f64>) -> Result<ClosedLoopRecord> {
    let config = ControlConfig::new(exp.window, beta, exp.gains.clone(), exp.cost.clone())?.with_mode(exp.mode);
    let mut noise = exp.noise.source(&exp.sys, exp.seed)?;
    closed_loop_sim(&exp.sys, &config, exp.horizon, noise.as_mut(), meta(exp, beta, eps))
}

pub fn cmd_synthesize(exp: &Experiment) -> std::result::Result<Report, CliError> {
    let sys = &exp.sys;
    let gains = &exp.gains;
    let mut report = Report::new("synthesize");
    report.info("gains", gains.provenance().as_str());
    report.info("L", matrix_literal(gains.l()));
    if let Some(k) = gains.k() {
        report.info("K", matrix_literal(k));
    }

    if gains.provenance() == Provenance::Synthesized {
        let kf = kalman_gain(sys)?;
        let p_norm = spectral_norm(&kf.riccati);
        report.info("P (filter)", matrix_literal(&kf.riccati));
        report.check(Check::at_most("dare-filter-residual", "residual", kf.residual, DARE_TOL * p_norm));
        if gains.k().is_some() {
            let lq = lqr_gain(sys, &exp.cost)?;
            let p_norm = spectral_norm(&lq.riccati);
            report.info("P (control)", matrix_literal(&lq.riccati));
            report.check(Check::at_most("dare-control-residual", "residual", lq.residual, DARE_TOL * p_norm));
        }
    }

    let observer = gains.observer_matrix(sys);
    let rho = spectral_radius(&observer)?;
    report.check(Check::new("observer-stable", rho < 1.0, format!("rho(A - LC) = {rho:.6e} < 1")));
    let f = stable_factorization(&observer)?;
    report.info("kappa(A - LC)", fmt_float(f.kappa));
    report.info("|theta|(A - LC)", fmt_float(f.theta_norm));

    if let Some(k) = gains.k() {
        let closed = &sys.a + &sys.b * k;
        let rho = spectral_radius(&closed)?;
        report.check(Check::new("regulator-stable", rho < 1.0, format!("rho(A + BK) = {rho:.6e} < 1")));
        let block = build_block_a(sys, gains)?;
        let fb = stable_factorization(&block)?;
        report.info("kappa(block)", fmt_float(fb.kappa));
        report.info("|theta|(block)", fmt_float(fb.theta_norm));
        report.info("coupling C", fmt_float(coupling_constant(sys, gains)?));
        let residual = verify_block_similarity(sys, gains)?;
        report.check(Check::at_most(
            "block-similarity",
            "residual",
            residual,
            SIMILARITY_TOL * spectral_norm(&block),
        ));
        let rho = spectral_radius(&block)?;
        report.check(Check::new("block-stable", rho < 1.0, format!("rho(block) = {rho:.6e} < 1")));
    }

    if let Some(eps) = exp.eps {
        report.info("window", exp.window.to_string());
        report.info("eps", fmt_float(eps));
        let bf = beta_for_filter(sys, gains, exp.window, eps)?;
        report.info("beta (filter)", fmt_float(bf.beta));
        if gains.k().is_some() {
            let bc = beta_for_control(sys, gains, exp.window, eps)?;
            report.info("beta (control)", fmt_float(bc.beta));
        }
    }
    Ok(report)
}

pub fn cmd_filter(exp: &Experiment) -> std::result::Result<Report, CliError> {
    let beta = filter_beta(exp, exp.eps)?;
    let record = run_filter(exp, beta, exp.eps)?;
    let mut report = Report::new("filter");
    report.info("beta", format!("{} ({})", fmt_float(beta), beta_source(exp)));
    report.info("window", exp.window.to_string());
    report.info("horizon", exp.horizon.to_string());
    report.info("mode", record.mode.as_str());
    report.info("sup error", fmt_float(record.sup_error()));
    if let Some(eps) = exp.eps {
        report.check(Check::at_most("filter-bound", "sup |xhat - xhat*|", record.sup_error(), eps));
    }
    report.check(gap_check("intermediate-bound", exp.window, beta, record.sup_gap()));
    report.csv = Some(format!("{}{}", system_header(exp), record.to_csv()));
    Ok(report)
}

pub fn cmd_control(exp: &Experiment) -> std::result::Result<Report, CliError> {
    exp.gains.require_k()?;
    let beta = control_beta(exp, exp.eps)?;
    let record = run_control(exp, beta, exp.eps)?;
    let mut report = Report::new("control");
    report.info("beta", format!("{} ({})", fmt_float(beta), beta_source(exp)));
    report.info("window", exp.window.to_string());
    report.info("horizon", exp.horizon.to_string());
    report.info("mode", record.mode.as_str());
    report.info("sup state error", fmt_float(record.sup_error()));
    report.info("transformer cost", fmt_float(record.transformer_cost));
    report.info("lqg cost", fmt_float(record.lqg_cost));
    report.info("cost gap", fmt_float(record.cost_gap()));
    if let Some(eps) = exp.eps {
        report.check(Check::at_most("control-bound", "sup |x - x*|", record.sup_error(), eps));
    }
    report.check(match decompose_disturbances(&record, &exp.sys, &exp.gains) {
        Ok(parts) => {
            let worst = parts.iter().map(|p| p.residual).fold(0.0, f64::max);
            Check::new(
                "stacked-recursion",
                true,
                format!("max residual {worst:.3e} over {} steps", parts.len()),
            )
        }
        Err(e) => Check::new("stacked-recursion", false, e.to_string()),
    });
    report.csv = Some(format!("{}{}", system_header(exp), record.to_csv()));
    Ok(report)
}

/// Points visited by `sweep`.
#[derive(Debug, Clone, PartialEq)]
pub enum Grid {
    /// β from the bounds at each ε.
    Eps(Vec<f64>),
    /// The same explicit β for filter and controller.
    Beta(Vec<f64>),
    /// Multiples of the filter bound at ε = 1.
    BetaMultipliers(Vec<f64>),
}

impl Grid {
    pub fn from_experiment(exp: &Experiment) -> std::result::Result<Self, CliError> {
        let s = &exp.sweep;
        match (&s.eps_grid, &s.beta_grid, &s.beta_multipliers) {
            (Some(g), None, None) => Ok(Self::Eps(g.clone())),
            (None, Some(g), None) => Ok(Self::Beta(g.clone())),
            (None, None, Some(g)) => Ok(Self::BetaMultipliers(g.clone())),
            (None, None, None) => Ok(Self::Eps(vec![1.0, 0.1, 0.01])),
            _ => Err(CliError::Config(
                "set only one of sweep.eps_grid, sweep.beta_grid, sweep.beta_multipliers".into(),
            )),
        }
    }

    fn len(&self) -> usize {
        match self {
            Self::Eps(g) | Self::Beta(g) | Self::BetaMultipliers(g) => g.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub index: usize,
    pub eps: Option<f64>,
    pub beta_filter: f64,
    pub beta_control: Option<f64>,
    pub sup_filter_error: f64,
    pub sup_state_error: Option<f64>,
    pub cost_gap: Option<f64>,
}

fn sweep_point(exp: &Experiment, grid: &Grid, index: usize) -> Result<SweepRow> {
    let has_control = exp.gains.k().is_some();
    let (eps, beta_filter, beta_control) = match grid {
        Grid::Eps(g) => {
            let eps = g[index];
            let bf = beta_for_filter(&exp.sys, &exp.gains, exp.window, eps)?.beta;
            let bc = if has_control {
                Some(beta_for_control(&exp.sys, &exp.gains, exp.window, eps)?.beta)
            } else {
                None
            };
            (Some(eps), bf, bc)
        }
        Grid::Beta(g) => (None, g[index], has_control.then_some(g[index])),
        Grid::BetaMultipliers(g) => {
            let base = beta_for_filter(&exp.sys, &exp.gains, exp.window, 1.0)?.beta;
            let beta = base * g[index];
            (None, beta, has_control.then_some(beta))
        }
    };
    let filter = run_filter(exp, beta_filter, eps)?;
    let control = beta_control.map(|b| run_control(exp, b, eps)).transpose()?;
    Ok(SweepRow {
        index,
        eps,
        beta_filter,
        beta_control,
        sup_filter_error: filter.sup_error(),
        sup_state_error: control.as_ref().map(ClosedLoopRecord::sup_error),
        cost_gap: control.as_ref().map(ClosedLoopRecord::cost_gap),
    })
}

/// Runs every grid point on its own thread; rows come back in grid order.
pub fn sweep_rows(exp: &Experiment, grid: &Grid) -> Result<Vec<SweepRow>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..grid.len())
            .map(|i| scope.spawn(move || sweep_point(exp, grid, i)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    })
}

pub fn sweep_csv(exp: &Experiment, rows: &[SweepRow]) -> String {
    let opt = |x: Option<f64>| x.map(fmt_float).unwrap_or_default();
    let mut out = system_header(exp);
    let _ = writeln!(out, "# rng={}", tfilter_core::noise::RNG_NAME);
    let _ = writeln!(out, "# seed={}", exp.seed);
    let _ = writeln!(out, "# window={}", exp.window);
    let _ = writeln!(out, "# horizon={}", exp.horizon);
    let _ = writeln!(out, "index,eps,beta_filter,beta_control,sup_filter_error,sup_state_error,cost_gap");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.index,
            opt(r.eps),
            fmt_float(r.beta_filter),
            opt(r.beta_control),
            fmt_float(r.sup_filter_error),
            opt(r.sup_state_error),
            opt(r.cost_gap)
        );
    }
    out
}

fn monotone_check(name: &str, values: &[f64], strict: bool) -> Check {
    let ok = values.windows(2).all(|w| if strict { w[1] < w[0] } else { w[1] <= w[0] });
    let list: Vec<String> = values.iter().map(|v| format!("{v:.3e}")).collect();
    let relation = if strict { "strictly decreasing" } else { "nonincreasing" };
    Check::new(name, ok, format!("{relation}: [{}]", list.join(", ")))
}

pub fn cmd_sweep(exp: &Experiment, grid: &Grid) -> std::result::Result<Report, CliError> {
    if grid.len() == 0 {
        return Err(CliError::Config("sweep grid is empty".into()));
    }
    let rows = sweep_rows(exp, grid)?;
    let mut report = Report::new("sweep");
    report.info("points", rows.len().to_string());
    let filter_errors: Vec<f64> = rows.iter().map(|r| r.sup_filter_error).collect();
    let state_errors: Option<Vec<f64>> = rows.iter().map(|r| r.sup_state_error).collect();
    let cost_gaps: Option<Vec<f64>> = rows.iter().map(|r| r.cost_gap).collect();
    match grid {
        Grid::Eps(_) => {
            for r in &rows {
                let eps = r.eps.expect("eps grid rows carry eps");
                report.check(Check::at_most(
                    format!("filter-bound[{}]", r.index),
                    "sup |xhat - xhat*|",
                    r.sup_filter_error,
                    eps,
                ));
                if let Some(e) = r.sup_state_error {
                    report.check(Check::at_most(format!("control-bound[{}]", r.index), "sup |x - x*|", e, eps));
                }
            }
            if let Some(gaps) = &cost_gaps {
                report.check(monotone_check("cost-gap-decreasing", gaps, true));
            }
        }
        Grid::Beta(_) | Grid::BetaMultipliers(_) => {
            report.check(monotone_check("filter-error-nonincreasing", &filter_errors, false));
            if let Some(errs) = &state_errors {
                report.check(monotone_check("state-error-nonincreasing", errs, false));
            }
        }
    }
    report.csv = Some(sweep_csv(exp, &rows));
    Ok(report)
}

pub fn cmd_verify(exp: &Experiment) -> std::result::Result<Report, CliError> {
    let sys = &exp.sys;
    let gains = &exp.gains;
    let mut report = Report::new("verify");
    let summary = equivalence_suite(exp.seed, exp.verify.trials, exp.verify.corrupt_attention)?;
    if exp.verify.corrupt_attention {
        report.info("fixture", "corrupted attention matrix");
    }
    report.check(equivalence_check(&summary));

    for c in factorization_checks("observer", &gains.observer_matrix(sys)) {
        report.check(c);
    }
    if gains.k().is_some() {
        let block = build_block_a(sys, gains)?;
        for c in factorization_checks("block", &block) {
            report.check(c);
        }
        let residual = verify_block_similarity(sys, gains)?;
        report.check(Check::at_most(
            "block-similarity",
            "residual",
            residual,
            SIMILARITY_TOL * spectral_norm(&block),
        ));
    }

    let beta = filter_beta(exp, exp.eps)?;
    report.check(argmax_check(exp.window, beta));
    let record = run_filter(exp, beta, exp.eps)?;
    report.check(gap_check("intermediate-bound-filter", exp.window, beta, record.sup_gap()));
    if gains.k().is_some() {
        let beta = control_beta(exp, exp.eps)?;
        let record = run_control(exp, beta, exp.eps)?;
        report.check(gap_check("intermediate-bound-control", exp.window, beta, record.sup_gap()));
    }
    Ok(report)
}
