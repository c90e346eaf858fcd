//! One-shot cross-oracle and structural suite behind `memsample verify`.
//!
//! The closed-form average cost is taken through [`VerifyPlan::g0`] so a
//! defective formula can be swapped in and must be caught.

use std::io;

use memsample::analytic::{self, optimal_threshold};
use memsample::sim::{first_passage_monte_carlo, simulate, PolicySpec, SimConfig, DEFAULT_BATCHES};
use memsample::solver::{
    extract_threshold, relative_value_iteration, vanishing_discount_check, verify_concavity_in_y,
    verify_diagonal_idle, verify_monotone, verify_threshold_in_y, ExtractedThreshold, GridSpec,
    StructureReport, DEFAULT_MAX_ITERS,
};
use memsample::{AgeState, ModelParams};
use rayon::prelude::*;

use crate::error::CliError;
use crate::figures;

pub type G0Fn = fn(u64, &ModelParams) -> memsample::Result<f64>;

pub const RVI_TOL: f64 = 1e-9;
pub const G_TOL: f64 = 1e-3;
pub const IDENTITY_TOL: f64 = 1e-12;
pub const LOWER_BOUND_TOL: f64 = 1e-9;
pub const BRUTE_FORCE_LIMIT: u64 = 10_000;
pub const FIRST_PASSAGE_EXTENT: u64 = 100;

#[derive(Debug, Clone)]
pub struct VerifyPlan {
    pub p_grid: Vec<f64>,
    pub c_grid: Vec<f64>,
    pub sim_points: Vec<(f64, f64)>,
    pub sim_slots: u64,
    pub sim_warmup: u64,
    pub first_passage_points: Vec<(f64, f64)>,
    pub first_passage_episodes: u64,
    pub vanishing_point: (f64, f64),
    pub vanishing_alphas: Vec<f64>,
    pub seed: u64,
    pub g0: G0Fn,
}

impl Default for VerifyPlan {
    fn default() -> Self {
        Self {
            p_grid: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            c_grid: vec![0.0, 1.0, 5.0, 20.0, 80.0],
            sim_points: vec![(0.5, 5.0), (0.5, 80.0), (0.8, 20.0)],
            sim_slots: 1_000_000,
            sim_warmup: 10_000,
            first_passage_points: vec![(0.5, 0.0), (0.5, 2.0), (0.8, 5.0)],
            first_passage_episodes: 200_000,
            vanishing_point: (0.5, 5.0),
            vanishing_alphas: vec![0.9, 0.99, 0.999],
            seed: 1,
            g0: analytic::g0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub case: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(
        name: &'static str,
        case: impl Into<String>,
        passed: bool,
        detail: impl Into<String>,
    ) -> Self {
        Self {
            name,
            case: case.into(),
            passed,
            detail: detail.into(),
        }
    }

    fn from_error(
        name: &'static str,
        case: impl Into<String>,
        err: impl std::fmt::Display,
    ) -> Self {
        Self::new(name, case, false, format!("error: {err}"))
    }
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn summary_line(&self) -> String {
        let failed = self.failures().count();
        format!(
            "verify checks={} passed={} failed={} status={}",
            self.checks.len(),
            self.checks.len() - failed,
            failed,
            if failed == 0 { "ok" } else { "fail" }
        )
    }

    pub fn write_table<W: io::Write>(&self, mut out: W) -> io::Result<()> {
        let name_w = self
            .checks
            .iter()
            .map(|c| c.name.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let case_w = self
            .checks
            .iter()
            .map(|c| c.case.len())
            .max()
            .unwrap_or(4)
            .max(4);
        writeln!(
            out,
            "{:<name_w$}  {:<case_w$}  {:<6}  detail",
            "check", "case", "result"
        )?;
        for c in &self.checks {
            let verdict = if c.passed { "PASS" } else { "FAIL" };
            writeln!(
                out,
                "{:<name_w$}  {:<case_w$}  {verdict:<6}  {}",
                c.name, c.case, c.detail
            )?;
        }
        Ok(())
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["check", "case", "passed", "detail"])?;
        for c in &self.checks {
            w.write_record([
                c.name,
                &c.case,
                if c.passed { "true" } else { "false" },
                &c.detail,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn case(p: f64, c: f64) -> String {
    format!("p={p} c={c}")
}

pub fn run(plan: &VerifyPlan) -> Result<VerifyReport, CliError> {
    if plan.p_grid.is_empty() || plan.c_grid.is_empty() {
        return Err(CliError::Usage("verification grid is empty".into()));
    }
    let mut points = Vec::new();
    for &p in &plan.p_grid {
        for &c in &plan.c_grid {
            points.push(ModelParams::new(p, c)?);
        }
    }
    for &(p, c) in plan.sim_points.iter().chain(&plan.first_passage_points) {
        ModelParams::new(p, c)?;
    }
    SimConfig::new(plan.sim_slots, plan.sim_warmup, plan.seed, DEFAULT_BATCHES)?;

    let per_point: Vec<Vec<Check>> = points
        .par_iter()
        .map(|params| grid_point_checks(plan, params))
        .collect();
    let mut checks: Vec<Check> = per_point.into_iter().flatten().collect();

    checks.push(vanishing_discount(plan));
    checks.extend(
        plan.sim_points
            .par_iter()
            .enumerate()
            .map(|(i, &(p, c))| simulation_check(plan, p, c, plan.seed ^ i as u64))
            .collect::<Vec<_>>(),
    );
    checks.extend(
        plan.first_passage_points
            .par_iter()
            .enumerate()
            .map(|(i, &(p, c))| first_passage_check(plan, p, c, plan.seed ^ ((i as u64 + 1) << 32)))
            .collect::<Vec<_>>(),
    );
    checks.extend(figure_checks(plan));
    Ok(VerifyReport { checks })
}

fn structure(name: &'static str, case: &str, report: StructureReport) -> Check {
    let detail = match report.first_violation {
        None => format!("{} states, 0 violations", report.checked),
        Some((x, y)) => format!(
            "{} of {} states violate, first at ({x}, {y}), worst {:e}",
            report.violations, report.checked, report.worst
        ),
    };
    Check::new(name, case, report.passed(), detail)
}

fn grid_point_checks(plan: &VerifyPlan, params: &ModelParams) -> Vec<Check> {
    let (p, c) = (params.p(), params.c());
    let label = case(p, c);
    let report = optimal_threshold(params);
    let mut checks = Vec::new();

    let g_closed = match (plan.g0)(report.y0_star, params) {
        Ok(v) => v,
        Err(e) => return vec![Check::from_error("closed_form", label, e)],
    };

    match relative_value_iteration(
        params,
        GridSpec::for_params(params),
        RVI_TOL,
        DEFAULT_MAX_ITERS,
    ) {
        Err(e) => checks.push(Check::from_error("rvi_converged", label.clone(), e)),
        Ok(sol) => {
            checks.push(Check::new(
                "rvi_converged",
                label.clone(),
                sol.converged,
                format!("{} iterations, span {:e}", sol.iterations, sol.span_at_stop),
            ));
            let err = (sol.g - g_closed).abs();
            checks.push(Check::new(
                "rvi_g_vs_closed_form",
                label.clone(),
                err <= G_TOL,
                format!("g_rvi={:.9} g0(Y0*)={:.9} |diff|={err:e}", sol.g, g_closed),
            ));
            let extracted = extract_threshold(&sol.policy);
            let ok = match extracted {
                ExtractedThreshold::Threshold(t) => {
                    t == report.y0_star || (report.tie && t == report.y0_star + 1)
                }
                ExtractedThreshold::NotThreshold => false,
            };
            checks.push(Check::new(
                "rvi_threshold",
                label.clone(),
                ok,
                format!(
                    "extracted {extracted:?}, Y0*={} tie={}",
                    report.y0_star, report.tie
                ),
            ));
            if sol.converged {
                checks.push(structure("prop1_monotone", &label, verify_monotone(&sol.f)));
                checks.push(structure(
                    "prop2_threshold_in_y",
                    &label,
                    verify_threshold_in_y(&sol.policy),
                ));
                checks.push(structure(
                    "prop3_concave_in_y",
                    &label,
                    verify_concavity_in_y(&sol.f),
                ));
                checks.push(structure(
                    "prop4_diagonal_idle",
                    &label,
                    verify_diagonal_idle(&sol.policy),
                ));
            }
        }
    }

    checks.push(special_cases(plan, params, &label));
    checks.push(brute_force(
        plan,
        params,
        &label,
        report.y0_star,
        report.tie,
    ));

    let lb = report.lower_bound;
    let at_tilde = analytic::g0_continuous(report.y0_tilde, params);
    let ok = lb <= g_closed + IDENTITY_TOL && (lb - at_tilde).abs() <= LOWER_BOUND_TOL;
    checks.push(Check::new(
        "lower_bound",
        label.clone(),
        ok,
        format!("LB={lb:.9} g*={g_closed:.9} g0(Y0~)={at_tilde:.9}"),
    ));

    let mut worst: Option<(u64, u64, f64)> = None;
    for y in 1..=FIRST_PASSAGE_EXTENT {
        for x in 0..=y {
            let s = AgeState::new(x, y).expect("x <= y, y >= 1");
            let slack =
                analytic::first_passage_bound(s, params) - analytic::first_passage_exact(s, params);
            if worst.is_none_or(|(_, _, w)| slack < w) {
                worst = Some((x, y, slack));
            }
        }
    }
    let (wx, wy, slack) = worst.expect("non-empty range");
    checks.push(Check::new(
        "first_passage_bound",
        label,
        slack >= 0.0,
        format!("min bound-exact={slack:.6} at ({wx}, {wy})"),
    ));
    checks
}

fn special_cases(plan: &VerifyPlan, params: &ModelParams, label: &str) -> Check {
    let (p, c) = (params.p(), params.c());
    let one = (plan.g0)(1, params).map(|g| (g - (1.0 / p + c * p)).abs());
    let two = (plan.g0)(2, params).map(|g| (g - (1.0 / p + (c + 1.0) * p / (1.0 + p))).abs());
    match (one, two) {
        (Ok(e1), Ok(e2)) => Check::new(
            "g0_special_cases",
            label,
            e1 <= IDENTITY_TOL && e2 <= IDENTITY_TOL,
            format!("|g0(1) err|={e1:e} |g0(2) err|={e2:e}"),
        ),
        (Err(e), _) | (_, Err(e)) => Check::from_error("g0_special_cases", label, e),
    }
}

fn brute_force(
    plan: &VerifyPlan,
    params: &ModelParams,
    label: &str,
    y0_star: u64,
    tie: bool,
) -> Check {
    let mut best = (0, f64::INFINITY);
    for y0 in 1..=BRUTE_FORCE_LIMIT {
        match (plan.g0)(y0, params) {
            Ok(g) if g < best.1 => best = (y0, g),
            Ok(_) => {}
            Err(e) => return Check::from_error("argmin_brute_force", label, e),
        }
    }
    let ok = best.0 == y0_star || (tie && best.0 == y0_star + 1);
    Check::new(
        "argmin_brute_force",
        label,
        ok,
        format!(
            "argmin over 1..={BRUTE_FORCE_LIMIT} is {}, Y0*={y0_star}",
            best.0
        ),
    )
}

fn vanishing_discount(plan: &VerifyPlan) -> Check {
    let (p, c) = plan.vanishing_point;
    let label = case(p, c);
    let result = ModelParams::new(p, c).and_then(|params| {
        vanishing_discount_check(
            &params,
            GridSpec::for_params(&params),
            &plan.vanishing_alphas,
        )
    });
    match result {
        Err(e) => Check::from_error("vanishing_discount", label, e),
        Ok(report) => {
            let gaps: Vec<String> = report
                .points
                .iter()
                .map(|pt| format!("{:.2e}", pt.gap))
                .collect();
            let all_converged = report.points.iter().all(|pt| pt.converged);
            let ok = all_converged
                && report.gaps_strictly_decreasing()
                && report.final_gap().is_some_and(|g| g <= 0.05);
            Check::new(
                "vanishing_discount",
                label,
                ok,
                format!("g={:.6} gaps=[{}]", report.g, gaps.join(", ")),
            )
        }
    }
}

fn simulation_check(plan: &VerifyPlan, p: f64, c: f64, seed: u64) -> Check {
    let label = case(p, c);
    let run = || -> Result<Check, CliError> {
        let params = ModelParams::new(p, c)?;
        let report = optimal_threshold(&params);
        let target = (plan.g0)(report.y0_star, &params)?;
        let config = SimConfig::new(plan.sim_slots, plan.sim_warmup, seed, DEFAULT_BATCHES)?;
        let est = simulate(&params, &PolicySpec::threshold(report.y0_star)?, &config);
        let err = (est.mean_cost - target).abs();
        Ok(Check::new(
            "simulation",
            label.clone(),
            err <= 3.0 * est.ci_halfwidth,
            format!(
                "Y0*={} mean={:.5} ci={:.5} g0={target:.5} seed={seed}",
                report.y0_star, est.mean_cost, est.ci_halfwidth
            ),
        ))
    };
    run().unwrap_or_else(|e| Check::from_error("simulation", label.clone(), e))
}

fn first_passage_check(plan: &VerifyPlan, p: f64, c: f64, seed: u64) -> Check {
    let label = case(p, c);
    let run = || -> Result<Check, CliError> {
        let params = ModelParams::new(p, c)?;
        let start = AgeState::new(1, 1)?;
        let exact = analytic::first_passage_exact(start, &params);
        let est = first_passage_monte_carlo(&params, start, plan.first_passage_episodes, seed)?;
        let err = (est.mean - exact).abs();
        Ok(Check::new(
            "first_passage_mc",
            label.clone(),
            est.aborted == 0 && err <= 3.0 * est.ci_halfwidth,
            format!(
                "mean={:.4} ci={:.4} exact={exact:.4} seed={seed}",
                est.mean, est.ci_halfwidth
            ),
        ))
    };
    run().unwrap_or_else(|e| Check::from_error("first_passage_mc", label.clone(), e))
}

fn figure_checks(plan: &VerifyPlan) -> Vec<Check> {
    let fig2 = ModelParams::new(0.5, 80.0)
        .map_err(CliError::from)
        .and_then(|params| figures::fig2_rows(&params))
        .map_err(|e| e.to_string())
        .and_then(|rows| figures::check_fig2(&rows));
    let fig3 = figures::fig3_rows(&plan.c_grid)
        .map_err(|e| e.to_string())
        .and_then(|rows| figures::check_fig3(&rows));
    let fig4 = figures::fig4_rows(&plan.c_grid)
        .map_err(|e| e.to_string())
        .and_then(|rows| figures::check_fig4(&rows));
    [
        ("fig2_minimum", fig2),
        ("fig3_monotone", fig3),
        ("fig4_monotone_bound", fig4),
    ]
    .into_iter()
    .map(|(name, r)| match r {
        Ok(()) => Check::new(name, "tables", true, "shape holds"),
        Err(msg) => Check::new(name, "tables", false, msg),
    })
    .collect()
}
