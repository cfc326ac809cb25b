//! The two-stage solution algorithm and its multistart driver.

use std::time::Instant;

use super::approx::solve_approx;
use super::direct::direct_solve;
use super::refine::refine_constrained;
use super::{OptReport, SolverConfig, StartPoint};
use crate::equilibrium::{demand, pickup_waits, truncated_idle, ElementaryVars};
use crate::error::Result;
use crate::market::Market;

/// Approximate stage, warm start of the constrained problem, refinement.
pub fn algorithm1(market: &Market, cfg: &SolverConfig, start: &StartPoint) -> Result<OptReport> {
    let t0 = Instant::now();
    let a = solve_approx(market, cfg, start)?;
    let d = demand(market, &a.r_r, &a.c_df, &a.n_idle)?;
    let n_bar = truncated_idle(market, &d);
    let w_dg = pickup_waits(market, &d, &n_bar);
    let warm = ElementaryVars { r_r: a.r_r, c_df: a.c_df, n_idle: a.n_idle, n_bar, w_dg };
    let mut report = refine_constrained(market, cfg, &warm)?;
    report.method = "algorithm1".into();
    report.approx_profit = Some(a.profit);
    report.approx_iterations = a.iterations;
    report.evaluations += a.evaluations;
    report.wall_time = t0.elapsed().as_secs_f64();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Algorithm1,
    Direct,
}

/// Runs `method` from `cfg.starts` sampled start points, in order.
pub fn multistart(market: &Market, cfg: &SolverConfig, method: Method) -> Vec<Result<OptReport>> {
    StartPoint::sample_many(market, cfg.seed, cfg.starts)
        .iter()
        .map(|s| match method {
            Method::Algorithm1 => algorithm1(market, cfg, s),
            Method::Direct => direct_solve(market, cfg, s),
        })
        .collect()
}

/// Highest-profit successful report.
pub fn best_of(reports: &[Result<OptReport>]) -> Option<&OptReport> {
    reports
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .max_by(|a, b| a.profit.partial_cmp(&b.profit).unwrap_or(std::cmp::Ordering::Equal))
}
