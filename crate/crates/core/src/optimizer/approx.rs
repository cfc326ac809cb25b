//! Stage one: maximize profit over `(r, c_df, N_I)` with the effective idle
//! supply replaced by its truncated form and dispatch waits from bisection.

use std::time::Instant;

use super::boxqn::{minimize, QnConfig};
use super::{Layout, SolverConfig, StartPoint};
use crate::equilibrium::{complete, demand, pickup_waits, truncated_idle, EquilibriumState};
use crate::error::{Error, Result};
use crate::market::Market;
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct ApproxResult {
    pub r_r: Vec<f64>,
    pub c_df: Matrix,
    pub n_idle: Vec<f64>,
    pub profit: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub wall_time: f64,
}

/// State of the approximate problem at `(r, c_df, N_I)`.
pub fn approx_state(market: &Market, r_r: &[f64], c_df: &Matrix, n_idle: &[f64]) -> Result<EquilibriumState> {
    let d = demand(market, r_r, c_df, n_idle)?;
    let n_bar = truncated_idle(market, &d);
    let w_dg = pickup_waits(market, &d, &n_bar);
    complete(market, &d, &n_bar, &w_dg)
}

/// Negated approximate profit, `+∞` where the pipeline fails.
pub fn approx_objective(market: &Market, layout: &Layout, x: &[f64]) -> f64 {
    let (r, c, n) = layout.unpack(x);
    match approx_state(market, &r, &c, &n) {
        Ok(s) if s.profit.is_finite() => -s.profit,
        _ => f64::INFINITY,
    }
}

pub fn solve_approx(market: &Market, cfg: &SolverConfig, start: &StartPoint) -> Result<ApproxResult> {
    let t0 = Instant::now();
    let layout = Layout::new(market, false);
    let (lo, hi, typ) = layout.bounds(market, cfg);
    let mut x0 = layout.pack(&start.r_r, &start.c_df, &start.n_idle, None);
    layout.clamp(&mut x0, &lo, &hi);
    if !approx_objective(market, &layout, &x0).is_finite() {
        return Err(Error::NoFeasibleStart("approximate problem is infeasible at the start point".into()));
    }
    let qn = QnConfig { max_iter: cfg.approx_max_iter, grad_tol: cfg.grad_tol, f_tol: cfg.f_tol, fd_rel: cfg.fd_step, typical_scaling: false };
    let res = minimize(|x| approx_objective(market, &layout, x), &x0, &lo, &hi, &typ, &qn);
    let (r_r, c_df, n_idle) = layout.unpack(&res.x);
    Ok(ApproxResult {
        r_r,
        c_df,
        n_idle,
        profit: -res.f,
        iterations: res.iterations,
        evaluations: res.evaluations,
        converged: res.converged,
        wall_time: t0.elapsed().as_secs_f64(),
    })
}
