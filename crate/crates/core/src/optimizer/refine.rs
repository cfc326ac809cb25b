//! Stage two: maximize profit over all elementary variables subject to the
//! effective idle supply and dispatch-wait equations.
//!
//! Each augmented Lagrangian round ends with a restoration step that keeps
//! `(r, c_df, N_I)` and solves the inner equations exactly; the best
//! restored point is what gets reported.

use std::time::Instant;

use super::auglag::{solve, AlConfig, Next};
use super::boxqn::QnConfig;
use super::{Layout, OptReport, SolverConfig};
use crate::ctmc::FixedPointConfig;
use crate::equilibrium::{complete, demand, solve_inner, ElementaryVars, EquilibriumState};
use crate::error::{Error, Result};
use crate::market::Market;

pub(super) const IDLE_SCALE: f64 = 100.0;
pub(super) const WAIT_SCALE: f64 = 5.0;
/// Relative change in the best restored profit below which rounds stop.
const PROFIT_STALL: f64 = 1e-7;

fn restore(market: &Market, layout: &Layout, cfg: &SolverConfig, x: &[f64]) -> Option<EquilibriumState> {
    let (r, c, n) = layout.unpack(x);
    let d = demand(market, &r, &c, &n).ok()?;
    let start = if layout.with_inner { Some(layout.unpack_inner(x, &d.n_idle).0) } else { None };
    let fp = FixedPointConfig { tol: cfg.bisection_tol, ..Default::default() };
    let inner = solve_inner(market, &d, start.as_deref(), fp).ok()?;
    let s = complete(market, &d, &inner.n_bar, &inner.w_dg).ok()?;
    s.profit.is_finite().then_some(s)
}

pub fn refine_constrained(market: &Market, cfg: &SolverConfig, warm: &ElementaryVars) -> Result<OptReport> {
    let t0 = Instant::now();
    let layout = Layout::new(market, true);
    let (lo, hi, typ) = layout.bounds(market, cfg);
    let mut x0 = layout.pack(&warm.r_r, &warm.c_df, &warm.n_idle, Some((&warm.n_bar, &warm.w_dg)));
    layout.clamp(&mut x0, &lo, &hi);

    let eval = |x: &[f64]| -> Option<(f64, Vec<f64>)> {
        let (r, c, n) = layout.unpack(x);
        let d = demand(market, &r, &c, &n).ok()?;
        let (nb, w) = layout.unpack_inner(x, &d.n_idle);
        let s = complete(market, &d, &nb, &w).ok()?;
        if !s.profit.is_finite() {
            return None;
        }
        let mut h: Vec<f64> = layout.flex_zones.iter().map(|&z| s.residuals.idle[z] / IDLE_SCALE).collect();
        h.extend(layout.flex_zones.iter().map(|&z| s.residuals.wait[z] / WAIT_SCALE));
        Some((-s.profit, h))
    };

    let mut best: Option<EquilibriumState> = restore(market, &layout, cfg, &x0);
    let mut trajectory = Vec::new();
    let pack_state = |s: &EquilibriumState| {
        let mut x = layout.pack(&s.demand.r_r, &s.demand.c_df, &s.demand.n_idle, Some((&s.n_bar, &s.w_dg)));
        layout.clamp(&mut x, &lo, &hi);
        x
    };
    if let Some(s) = &best {
        x0 = pack_state(s);
    }
    let al = AlConfig {
        mu0: cfg.mu0,
        growth: cfg.mu_growth,
        max_outer: cfg.max_outer,
        tol: cfg.residual_tol,
        inner: QnConfig { max_iter: cfg.inner_max_iter, grad_tol: cfg.grad_tol, f_tol: cfg.f_tol, fd_rel: cfg.fd_step, typical_scaling: false },
    };
    let mut diverged = false;
    let res = solve(eval, &x0, &lo, &hi, &typ, &al, |x, _| {
        let before = best.as_ref().map_or(f64::NEG_INFINITY, |b| b.profit);
        let next = match restore(market, &layout, cfg, x) {
            Some(s) => {
                let xs = pack_state(&s);
                if best.as_ref().map_or(true, |b| s.profit > b.profit) {
                    best = Some(s);
                }
                Next::Restart(xs)
            }
            None => {
                diverged = true;
                best.as_ref().map_or(Next::Continue, |b| Next::Restart(pack_state(b)))
            }
        };
        let after = best.as_ref().map_or(f64::NEG_INFINITY, |b| b.profit);
        trajectory.push(after);
        if trajectory.len() > 1 && before.is_finite() && (after - before).abs() <= PROFIT_STALL * after.abs().max(1.0) {
            return Next::Stop;
        }
        next
    });
    if let Some(s) = restore(market, &layout, cfg, &res.x) {
        if best.as_ref().map_or(true, |b| s.profit > b.profit) {
            best = Some(s);
        }
    }
    let state = best.ok_or_else(|| Error::NoFeasibleStart("constrained refinement found no feasible point".into()))?;
    let residual = state.residuals.max_abs();
    Ok(OptReport {
        method: "refine".into(),
        vars: state.vars(),
        profit: state.profit,
        approx_profit: None,
        refined_profit: Some(state.profit),
        approx_iterations: 0,
        refine_iterations: res.iterations,
        evaluations: res.evaluations,
        outer_rounds: res.rounds,
        trajectory,
        residual,
        converged: residual <= cfg.residual_tol,
        diverged,
        wall_time: t0.elapsed().as_secs_f64(),
        state: Some(Box::new(state)),
    })
}
