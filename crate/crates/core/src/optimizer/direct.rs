//! Baseline: the pricing problem solved as stated. Every endogenous quantity
//! is a decision variable and every equilibrium relation an equality
//! constraint, handled by the same augmented Lagrangian as the refinement
//! stage.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::auglag::{solve, AlConfig, Next};
use super::boxqn::QnConfig;
use super::refine::{IDLE_SCALE, WAIT_SCALE};
use super::{OptReport, SolverConfig, StartPoint};
use crate::ctmc::{build_transitions, effective_idle_rhs, flexible_pickup_supply, holding_times, limiting_probabilities, CtmcSolution};
use crate::equilibrium::{evaluate, required_drivers, revenue, ElementaryVars, MIN_EFFECTIVE_IDLE};
use crate::error::{Error, Result};
use crate::first_passage::{first_passage_times, flexible_delivery_time, transit_times, zone_transition_matrix};
use crate::market::{delivery_split, driver_supply, ride_cost, ride_demand, Market};
use crate::matching::{dest_shares, success_drop, success_pick, success_rates, waiting_time_ondemand};
use crate::matrix::Matrix;

const TIME_SCALE: f64 = 10.0;
const PI_SCALE: f64 = 10.0;
const SUPPLY_SCALE: f64 = 100.0;
const TIME_MAX: f64 = 1e4;
/// Floor on flexible demand as a fraction of potential demand. A logit rate
/// is never exactly zero, and at zero the destination shares jump.
const MIN_FLEX_SHARE: f64 = 1e-9;
const START_PROJECTION_STEPS: usize = 50;
const ROUND_PROJECTION_STEPS: usize = 10;

/// Position of each variable block in the decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectLayout {
    pub zones: usize,
    pub capacity: usize,
    pub ride_pairs: Vec<(usize, usize)>,
    pub parcel_pairs: Vec<(usize, usize)>,
    pub flex_pairs: Vec<(usize, usize)>,
    pub flex_zones: Vec<usize>,
    off: [usize; 14],
}

/// Decoded decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectPoint {
    pub r_r: Vec<f64>,
    pub q: f64,
    pub r_df: Matrix,
    pub lambda_r: Matrix,
    pub lambda_df: Matrix,
    pub lambda_do: Matrix,
    pub n_idle: Vec<f64>,
    pub n_bar: Vec<f64>,
    pub w_dg: Vec<f64>,
    pub n_ig: Vec<f64>,
    pub et: Matrix,
    pub t_df: Matrix,
    pub pi: Vec<f64>,
}

impl DirectLayout {
    pub fn new(market: &Market) -> Self {
        let m = market.zones();
        let p = &market.params;
        let pairs = |mat: &Matrix| -> Vec<(usize, usize)> {
            (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).filter(|&(i, j)| mat[(i, j)] > 0.0).collect()
        };
        let ride_pairs = pairs(&p.lambda_r0);
        let parcel_pairs = pairs(&p.lambda_d0);
        let flex_pairs = if p.flexible { parcel_pairs.clone() } else { Vec::new() };
        let mut flex_zones: Vec<usize> = flex_pairs.iter().map(|p| p.0).collect();
        flex_zones.dedup();
        let states = if flex_pairs.is_empty() { 0 } else { m * (p.capacity + 1) };
        let sizes = [
            m,
            1,
            flex_pairs.len(),
            ride_pairs.len(),
            flex_pairs.len(),
            parcel_pairs.len(),
            m,
            flex_zones.len(),
            flex_zones.len(),
            flex_zones.len(),
            m * m,
            flex_pairs.len(),
            states,
        ];
        let mut off = [0; 14];
        for k in 0..sizes.len() {
            off[k + 1] = off[k] + sizes[k];
        }
        DirectLayout { zones: m, capacity: p.capacity, ride_pairs, parcel_pairs, flex_pairs, flex_zones, off }
    }

    pub fn len(&self) -> usize {
        self.off[13]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn has_chain(&self) -> bool {
        !self.flex_pairs.is_empty()
    }

    pub fn unpack(&self, x: &[f64]) -> DirectPoint {
        let m = self.zones;
        let o = &self.off;
        let scatter = |pairs: &[(usize, usize)], start: usize| {
            let mut a = Matrix::zeros(m, m);
            for (k, &(i, j)) in pairs.iter().enumerate() {
                a[(i, j)] = x[start + k];
            }
            a
        };
        let n_idle = x[o[6]..o[7]].to_vec();
        let mut n_bar = n_idle.clone();
        let mut w_dg = vec![f64::INFINITY; m];
        let mut n_ig = vec![0.0; m];
        for (k, &z) in self.flex_zones.iter().enumerate() {
            n_bar[z] = x[o[7] + k];
            w_dg[z] = x[o[8] + k];
            n_ig[z] = x[o[9] + k];
        }
        DirectPoint {
            r_r: x[..m].to_vec(),
            q: x[o[1]],
            r_df: scatter(&self.flex_pairs, o[2]),
            lambda_r: scatter(&self.ride_pairs, o[3]),
            lambda_df: scatter(&self.flex_pairs, o[4]),
            lambda_do: scatter(&self.parcel_pairs, o[5]),
            n_idle,
            n_bar,
            w_dg,
            n_ig,
            et: Matrix::from_fn(m, m, |i, j| x[o[10] + i * m + j]),
            t_df: scatter(&self.flex_pairs, o[11]),
            pi: x[o[12]..o[13]].to_vec(),
        }
    }

    pub fn pack(&self, pt: &DirectPoint) -> Vec<f64> {
        let mut x = pt.r_r.clone();
        x.push(pt.q);
        let gather = |x: &mut Vec<f64>, pairs: &[(usize, usize)], a: &Matrix| x.extend(pairs.iter().map(|&(i, j)| a[(i, j)]));
        gather(&mut x, &self.flex_pairs, &pt.r_df);
        gather(&mut x, &self.ride_pairs, &pt.lambda_r);
        gather(&mut x, &self.flex_pairs, &pt.lambda_df);
        gather(&mut x, &self.parcel_pairs, &pt.lambda_do);
        x.extend_from_slice(&pt.n_idle);
        x.extend(self.flex_zones.iter().map(|&z| pt.n_bar[z]));
        x.extend(self.flex_zones.iter().map(|&z| pt.w_dg[z]));
        x.extend(self.flex_zones.iter().map(|&z| pt.n_ig[z]));
        x.extend_from_slice(pt.et.as_slice());
        gather(&mut x, &self.flex_pairs, &pt.t_df);
        if self.has_chain() {
            x.extend_from_slice(&pt.pi);
        }
        x
    }

    /// Box bounds and typical magnitudes.
    pub fn bounds(&self, market: &Market, cfg: &SolverConfig) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let m = self.zones;
        let p = &market.params;
        let (mut lo, mut hi, mut typ) = (Vec::new(), Vec::new(), Vec::new());
        let mut push = |a: f64, b: f64, t: f64| {
            lo.push(a);
            hi.push(b);
            typ.push(t);
        };
        for _ in 0..m {
            push(cfg.r_bounds.0, cfg.r_bounds.1, 1.0);
        }
        push(cfg.q_bounds.0, cfg.q_bounds.1, 10.0);
        for _ in &self.flex_pairs {
            push(cfg.r_df_bounds.0, cfg.r_df_bounds.1, 10.0);
        }
        for &(i, j) in &self.ride_pairs {
            push(0.0, p.lambda_r0[(i, j)], p.lambda_r0[(i, j)]);
        }
        for &(i, j) in &self.flex_pairs {
            push(MIN_FLEX_SHARE * p.lambda_d0[(i, j)], p.lambda_d0[(i, j)], p.lambda_d0[(i, j)]);
        }
        for &(i, j) in &self.parcel_pairs {
            push(0.0, p.lambda_d0[(i, j)], p.lambda_d0[(i, j)]);
        }
        let nmin = market.min_idle();
        for z in 0..m {
            push(nmin[z], cfg.n_idle_max.max(nmin[z] * 2.0), 100.0);
        }
        for _ in &self.flex_zones {
            push(MIN_EFFECTIVE_IDLE, cfg.n_idle_max, 100.0);
        }
        for _ in &self.flex_zones {
            push(1e-3, cfg.w_dg_max, 5.0);
        }
        for _ in &self.flex_zones {
            push(MIN_EFFECTIVE_IDLE, cfg.n_idle_max, 100.0);
        }
        for _ in 0..m * m {
            push(0.0, TIME_MAX, 100.0);
        }
        for _ in &self.flex_pairs {
            push(0.0, TIME_MAX, 100.0);
        }
        if self.has_chain() {
            for _ in 0..m * (self.capacity + 1) {
                push(0.0, 1.0, 0.1);
            }
        }
        (lo, hi, typ)
    }
}

/// Objective of the pricing problem at a decoded point ($/min).
pub fn direct_profit(market: &Market, pt: &DirectPoint) -> f64 {
    let p = &market.params;
    let (ride, flex) = revenue(market, &pt.r_r, &pt.lambda_r, &pt.lambda_do, &pt.r_df, &pt.lambda_df);
    ride + flex - driver_supply(pt.q, p.outside_wage, p.sigma, p.driver_pool) * pt.q / 60.0
}

/// Scaled equality residuals; `None` where the relations are undefined.
pub fn direct_residuals(market: &Market, layout: &DirectLayout, pt: &DirectPoint) -> Option<Vec<f64>> {
    let net = &market.network;
    let p = &market.params;
    let m = net.zones;
    let t = &net.travel_time;
    let w_r = (0..m).map(|i| waiting_time_ondemand(net.matching[i], pt.n_idle[i], i).ok()).collect::<Option<Vec<_>>>()?;
    let flow = pt.lambda_r.add(&pt.lambda_do);
    let outflow: Vec<f64> = (0..m).map(|i| flow.row_sum(i)).collect();
    if outflow.iter().any(|o| !(*o > 0.0)) {
        return None;
    }
    let w_idle: Vec<f64> = (0..m).map(|i| pt.n_idle[i] / outflow[i]).collect();
    let mut h = Vec::with_capacity(layout.len());

    for &(i, j) in &layout.ride_pairs {
        let l0 = p.lambda_r0[(i, j)];
        let c = ride_cost(w_r[i], pt.r_r[i], t[(i, j)], p.alpha_r);
        h.push((pt.lambda_r[(i, j)] - ride_demand(l0, c, p.c_r0[(i, j)], p.eps)) / l0);
    }
    let w_df: Vec<f64> = (0..m).map(|i| if pt.n_ig[i] > 0.0 { net.matching[i] / pt.n_ig[i].sqrt() } else { f64::INFINITY }).collect();
    for &(i, j) in &layout.parcel_pairs {
        let l0 = p.lambda_d0[(i, j)];
        let c_do = p.alpha_d * w_r[i] + p.disutility.eval(t[(i, j)]) + pt.r_r[i] * t[(i, j)];
        let c_f = if p.flexible {
            p.alpha_d * w_df[i] + p.disutility.eval(pt.t_df[(i, j)]) + pt.r_df[(i, j)]
        } else {
            f64::INFINITY
        };
        let (f, o) = delivery_split(l0, c_f, c_do, p.c_d0[(i, j)], p.eta);
        if p.flexible {
            h.push((pt.lambda_df[(i, j)] - f) / l0);
        }
        h.push((pt.lambda_do[(i, j)] - o) / l0);
    }

    let pz = zone_transition_matrix(&pt.lambda_r, &pt.lambda_do).ok()?;
    let s = transit_times(&w_idle, t);
    for i in 0..m {
        let base: f64 = (0..m).map(|k| pz[(i, k)] * s[(i, k)]).sum();
        for j in 0..m {
            let rest: f64 = (0..m).filter(|&k| k != j).map(|k| pz[(i, k)] * pt.et[(k, j)]).sum();
            h.push((pt.et[(i, j)] - base - rest) / TIME_SCALE);
        }
    }
    let drop_succ: Vec<f64> = (0..m).map(|i| success_drop(net.dropoff_time[i], w_idle[i], &p.distribution)).collect();
    let t_df_model = flexible_delivery_time(&pt.et, &drop_succ);
    for &(i, j) in &layout.flex_pairs {
        let v = (pt.t_df[(i, j)] - t_df_model[(i, j)]) / TIME_SCALE;
        if !v.is_finite() {
            return None;
        }
        h.push(v);
    }

    if layout.has_chain() {
        let tbar: Vec<f64> = (0..m).map(|i| net.matching[i] / pt.n_bar[i].sqrt()).collect();
        let rates = success_rates(&w_idle, &net.dropoff_time, &tbar, &pt.w_dg, &pt.lambda_df, p.capacity, &p.distribution);
        let pc = build_transitions(&pz, &rates).ok()?;
        let hold = holding_times(&pc, &w_idle, &net.dropoff_time, &pt.w_dg, &tbar, p.capacity);
        let states = pt.pi.len();
        let nu: Vec<f64> = (0..states).map(|k| pt.pi[k] / hold[k]).collect();
        for k in 0..states {
            let inflow: f64 = (0..states).map(|l| nu[l] * pc[(l, k)]).sum();
            h.push((pt.pi[k] - hold[k] * inflow) * PI_SCALE);
        }
        h.push((pt.pi.iter().sum::<f64>() - 1.0) * PI_SCALE);
        let sol = CtmcSolution { zones: m, capacity: p.capacity, transitions: pc, hold, pi: pt.pi.clone(), transient: Vec::new() };
        let n_ig = flexible_pickup_supply(&pt.n_idle, &sol, &rates);
        let shares = dest_shares(&pt.lambda_df);
        for &z in &layout.flex_zones {
            h.push((pt.n_ig[z] - n_ig[z]) / IDLE_SCALE);
        }
        for &z in &layout.flex_zones {
            let inbound = pt.lambda_df.col_sum(z);
            let full = sol.conditional(z)[p.capacity];
            let rhs = effective_idle_rhs(pt.n_idle[z], net.dropoff_time[z], inbound, full, shares[z], p.capacity);
            h.push((pt.n_bar[z] - rhs) / IDLE_SCALE);
        }
        for &z in &layout.flex_zones {
            let pick = success_pick(tbar[z], pt.w_dg[z], w_idle[z], &p.distribution).0;
            let potential = p.lambda_d0.row_sum(z);
            h.push((pt.w_dg[z] * pt.lambda_df.row_sum(z) - pick * pt.n_bar[z]) / (WAIT_SCALE * potential));
        }
    }

    let required = required_drivers(market, &pt.lambda_r, &pt.lambda_do, &w_r, &pt.n_idle);
    h.push((driver_supply(pt.q, p.outside_wage, p.sigma, p.driver_pool) - required) / SUPPLY_SCALE);
    h.iter().all(|v| v.is_finite()).then_some(h)
}

/// Start point for every block. Variables outside the published initial
/// guess box (`E[T]`, `t_df`, `π`, `N_Ig`) are set from their defining
/// relations at the guessed flows; a relation that cannot be evaluated
/// falls back to a neutral value.
pub fn initial_point(market: &Market, layout: &DirectLayout, start: &StartPoint) -> DirectPoint {
    let net = &market.network;
    let p = &market.params;
    let m = net.zones;
    let t = &net.travel_time;
    let lambda_df = if p.flexible { start.lambda_df.clone() } else { Matrix::zeros(m, m) };
    let flow = start.lambda_r.add(&start.lambda_do);
    let w_idle: Vec<f64> = (0..m).map(|i| start.n_idle[i] / flow.row_sum(i).max(f64::MIN_POSITIVE)).collect();
    let pz = zone_transition_matrix(&start.lambda_r, &start.lambda_do).ok();
    let s = transit_times(&w_idle, t);
    let et = pz.as_ref().and_then(|pz| first_passage_times(pz, &s).ok()).unwrap_or_else(|| s.clone());
    let drop_succ: Vec<f64> = (0..m).map(|i| success_drop(net.dropoff_time[i], w_idle[i], &p.distribution)).collect();
    let t_df = flexible_delivery_time(&et, &drop_succ).map(|v| v.min(TIME_MAX));
    let mut w_dg = vec![f64::INFINITY; m];
    let mut n_bar = start.n_idle.clone();
    for &z in &layout.flex_zones {
        w_dg[z] = start.w_dg[z];
        n_bar[z] = start.n_bar[z];
    }
    let states = if layout.has_chain() { m * (p.capacity + 1) } else { 0 };
    let mut pi = vec![1.0 / states.max(1) as f64; states];
    let mut n_ig = vec![0.0; m];
    if layout.has_chain() {
        let tbar: Vec<f64> = (0..m).map(|i| net.matching[i] / n_bar[i].sqrt()).collect();
        let rates = success_rates(&w_idle, &net.dropoff_time, &tbar, &w_dg, &lambda_df, p.capacity, &p.distribution);
        if let Some(pc) = pz.as_ref().and_then(|pz| build_transitions(pz, &rates).ok()) {
            let hold = holding_times(&pc, &w_idle, &net.dropoff_time, &w_dg, &tbar, p.capacity);
            if let Ok((v, _)) = limiting_probabilities(&pc, &hold) {
                pi = v;
            }
            let sol = CtmcSolution { zones: m, capacity: p.capacity, transitions: pc, hold, pi: pi.clone(), transient: Vec::new() };
            n_ig = flexible_pickup_supply(&start.n_idle, &sol, &rates);
        }
        for &z in &layout.flex_zones {
            n_ig[z] = n_ig[z].max(MIN_EFFECTIVE_IDLE);
        }
    }
    DirectPoint {
        r_r: start.r_r.clone(),
        q: start.q,
        r_df: start.r_df.clone(),
        lambda_r: start.lambda_r.clone(),
        lambda_df,
        lambda_do: start.lambda_do.clone(),
        n_idle: start.n_idle.clone(),
        n_bar,
        w_dg,
        n_ig,
        et,
        t_df,
        pi,
    }
}

/// Elementary variables implied by a direct point: the flexible cost is
/// rebuilt from the fare, dispatch wait and delivery time.
pub fn elementary(market: &Market, layout: &DirectLayout, pt: &DirectPoint) -> ElementaryVars {
    let p = &market.params;
    let net = &market.network;
    let m = net.zones;
    let mut c_df = Matrix::filled(m, m, f64::INFINITY);
    for &(i, j) in &layout.flex_pairs {
        let w_df = net.matching[i] / pt.n_ig[i].sqrt();
        c_df[(i, j)] = p.alpha_d * w_df + p.disutility.eval(pt.t_df[(i, j)]) + pt.r_df[(i, j)];
    }
    ElementaryVars { r_r: pt.r_r.clone(), c_df, n_idle: pt.n_idle.clone(), n_bar: pt.n_bar.clone(), w_dg: pt.w_dg.clone() }
}

/// Gauss-Newton projection onto `h = 0`: minimum-norm corrections in
/// coordinates scaled by the typical magnitudes, clipped to the box and
/// halved until the violation drops. Returns the point, steps taken and
/// residual evaluations.
#[allow(clippy::too_many_arguments)]
pub fn project<H>(mut h_of: H, x: &[f64], lo: &[f64], hi: &[f64], typ: &[f64], fd_rel: f64, tol: f64, max_steps: usize) -> (Vec<f64>, usize, usize)
where
    H: FnMut(&[f64]) -> Option<Vec<f64>>,
{
    let n = x.len();
    let mut x = x.to_vec();
    let mut evals = 1;
    let Some(mut h) = h_of(&x) else { return (x, 0, evals) };
    let mut steps = 0;
    while steps < max_steps && max_abs(&h) > tol {
        steps += 1;
        let m = h.len();
        let mut jac = DMatrix::<f64>::zeros(m, n);
        for k in 0..n {
            let step = fd_rel * x[k].abs().max(typ[k]);
            let dir = if x[k] + step <= hi[k] { step } else { -step };
            let mut xp = x.clone();
            xp[k] += dir;
            evals += 1;
            if let Some(hp) = h_of(&xp) {
                for r in 0..m {
                    jac[(r, k)] = (hp[r] - h[r]) / dir * typ[k];
                }
            }
        }
        let mut jjt = &jac * jac.transpose();
        let ridge = 1e-12 * (0..m).map(|r| jjt[(r, r)]).sum::<f64>() / m as f64;
        for r in 0..m {
            jjt[(r, r)] += ridge.max(f64::MIN_POSITIVE);
        }
        let rhs = DVector::from_column_slice(&h);
        let Some(y) = jjt.clone().cholesky().map(|c| c.solve(&rhs)).or_else(|| jjt.lu().solve(&rhs)) else { break };
        let dz = jac.transpose() * y;
        let current = max_abs(&h);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let xn: Vec<f64> = (0..n).map(|k| (x[k] - alpha * typ[k] * dz[k]).clamp(lo[k], hi[k])).collect();
            evals += 1;
            if let Some(hn) = h_of(&xn) {
                if max_abs(&hn) < current {
                    x = xn;
                    h = hn;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (x, steps, evals)
}

/// Ride revenue if every potential passenger paid the highest fare; brings
/// the objective to the same order as the scaled residuals.
fn profit_scale(market: &Market, cfg: &SolverConfig) -> f64 {
    let p = &market.params;
    let t = &market.network.travel_time;
    let m = market.zones();
    let v: f64 = (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).map(|(i, j)| p.lambda_r0[(i, j)] * t[(i, j)]).sum();
    (v * cfg.r_bounds.1.abs()).max(1.0)
}

fn max_abs(h: &[f64]) -> f64 {
    h.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Solves the full problem from `start`. The reported point is the most
/// profitable round iterate whose residual meets `cfg.residual_tol`, or the
/// final iterate (marked not converged) when none does.
pub fn direct_solve(market: &Market, cfg: &SolverConfig, start: &StartPoint) -> Result<OptReport> {
    let t0 = Instant::now();
    let layout = DirectLayout::new(market);
    let (lo, hi, typ) = layout.bounds(market, cfg);
    let mut x0 = layout.pack(&initial_point(market, &layout, start));
    for k in 0..x0.len() {
        x0[k] = x0[k].clamp(lo[k], hi[k]);
    }
    let scale = profit_scale(market, cfg);
    let eval = |x: &[f64]| -> Option<(f64, Vec<f64>)> {
        let pt = layout.unpack(x);
        let h = direct_residuals(market, &layout, &pt)?;
        let f = direct_profit(market, &pt);
        f.is_finite().then_some((-f / scale, h))
    };
    if eval(&x0).is_none() {
        return Err(Error::NoFeasibleStart("direct start point cannot be evaluated".into()));
    }
    let inner = QnConfig { max_iter: cfg.approx_max_iter, grad_tol: cfg.grad_tol, f_tol: cfg.f_tol, fd_rel: cfg.fd_step, typical_scaling: false };
    let mut restorations = (0usize, 0usize);
    let mut restore = |x: &[f64], steps: usize| {
        let (x, it, ev) = project(|x: &[f64]| eval(x).map(|e| e.1), x, &lo, &hi, &typ, cfg.fd_step, 0.1 * cfg.residual_tol, steps);
        restorations.0 += it;
        restorations.1 += ev;
        x
    };
    let x0 = restore(&x0, START_PROJECTION_STEPS);
    let al = AlConfig { mu0: cfg.mu0, growth: cfg.mu_growth, max_outer: cfg.max_outer, tol: cfg.residual_tol, inner };
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    let consider = |x: &[f64], best: &mut Option<(f64, f64, Vec<f64>)>| {
        if let Some((f, h)) = eval(x) {
            let viol = max_abs(&h);
            if viol <= cfg.residual_tol && best.as_ref().map_or(true, |b| -f * scale > b.0) {
                *best = Some((-f * scale, viol, x.to_vec()));
            }
        }
    };
    consider(&x0, &mut best);
    let mut trajectory = Vec::new();
    let res = solve(eval, &x0, &lo, &hi, &typ, &al, |x, _| {
        consider(x, &mut best);
        let xr = restore(x, ROUND_PROJECTION_STEPS);
        consider(&xr, &mut best);
        trajectory.push(best.as_ref().map_or(f64::NEG_INFINITY, |b| b.0));
        Next::Continue
    });
    let (profit, residual, x) = match best {
        Some(b) => b,
        None => {
            let (f, h) = eval(&res.x).ok_or_else(|| Error::NoConvergence {
                what: "direct solve".into(),
                residual: f64::INFINITY,
                iterations: res.iterations,
            })?;
            (-f * scale, max_abs(&h), res.x.clone())
        }
    };
    let pt = layout.unpack(&x);
    let vars = elementary(market, &layout, &pt);
    let state = evaluate(&vars, market).ok().map(Box::new);
    Ok(OptReport {
        method: "direct".into(),
        vars,
        profit,
        approx_profit: None,
        refined_profit: None,
        approx_iterations: 0,
        refine_iterations: restorations.0 + res.iterations,
        evaluations: restorations.1 + res.evaluations,
        outer_rounds: res.rounds,
        trajectory,
        residual,
        converged: residual <= cfg.residual_tol,
        diverged: false,
        wall_time: t0.elapsed().as_secs_f64(),
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::tests::symmetric_market;
    use crate::equilibrium::{evaluate_exact, ElementaryVars};

    /// Direct point built from an exact equilibrium.
    fn from_state(market: &Market, layout: &DirectLayout, vars: &ElementaryVars) -> DirectPoint {
        let s = evaluate_exact(market, &vars.r_r, &vars.c_df, &vars.n_idle).unwrap();
        let d = &s.demand;
        let mut n_ig = s.n_ig.clone();
        for z in 0..layout.zones {
            if !layout.flex_zones.contains(&z) {
                n_ig[z] = 0.0;
            }
        }
        DirectPoint {
            r_r: d.r_r.clone(),
            q: s.q,
            r_df: s.r_df.clone(),
            lambda_r: d.lambda_r.clone(),
            lambda_df: d.lambda_df.clone(),
            lambda_do: d.lambda_do.clone(),
            n_idle: d.n_idle.clone(),
            n_bar: s.n_bar.clone(),
            w_dg: s.w_dg.clone(),
            n_ig,
            et: d.zone_chain.et.clone(),
            t_df: d.t_df.clone(),
            pi: s.ctmc.pi.clone(),
        }
    }

    fn vars(m: usize) -> ElementaryVars {
        ElementaryVars {
            r_r: vec![1.6; m],
            c_df: Matrix::filled(m, m, 14.0),
            n_idle: vec![220.0; m],
            n_bar: vec![],
            w_dg: vec![],
        }
    }

    #[test]
    fn pack_round_trip() {
        let mk = symmetric_market(2, 2.0);
        let l = DirectLayout::new(&mk);
        let pt = from_state(&mk, &l, &vars(2));
        assert_eq!(l.unpack(&l.pack(&pt)), pt);
        assert_eq!(l.len(), 2 + 1 + 4 + 4 + 4 + 4 + 2 + 2 + 2 + 2 + 4 + 4 + 8);
    }

    #[test]
    fn exact_equilibrium_has_zero_residual_and_same_profit() {
        let mk = symmetric_market(2, 2.0);
        let l = DirectLayout::new(&mk);
        let v = vars(2);
        let pt = from_state(&mk, &l, &v);
        let h = direct_residuals(&mk, &l, &pt).unwrap();
        assert!(max_abs(&h) < 1e-7, "{}", max_abs(&h));
        let s = evaluate_exact(&mk, &v.r_r, &v.c_df, &v.n_idle).unwrap();
        assert!((direct_profit(&mk, &pt) - s.profit).abs() < 1e-8 * s.profit.abs());
        let e = elementary(&mk, &l, &pt);
        for i in 0..2 {
            for j in 0..2 {
                assert!((e.c_df[(i, j)] - 14.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ride_only_market_has_no_chain_block() {
        let mk = symmetric_market(2, 0.0);
        let l = DirectLayout::new(&mk);
        assert!(l.flex_pairs.is_empty());
        assert_eq!(l.len(), 2 + 1 + 4 + 2 + 4);
    }
}
