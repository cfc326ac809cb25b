//! Reconstruction of the full market equilibrium from the elementary
//! variables `(r, c_df, N_I, N̄, w_dg)`, with profit and constraint residuals.
//!
//! The pipeline is split in two. [`demand`] depends only on fares, flexible
//! costs and idle supply; [`complete`] adds the effective idle supply and
//! dispatch waits. The optimizer reuses the first stage when only the second
//! block of variables moves.

use serde::{Deserialize, Serialize};

use crate::ctmc::{
    effective_idle_rhs, flexible_pickup_supply, solve_chain, solve_idle_fixed_point, CtmcSolution,
    FixedPointConfig,
};
use crate::error::{Error, Result};
use crate::first_passage::{flexible_delivery_time, transit_times, zone_transition_matrix, ZoneChain};
use crate::market::{delivery_split, driver_supply, invert_wage, ride_cost, ride_demand, Market};
use crate::matching::{
    dest_shares, p_flex, pick_drop_by_count, success_drop, success_pick, success_rates, waiting_time_ondemand,
    SuccessRates,
};
use crate::matrix::Matrix;

/// Floor applied to the truncated effective idle supply.
pub const MIN_EFFECTIVE_IDLE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementaryVars {
    /// Ride fare per minute by origin zone ($/min).
    pub r_r: Vec<f64>,
    /// Generalized cost of flexible delivery by OD pair ($); `+∞` withdraws the pair.
    pub c_df: Matrix,
    pub n_idle: Vec<f64>,
    pub n_bar: Vec<f64>,
    pub w_dg: Vec<f64>,
}

/// Quantities determined by fares, flexible costs and idle supply alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demand {
    pub r_r: Vec<f64>,
    pub c_df: Matrix,
    pub n_idle: Vec<f64>,
    pub w_r: Vec<f64>,
    pub lambda_r: Matrix,
    pub lambda_df: Matrix,
    pub lambda_do: Matrix,
    /// On-demand outflow `Σ_j (λ_r + λ_do)_ij`.
    pub outflow: Vec<f64>,
    pub w_idle: Vec<f64>,
    pub zone_chain: ZoneChain,
    pub drop_succ: Vec<f64>,
    pub t_df: Matrix,
    /// Flexible parcels leaving each zone per minute.
    pub flex_out: Vec<f64>,
    /// Flexible parcels arriving to each zone per minute.
    pub flex_in: Vec<f64>,
    pub dest_share: Vec<f64>,
}

/// Constraint gaps of the reformulated problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `N̄ - RHS(N̄)` per zone (drivers).
    pub idle: Vec<f64>,
    /// `w_dg - p_pick N̄ / Σ_j λ_df` per zone (min); zero where the flexible
    /// channel is disabled.
    pub wait: Vec<f64>,
}

impl Residuals {
    pub fn max_abs(&self) -> f64 {
        self.idle.iter().chain(&self.wait).map(|v| v.abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumState {
    pub demand: Demand,
    pub n_bar: Vec<f64>,
    /// Dispatch waits actually used: `+∞` in zones without flexible outflow.
    pub w_dg: Vec<f64>,
    pub tbar_g: Vec<f64>,
    pub rates: SuccessRates,
    pub ctmc: CtmcSolution,
    pub n_ig: Vec<f64>,
    pub w_df: Vec<f64>,
    /// Recovered flexible fares ($/order); zero where no flexible demand exists.
    pub r_df: Matrix,
    pub required_drivers: f64,
    /// Wage ($/hr).
    pub q: f64,
    pub ride_revenue: f64,
    pub flex_revenue: f64,
    pub labor_cost: f64,
    /// Platform profit ($/min).
    pub profit: f64,
    pub residuals: Residuals,
}

impl EquilibriumState {
    pub fn passenger_rate(&self) -> f64 {
        self.demand.lambda_r.sum()
    }

    pub fn flexible_rate(&self) -> f64 {
        self.demand.lambda_df.sum()
    }

    pub fn ondemand_delivery_rate(&self) -> f64 {
        self.demand.lambda_do.sum()
    }

    /// Parcel customers served per minute, both delivery modes.
    pub fn customer_rate(&self) -> f64 {
        self.flexible_rate() + self.ondemand_delivery_rate()
    }

    /// Demand-weighted mean flexible fare ($/order).
    pub fn avg_flexible_fare(&self) -> f64 {
        let total = self.flexible_rate();
        if total > 0.0 {
            self.flex_revenue / total
        } else {
            f64::NAN
        }
    }

    /// Demand-weighted mean on-demand delivery fare ($/order).
    pub fn avg_ondemand_fare(&self, market: &Market) -> f64 {
        let d = &self.demand;
        let m = d.r_r.len();
        let total = self.ondemand_delivery_rate();
        if !(total > 0.0) {
            return f64::NAN;
        }
        let t = &market.network.travel_time;
        let mut rev = 0.0;
        for i in 0..m {
            for j in 0..m {
                rev += d.r_r[i] * t[(i, j)] * d.lambda_do[(i, j)];
            }
        }
        rev / total
    }

    /// Whether any OD pair with flexible demand has a negative recovered fare.
    pub fn has_negative_flexible_fare(&self) -> bool {
        self.r_df
            .as_slice()
            .iter()
            .zip(self.demand.lambda_df.as_slice())
            .any(|(r, l)| *l > 0.0 && *r < 0.0)
    }

    pub fn vars(&self) -> ElementaryVars {
        ElementaryVars {
            r_r: self.demand.r_r.clone(),
            c_df: self.demand.c_df.clone(),
            n_idle: self.demand.n_idle.clone(),
            n_bar: self.n_bar.clone(),
            w_dg: self.w_dg.clone(),
        }
    }
}

/// First stage of the pipeline.
pub fn demand(market: &Market, r_r: &[f64], c_df: &Matrix, n_idle: &[f64]) -> Result<Demand> {
    let net = &market.network;
    let p = &market.params;
    let m = net.zones;
    let t = &net.travel_time;
    let w_r = (0..m)
        .map(|i| waiting_time_ondemand(net.matching[i], n_idle[i], i))
        .collect::<Result<Vec<_>>>()?;
    let mut lambda_r = Matrix::zeros(m, m);
    let mut lambda_df = Matrix::zeros(m, m);
    let mut lambda_do = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let c = ride_cost(w_r[i], r_r[i], t[(i, j)], p.alpha_r);
            lambda_r[(i, j)] = ride_demand(p.lambda_r0[(i, j)], c, p.c_r0[(i, j)], p.eps);
            let c_do = p.alpha_d * w_r[i] + p.disutility.eval(t[(i, j)]) + r_r[i] * t[(i, j)];
            let c_f = if p.flexible { c_df[(i, j)] } else { f64::INFINITY };
            let (f, o) = delivery_split(p.lambda_d0[(i, j)], c_f, c_do, p.c_d0[(i, j)], p.eta);
            lambda_df[(i, j)] = f;
            lambda_do[(i, j)] = o;
        }
    }
    let flow = lambda_r.add(&lambda_do);
    let outflow: Vec<f64> = (0..m).map(|i| flow.row_sum(i)).collect();
    let mut w_idle = Vec::with_capacity(m);
    for i in 0..m {
        if !(outflow[i] > 0.0) {
            return Err(Error::DegenerateZone { zone: i });
        }
        w_idle.push(n_idle[i] / outflow[i]);
    }
    let pz = zone_transition_matrix(&lambda_r, &lambda_do)?;
    let zone_chain = ZoneChain::new(pz, transit_times(&w_idle, t))?;
    let drop_succ: Vec<f64> =
        (0..m).map(|i| success_drop(net.dropoff_time[i], w_idle[i], &p.distribution)).collect();
    let t_df = flexible_delivery_time(&zone_chain.et, &drop_succ);
    let flex_out = (0..m).map(|i| lambda_df.row_sum(i)).collect();
    let flex_in = (0..m).map(|j| lambda_df.col_sum(j)).collect();
    let dest_share = dest_shares(&lambda_df);
    Ok(Demand {
        r_r: r_r.to_vec(),
        c_df: c_df.clone(),
        n_idle: n_idle.to_vec(),
        w_r,
        lambda_r,
        lambda_df,
        lambda_do,
        outflow,
        w_idle,
        zone_chain,
        drop_succ,
        t_df,
        flex_out,
        flex_in,
        dest_share,
    })
}

fn pickup_travel(l: f64, n_bar: f64) -> f64 {
    if n_bar > 0.0 {
        l / n_bar.sqrt()
    } else {
        f64::INFINITY
    }
}

/// Dispatch wait in each zone consistent with the given effective idle supply.
pub fn pickup_waits(market: &Market, d: &Demand, n_bar: &[f64]) -> Vec<f64> {
    let dist = &market.params.distribution;
    (0..market.zones())
        .map(|i| {
            let tbar = pickup_travel(market.network.matching[i], n_bar[i]);
            crate::ctmc::pickup_wait(n_bar[i], d.flex_out[i], |w| success_pick(tbar, w, d.w_idle[i], dist).0)
        })
        .collect()
}

/// Effective idle supply with the full-vehicle correction dropped, floored
/// at [`MIN_EFFECTIVE_IDLE`].
pub fn truncated_idle(market: &Market, d: &Demand) -> Vec<f64> {
    (0..market.zones())
        .map(|i| (d.n_idle[i] - market.network.dropoff_time[i] * d.flex_in[i]).max(MIN_EFFECTIVE_IDLE))
        .collect()
}

fn chain_for(market: &Market, d: &Demand, n_bar: &[f64], w_dg: &[f64]) -> Result<(Vec<f64>, Vec<f64>, SuccessRates, CtmcSolution)> {
    let net = &market.network;
    let m = net.zones;
    let tbar: Vec<f64> = (0..m).map(|i| pickup_travel(net.matching[i], n_bar[i])).collect();
    let w_eff: Vec<f64> = (0..m).map(|i| if d.flex_out[i] > 0.0 { w_dg[i] } else { f64::INFINITY }).collect();
    let rates = success_rates(
        &d.w_idle,
        &net.dropoff_time,
        &tbar,
        &w_eff,
        &d.lambda_df,
        market.params.capacity,
        &market.params.distribution,
    );
    let sol = solve_chain(&d.zone_chain.p, &rates, &d.w_idle, &net.dropoff_time, &w_eff, &tbar)?;
    Ok((tbar, w_eff, rates, sol))
}

fn idle_rhs(market: &Market, d: &Demand, sol: &CtmcSolution) -> Vec<f64> {
    let ca = market.params.capacity;
    (0..market.zones())
        .map(|i| {
            effective_idle_rhs(
                d.n_idle[i],
                market.network.dropoff_time[i],
                d.flex_in[i],
                sol.conditional(i)[ca],
                d.dest_share[i],
                ca,
            )
        })
        .collect()
}

/// Fare revenue ($/min) as `(on-demand trips, flexible parcels)`.
pub fn revenue(market: &Market, r_r: &[f64], lambda_r: &Matrix, lambda_do: &Matrix, r_df: &Matrix, lambda_df: &Matrix) -> (f64, f64) {
    let t = &market.network.travel_time;
    let m = market.zones();
    let mut ride = 0.0;
    let mut flex = 0.0;
    for i in 0..m {
        for j in 0..m {
            ride += r_r[i] * t[(i, j)] * (lambda_r[(i, j)] + lambda_do[(i, j)]);
            if lambda_df[(i, j)] > 0.0 {
                flex += r_df[(i, j)] * lambda_df[(i, j)];
            }
        }
    }
    (ride, flex)
}

/// Drivers needed to serve the on-demand flows: in service, en route to
/// pick-up and idle.
pub fn required_drivers(market: &Market, lambda_r: &Matrix, lambda_do: &Matrix, w_r: &[f64], n_idle: &[f64]) -> f64 {
    let t = &market.network.travel_time;
    let m = market.zones();
    let mut required = 0.0;
    for i in 0..m {
        let mut out = 0.0;
        for j in 0..m {
            let on = lambda_r[(i, j)] + lambda_do[(i, j)];
            required += on * t[(i, j)];
            out += on;
        }
        required += w_r[i] * out + n_idle[i];
    }
    required
}

/// Second stage of the pipeline.
pub fn complete(market: &Market, d: &Demand, n_bar: &[f64], w_dg: &[f64]) -> Result<EquilibriumState> {
    let net = &market.network;
    let p = &market.params;
    let m = net.zones;
    let (tbar_g, w_eff, rates, ctmc) = chain_for(market, d, n_bar, w_dg)?;
    let n_ig = flexible_pickup_supply(&d.n_idle, &ctmc, &rates);
    let mut w_df = vec![f64::INFINITY; m];
    for i in 0..m {
        if n_ig[i] > 0.0 {
            w_df[i] = net.matching[i] / n_ig[i].sqrt();
        } else if d.flex_out[i] > 0.0 {
            return Err(Error::DegenerateSupply { zone: i, value: n_ig[i] });
        }
    }
    let mut r_df = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            if d.lambda_df[(i, j)] > 0.0 {
                r_df[(i, j)] = d.c_df[(i, j)] - p.alpha_d * w_df[i] - p.disutility.eval(d.t_df[(i, j)]);
            }
        }
    }
    let required = required_drivers(market, &d.lambda_r, &d.lambda_do, &d.w_r, &d.n_idle);
    let (ride_revenue, flex_revenue) = revenue(market, &d.r_r, &d.lambda_r, &d.lambda_do, &r_df, &d.lambda_df);
    let q = invert_wage(required, p.driver_pool, p.sigma, p.outside_wage)?;
    let labor_cost = if required > 0.0 { required * q / 60.0 } else { 0.0 };
    let profit = ride_revenue + flex_revenue - labor_cost;

    let rhs = idle_rhs(market, d, &ctmc);
    let idle = (0..m).map(|i| n_bar[i] - rhs[i]).collect();
    let wait = (0..m)
        .map(|i| {
            if d.flex_out[i] > 0.0 {
                let pp = success_pick(tbar_g[i], w_eff[i], d.w_idle[i], &p.distribution).0;
                w_eff[i] - pp * n_bar[i] / d.flex_out[i]
            } else {
                0.0
            }
        })
        .collect();
    Ok(EquilibriumState {
        demand: d.clone(),
        n_bar: n_bar.to_vec(),
        w_dg: w_eff,
        tbar_g,
        rates,
        ctmc,
        n_ig,
        w_df,
        r_df,
        required_drivers: required,
        q,
        ride_revenue,
        flex_revenue,
        labor_cost,
        profit,
        residuals: Residuals { idle, wait },
    })
}

/// Full pipeline from the elementary variables.
pub fn evaluate(vars: &ElementaryVars, market: &Market) -> Result<EquilibriumState> {
    let d = demand(market, &vars.r_r, &vars.c_df, &vars.n_idle)?;
    complete(market, &d, &vars.n_bar, &vars.w_dg)
}

/// Per-zone existence margins of the effective idle supply fixed point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Existence {
    pub margin: Vec<f64>,
    pub holds: Vec<bool>,
}

impl Existence {
    pub fn all(&self) -> bool {
        self.holds.iter().all(|h| *h)
    }
}

/// Existence margins computed from the chain in the limit of vanishing
/// effective idle supply, where pick-ups never succeed.
pub fn existence(market: &Market, d: &Demand) -> Result<Existence> {
    let net = &market.network;
    let p = &market.params;
    let m = net.zones;
    let ca = p.capacity;
    let mut rates = success_rates(
        &d.w_idle,
        &net.dropoff_time,
        &vec![f64::INFINITY; m],
        &vec![f64::INFINITY; m],
        &d.lambda_df,
        ca,
        &p.distribution,
    );
    for i in 0..m {
        let (pick, drop) = pick_drop_by_count(0.0, d.drop_succ[i], d.dest_share[i], ca);
        rates.pick[i] = pick;
        rates.drop[i] = drop;
    }
    let inf = vec![f64::INFINITY; m];
    let sol = solve_chain(&d.zone_chain.p, &rates, &d.w_idle, &net.dropoff_time, &inf, &inf)?;
    let margin: Vec<f64> = (0..m)
        .map(|i| {
            let c = sol.conditional(i)[ca];
            d.n_idle[i] * (1.0 - c * (1.0 - p_flex(d.dest_share[i], ca))) - net.dropoff_time[i] * d.flex_in[i]
        })
        .collect();
    let holds = margin.iter().map(|v| *v >= 0.0).collect();
    Ok(Existence { margin, holds })
}

/// Existence check on an evaluated state.
pub fn check_existence(market: &Market, state: &EquilibriumState) -> Result<Existence> {
    existence(market, &state.demand)
}

/// Exact solution of the inner equations for `(N̄, w_dg)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    pub n_bar: Vec<f64>,
    pub w_dg: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Solves the effective idle supply fixed point with dispatch waits
/// re-derived by bisection at every iterate.
pub fn solve_inner(market: &Market, d: &Demand, start: Option<&[f64]>, cfg: FixedPointConfig) -> Result<InnerSolution> {
    let ex = existence(market, d)?;
    if let Some(zone) = ex.holds.iter().position(|h| !h) {
        return Err(Error::InfeasibleRegion { zone, margin: ex.margin[zone] });
    }
    let rhs = |x: &[f64]| -> Result<Vec<f64>> {
        let w = pickup_waits(market, d, x);
        let (_, _, _, sol) = chain_for(market, d, x, &w)?;
        Ok(idle_rhs(market, d, &sol))
    };
    let start = start.map(|s| s.to_vec()).unwrap_or_else(|| d.n_idle.clone());
    let fp = solve_idle_fixed_point(rhs, &d.n_idle, &start, cfg)?;
    let w_dg = pickup_waits(market, d, &fp.value);
    Ok(InnerSolution { n_bar: fp.value, w_dg, residual: fp.residual, iterations: fp.iterations })
}

/// Evaluates at `(r, c_df, N_I)` with the inner equations solved exactly.
pub fn evaluate_exact(market: &Market, r_r: &[f64], c_df: &Matrix, n_idle: &[f64]) -> Result<EquilibriumState> {
    let d = demand(market, r_r, c_df, n_idle)?;
    let inner = solve_inner(market, &d, None, FixedPointConfig::default())?;
    complete(market, &d, &inner.n_bar, &inner.w_dg)
}

/// `Σ (λ_r + λ_do)(t + w_r + w_I) - N0 F(q)`.
pub fn conservation_check(market: &Market, state: &EquilibriumState) -> f64 {
    let d = &state.demand;
    let p = &market.params;
    let t = &market.network.travel_time;
    let m = market.zones();
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            total += (d.lambda_r[(i, j)] + d.lambda_do[(i, j)]) * (t[(i, j)] + d.w_r[i] + d.w_idle[i]);
        }
    }
    total - driver_supply(state.q, p.outside_wage, p.sigma, p.driver_pool)
}
