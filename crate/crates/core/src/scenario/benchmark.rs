//! Benchmark market structures: separately operated ride and delivery
//! platforms, an integrated platform without flexible delivery, and a
//! ride-only platform.

use serde::{Deserialize, Serialize};

use super::sweep::{solve_market, LevelSummary};
use super::ScenarioSpec;
use crate::equilibrium::{evaluate_exact, ElementaryVars};
use crate::error::Result;
use crate::market::Market;
use crate::matrix::Matrix;
use crate::optimizer::{algorithm1, SolverConfig, StartPoint};

/// Wage change ($/hr) below which best responses have settled.
pub const BR_TOL: f64 = 1e-4;
pub const BR_MAX_ROUNDS: usize = 50;

/// One platform of the separate case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlatformOutcome {
    pub profit: f64,
    pub drivers: f64,
    /// $/hr; `-∞` for a platform that does not operate.
    pub wage: f64,
    pub passenger_rate: f64,
    pub customer_rate: f64,
}

impl PlatformOutcome {
    const ABSENT: PlatformOutcome =
        PlatformOutcome { profit: 0.0, drivers: 0.0, wage: f64::NEG_INFINITY, passenger_rate: 0.0, customer_rate: 0.0 };

    fn average(a: &Self, b: &Self) -> Self {
        let mid = |x: f64, y: f64| if x == y { x } else { 0.5 * (x + y) };
        PlatformOutcome {
            profit: mid(a.profit, b.profit),
            drivers: mid(a.drivers, b.drivers),
            wage: mid(a.wage, b.wage),
            passenger_rate: mid(a.passenger_rate, b.passenger_rate),
            customer_rate: mid(a.customer_rate, b.customer_rate),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparateResult {
    pub level: f64,
    pub ride: PlatformOutcome,
    pub delivery: PlatformOutcome,
    pub rounds: usize,
    pub converged: bool,
    /// Best responses cycled or hit the round cap; the result averages the
    /// last two iterates.
    pub warning: bool,
}

impl SeparateResult {
    pub fn profit(&self) -> f64 {
        self.ride.profit + self.delivery.profit
    }

    pub fn drivers(&self) -> f64 {
        self.ride.drivers + self.delivery.drivers
    }

    pub fn passenger_rate(&self) -> f64 {
        self.ride.passenger_rate + self.delivery.passenger_rate
    }

    pub fn customer_rate(&self) -> f64 {
        self.ride.customer_rate + self.delivery.customer_rate
    }
}

/// Outside wage that turns the binary driver logit into the three-way logit
/// over (own platform, competitor paying `competitor`, outside option).
pub fn effective_outside_wage(outside: f64, competitor: f64, sigma: f64) -> f64 {
    if competitor == f64::NEG_INFINITY {
        return outside;
    }
    let (a, b) = (sigma * outside, sigma * competitor);
    let hi = a.max(b);
    (hi + ((a - hi).exp() + (b - hi).exp()).ln()) / sigma
}

/// Integrated market with the flexible channel withdrawn.
pub fn ondemand_only_market(spec: &ScenarioSpec, level: f64) -> Result<Market> {
    let mut market = spec.market_at(level)?;
    market.params.flexible = false;
    market.validate()?;
    Ok(market)
}

pub fn ride_only_market(spec: &ScenarioSpec) -> Result<Market> {
    spec.market_at(0.0)
}

/// Delivery platform of the separate case: on-demand delivery only, no
/// passengers. `None` when there is no parcel demand.
pub fn delivery_market(spec: &ScenarioSpec, level: f64) -> Result<Option<Market>> {
    let mut market = ondemand_only_market(spec, level)?;
    if !(market.params.lambda_d0.sum() > 0.0) {
        return Ok(None);
    }
    let m = market.zones();
    market.params.lambda_r0 = Matrix::zeros(m, m);
    Ok(Some(market))
}

fn best_response(
    base: &Market,
    competitor: f64,
    warm: Option<&ElementaryVars>,
    cfg: &SolverConfig,
) -> Result<(PlatformOutcome, ElementaryVars)> {
    let mut market = base.clone();
    let p = &mut market.params;
    p.outside_wage = effective_outside_wage(p.outside_wage, competitor, p.sigma);
    let start = warm.map_or_else(|| StartPoint::default_for(&market), |v| StartPoint::from_vars(&market, v));
    let report = algorithm1(&market, cfg, &start)?;
    let state = match report.state {
        Some(s) => *s,
        None => evaluate_exact(&market, &report.vars.r_r, &report.vars.c_df, &report.vars.n_idle)?,
    };
    let out = PlatformOutcome {
        profit: state.profit,
        drivers: state.required_drivers,
        wage: state.q,
        passenger_rate: state.passenger_rate(),
        customer_rate: state.customer_rate(),
    };
    Ok((out, report.vars))
}

fn wage_gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs()
    }
}

/// Separately operated ride and delivery platforms competing for drivers,
/// solved by simultaneous best responses from the monopoly wages.
pub fn benchmark_separate(spec: &ScenarioSpec, level: f64, cfg: &SolverConfig) -> Result<SeparateResult> {
    let ride_mk = ride_only_market(spec)?;
    let del_mk = delivery_market(spec, level)?;
    let mut cur = (PlatformOutcome::ABSENT, PlatformOutcome::ABSENT);
    let mut prev = cur;
    let mut warm: (Option<ElementaryVars>, Option<ElementaryVars>) = (None, None);
    let mut history: Vec<(f64, f64)> = Vec::new();
    for round in 1..=BR_MAX_ROUNDS {
        let (ride, rv) = best_response(&ride_mk, cur.1.wage, warm.0.as_ref(), cfg)?;
        let delivery = match &del_mk {
            Some(mk) => {
                let (d, dv) = best_response(mk, cur.0.wage, warm.1.as_ref(), cfg)?;
                warm.1 = Some(dv);
                d
            }
            None => PlatformOutcome::ABSENT,
        };
        warm.0 = Some(rv);
        prev = cur;
        cur = (ride, delivery);
        let wages = (ride.wage, delivery.wage);
        let step = match history.last() {
            Some(&(r, d)) => wage_gap(wages.0, r).max(wage_gap(wages.1, d)),
            None => f64::INFINITY,
        };
        if step <= BR_TOL {
            return Ok(SeparateResult { level, ride, delivery, rounds: round, converged: true, warning: false });
        }
        let cycled = history.len() >= 2 && {
            let (r, d) = history[history.len() - 2];
            wage_gap(wages.0, r).max(wage_gap(wages.1, d)) <= BR_TOL
        };
        history.push(wages);
        if cycled {
            break;
        }
    }
    Ok(SeparateResult {
        level,
        ride: PlatformOutcome::average(&cur.0, &prev.0),
        delivery: PlatformOutcome::average(&cur.1, &prev.1),
        rounds: history.len(),
        converged: false,
        warning: true,
    })
}

pub fn benchmark_ondemand_only(spec: &ScenarioSpec, level: f64, cfg: &SolverConfig) -> Result<LevelSummary> {
    let market = ondemand_only_market(spec, level)?;
    let (report, state) = solve_market(&market, cfg)?;
    Ok(LevelSummary::new(level, &market, &state, report.residual))
}

pub fn benchmark_ride_only(spec: &ScenarioSpec, cfg: &SolverConfig) -> Result<LevelSummary> {
    let market = ride_only_market(spec)?;
    let (report, state) = solve_market(&market, cfg)?;
    Ok(LevelSummary::new(0.0, &market, &state, report.residual))
}

pub fn integrated(spec: &ScenarioSpec, level: f64, cfg: &SolverConfig) -> Result<LevelSummary> {
    let market = spec.market_at(level)?;
    let (report, state) = solve_market(&market, cfg)?;
    Ok(LevelSummary::new(level, &market, &state, report.residual))
}

/// All four market structures at one demand level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub level: f64,
    pub integrated: LevelSummary,
    pub separate: SeparateResult,
    pub ondemand_only: LevelSummary,
    pub ride_only: LevelSummary,
}

pub fn run_benchmarks(spec: &ScenarioSpec, level: f64, cfg: &SolverConfig) -> Result<BenchmarkReport> {
    Ok(BenchmarkReport {
        level,
        integrated: integrated(spec, level, cfg)?,
        separate: benchmark_separate(spec, level, cfg)?,
        ondemand_only: benchmark_ondemand_only(spec, level, cfg)?,
        ride_only: benchmark_ride_only(spec, cfg)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::driver_supply;
    use crate::scenario::toy;

    #[test]
    fn effective_wage_reproduces_three_way_logit() {
        let (q0, qc, q, sigma, pool) = (29.0, 31.0, 30.0, 0.18, 2000.0);
        let eff = effective_outside_wage(q0, qc, sigma);
        let direct = pool * (sigma * q).exp() / ((sigma * q).exp() + (sigma * qc).exp() + (sigma * q0).exp());
        assert!((driver_supply(q, eff, sigma, pool) - direct).abs() < 1e-9);
        assert_eq!(effective_outside_wage(q0, f64::NEG_INFINITY, sigma), q0);
        assert!(effective_outside_wage(q0, 1e4, sigma).is_finite());
    }

    #[test]
    fn no_parcels_leaves_ride_platform_alone() {
        let spec = toy();
        let cfg = spec.solver.clone();
        let sep = benchmark_separate(&spec, 0.0, &cfg).unwrap();
        assert!(sep.converged && !sep.warning);
        assert_eq!(sep.delivery, PlatformOutcome::ABSENT);
        let ride = benchmark_ride_only(&spec, &cfg).unwrap();
        assert_eq!(sep.ride.profit, ride.profit);
        let od = benchmark_ondemand_only(&spec, 0.0, &cfg).unwrap();
        assert_eq!(od.profit, ride.profit);
    }

    #[test]
    fn toy_orderings() {
        let spec = toy();
        let r = run_benchmarks(&spec, 0.4, &spec.solver).unwrap();
        assert!(r.separate.converged);
        assert!(r.separate.delivery.drivers > 0.0);
        assert!(r.integrated.profit >= r.ondemand_only.profit * 0.99);
        assert!(r.ondemand_only.flexible_rate == 0.0);
        assert!(r.integrated.profit > r.ride_only.profit);
    }
}
