//! Demand-level sweeps: one optimization per level of potential parcel demand.

use serde::{Deserialize, Serialize};

use super::ScenarioSpec;
use crate::equilibrium::{evaluate_exact, EquilibriumState};
use crate::error::{Error, Result};
use crate::market::Market;
use crate::optimizer::{algorithm1, OptReport, SolverConfig, StartPoint};

/// Per-step relative drop in the passenger rate still counted as nondecreasing.
pub const PASSENGER_TOL: f64 = 0.005;

/// Headline numbers of one solved market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: f64,
    /// $/min.
    pub profit: f64,
    pub drivers: f64,
    /// $/hr.
    pub wage: f64,
    pub passenger_rate: f64,
    pub customer_rate: f64,
    pub flexible_rate: f64,
    pub ondemand_rate: f64,
    pub avg_flexible_fare: f64,
    pub avg_ondemand_fare: f64,
    pub residual: f64,
    pub negative_flexible_fare: bool,
    pub idle: Vec<f64>,
    /// Flexible parcels attracted by each destination zone.
    pub flexible_by_zone: Vec<f64>,
    /// On-demand parcels attracted by each destination zone.
    pub ondemand_by_zone: Vec<f64>,
}

impl LevelSummary {
    pub fn new(level: f64, market: &Market, state: &EquilibriumState, residual: f64) -> Self {
        let d = &state.demand;
        let m = market.zones();
        LevelSummary {
            level,
            profit: state.profit,
            drivers: state.required_drivers,
            wage: state.q,
            passenger_rate: state.passenger_rate(),
            customer_rate: state.customer_rate(),
            flexible_rate: state.flexible_rate(),
            ondemand_rate: state.ondemand_delivery_rate(),
            avg_flexible_fare: state.avg_flexible_fare(),
            avg_ondemand_fare: state.avg_ondemand_fare(market),
            residual,
            negative_flexible_fare: state.has_negative_flexible_fare(),
            idle: d.n_idle.clone(),
            flexible_by_zone: (0..m).map(|j| d.lambda_df.col_sum(j)).collect(),
            ondemand_by_zone: (0..m).map(|j| d.lambda_do.col_sum(j)).collect(),
        }
    }
}

/// Runs the two-stage algorithm from the deterministic default start and
/// returns the report with its equilibrium state.
pub fn solve_market(market: &Market, cfg: &SolverConfig) -> Result<(OptReport, EquilibriumState)> {
    let report = algorithm1(market, cfg, &StartPoint::default_for(market))?;
    let state = match &report.state {
        Some(s) => (**s).clone(),
        None => evaluate_exact(market, &report.vars.r_r, &report.vars.c_df, &report.vars.n_idle)?,
    };
    Ok((report, state))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub scenario: String,
    pub rows: Vec<LevelSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trends {
    pub profit_nondecreasing: bool,
    pub drivers_nondecreasing: bool,
    /// Within [`PASSENGER_TOL`] per step.
    pub passengers_nondecreasing: bool,
}

impl SweepResult {
    pub fn trends(&self) -> Trends {
        let pairs = || self.rows.windows(2).map(|w| (&w[0], &w[1]));
        Trends {
            profit_nondecreasing: pairs().all(|(a, b)| b.profit >= a.profit),
            drivers_nondecreasing: pairs().all(|(a, b)| b.drivers >= a.drivers),
            passengers_nondecreasing: pairs().all(|(a, b)| b.passenger_rate >= a.passenger_rate * (1.0 - PASSENGER_TOL)),
        }
    }
}

/// Checks that levels are nonempty, nonnegative and ascending.
pub fn validate_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::InvalidInput("sweep has no levels".into()));
    }
    if levels.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || levels.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidInput("sweep levels must be nonnegative and sorted ascending".into()));
    }
    Ok(())
}

/// Solves the integrated market at every level. Levels are independent of
/// each other.
pub fn sweep(spec: &ScenarioSpec, levels: &[f64], cfg: &SolverConfig) -> Result<SweepResult> {
    validate_levels(levels)?;
    let rows = levels
        .iter()
        .map(|&level| {
            let market = spec.market_at(level)?;
            let (report, state) = solve_market(&market, cfg)?;
            Ok(LevelSummary::new(level, &market, &state, report.residual))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { scenario: spec.name.clone(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::toy;

    #[test]
    fn level_validation() {
        assert!(validate_levels(&[]).is_err());
        assert!(validate_levels(&[0.2, 0.1]).is_err());
        assert!(validate_levels(&[-0.1]).is_err());
        assert!(validate_levels(&[0.0, 0.0, 0.3]).is_ok());
    }

    #[test]
    fn toy_sweep_rows_and_trends() {
        let spec = toy();
        let res = sweep(&spec, &[0.0, 0.4], &spec.solver).unwrap();
        assert_eq!(res.rows.len(), 2);
        let (a, b) = (&res.rows[0], &res.rows[1]);
        assert_eq!(a.flexible_rate, 0.0);
        assert!(b.flexible_rate > 0.0 && b.profit > a.profit);
        assert!(res.trends().profit_nondecreasing);
        assert!(a.residual <= 1e-6 && b.residual <= 1e-6);
    }

    #[test]
    fn trend_flags() {
        let row = |profit: f64, drivers: f64, pax: f64| LevelSummary {
            level: 0.0,
            profit,
            drivers,
            wage: 0.0,
            passenger_rate: pax,
            customer_rate: 0.0,
            flexible_rate: 0.0,
            ondemand_rate: 0.0,
            avg_flexible_fare: 0.0,
            avg_ondemand_fare: 0.0,
            residual: 0.0,
            negative_flexible_fare: false,
            idle: vec![],
            flexible_by_zone: vec![],
            ondemand_by_zone: vec![],
        };
        let r = SweepResult { scenario: "x".into(), rows: vec![row(1.0, 5.0, 100.0), row(2.0, 4.0, 99.6)] };
        let t = r.trends();
        assert!(t.profit_nondecreasing && !t.drivers_nondecreasing && t.passengers_nondecreasing);
        let r = SweepResult { scenario: "x".into(), rows: vec![row(1.0, 5.0, 100.0), row(2.0, 6.0, 99.4)] };
        assert!(!r.trends().passengers_nondecreasing);
    }
}
