//! Scenario files, demand synthesis, demand-level sweeps, benchmark market
//! structures and report emission.

pub mod benchmark;
pub mod report;
pub mod svg;
pub mod sweep;
pub mod synth;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{Market, MarketParams, Network};
use crate::matrix::Matrix;
use crate::optimizer::SolverConfig;

pub use synth::{reshuffle_opposite, sf11, synthesize_gravity, toy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandMode {
    /// `params.lambda_d0` is the spatial pattern.
    Explicit,
    /// Gravity model on population and registered businesses.
    Gravity,
    /// Rank-reversed ride demand.
    Opposite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    Integrated,
    Separate,
    OndemandOnly,
    RideOnly,
}

impl Benchmark {
    pub const ALL: [Benchmark; 4] = [Benchmark::Integrated, Benchmark::Separate, Benchmark::OndemandOnly, Benchmark::RideOnly];

    pub fn name(&self) -> &'static str {
        match self {
            Benchmark::Integrated => "integrated",
            Benchmark::Separate => "separate",
            Benchmark::OndemandOnly => "ondemand_only",
            Benchmark::RideOnly => "ride_only",
        }
    }
}

/// A scenario file. Potential parcel demand is always rebuilt from the
/// chosen pattern and scaled so its total is `level` times the total
/// potential ride demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub network: Network,
    pub params: MarketParams,
    pub demand_mode: DemandMode,
    #[serde(default)]
    pub population: Option<Vec<f64>>,
    #[serde(default)]
    pub businesses: Option<Vec<f64>>,
    /// Default demand level.
    pub ratio: f64,
    pub sweep: Vec<f64>,
    pub benchmark: Benchmark,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl ScenarioSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: ScenarioSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.params.validate(self.network.zones)?;
        self.solver.validate()?;
        if !(self.ratio >= 0.0) {
            return Err(Error::InvalidInput("ratio must be nonnegative".into()));
        }
        if self.sweep.iter().any(|v| !(*v >= 0.0)) || self.sweep.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidInput("sweep levels must be nonnegative and sorted ascending".into()));
        }
        if self.demand_mode == DemandMode::Gravity {
            let m = self.network.zones;
            let ok = |v: &Option<Vec<f64>>| v.as_ref().is_some_and(|v| v.len() == m && v.iter().all(|x| *x > 0.0));
            if !ok(&self.population) || !ok(&self.businesses) {
                return Err(Error::InvalidInput("gravity mode needs positive population and businesses per zone".into()));
            }
        }
        Ok(())
    }

    /// Potential parcel demand at a demand level.
    pub fn parcel_demand(&self, level: f64) -> Result<Matrix> {
        let lr0 = &self.params.lambda_r0;
        match self.demand_mode {
            DemandMode::Gravity => synthesize_gravity(
                self.population.as_deref().unwrap_or_default(),
                self.businesses.as_deref().unwrap_or_default(),
                &self.network.travel_time,
                level,
                lr0,
            ),
            DemandMode::Opposite => Ok(reshuffle_opposite(lr0, level)),
            DemandMode::Explicit => {
                let total = self.params.lambda_d0.sum();
                if level == 0.0 {
                    return Ok(Matrix::zeros(lr0.rows(), lr0.cols()));
                }
                if !(total > 0.0) {
                    return Err(Error::InvalidInput("explicit parcel demand pattern is empty".into()));
                }
                Ok(self.params.lambda_d0.scale(level * lr0.sum() / total))
            }
        }
    }

    /// Integrated market at a demand level.
    pub fn market_at(&self, level: f64) -> Result<Market> {
        let mut params = self.params.clone();
        params.lambda_d0 = self.parcel_demand(level)?;
        Market::new(self.network.clone(), params)
    }

    /// Market at the scenario's default level.
    pub fn market(&self) -> Result<Market> {
        self.market_at(self.ratio)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_round_trips_through_json() {
        let s = sf11();
        s.validate().unwrap();
        let back: ScenarioSpec = serde_json::from_str(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn level_scales_parcel_total() {
        let s = sf11();
        let m = s.market_at(0.4).unwrap();
        let ratio = m.params.lambda_d0.sum() / m.params.lambda_r0.sum();
        assert!((ratio - 0.4).abs() < 1e-12);
        assert_eq!(s.market_at(0.0).unwrap().params.lambda_d0.sum(), 0.0);
    }

    #[test]
    fn rejects_unsorted_sweep() {
        let mut s = sf11();
        s.sweep = vec![0.2, 0.1];
        assert!(s.validate().is_err());
    }
}
