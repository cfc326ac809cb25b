//! Exogenous market data plus the logit demand, supply and generalized-cost
//! functions for passengers, parcel customers and drivers.
//!
//! Units: minutes for time, dollars for money, orders per minute for rates.
//! Driver wages are in $/hr; conversion to $/min happens only where labor
//! cost enters the profit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Zone network: travel times and zone geometry constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    /// Number of zones `M`.
    pub zones: usize,
    /// Mean travel time between zones (min), diagonal included.
    pub travel_time: Matrix,
    /// Matching constant `L_i` of the square-root law (min·drivers^½).
    pub matching: Vec<f64>,
    /// Mean drop-off time `t_i^g` of a flexible parcel (min).
    pub dropoff_time: Vec<f64>,
}

impl Network {
    pub fn validate(&self) -> Result<()> {
        let m = self.zones;
        if m == 0 {
            return Err(Error::InvalidInput("network must have at least one zone".into()));
        }
        if self.travel_time.rows() != m || self.travel_time.cols() != m {
            return Err(Error::InvalidInput(format!("travel_time must be {m}x{m}")));
        }
        if self.matching.len() != m || self.dropoff_time.len() != m {
            return Err(Error::InvalidInput("per-zone vectors must have one entry per zone".into()));
        }
        if self.travel_time.as_slice().iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidInput("travel times must be positive and finite".into()));
        }
        if self.matching.iter().chain(&self.dropoff_time).any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput("matching constants and drop-off times must be positive".into()));
        }
        Ok(())
    }

    /// Minimum idle supply per zone that keeps the on-demand wait at `w_max`.
    pub fn min_idle(&self, w_max: f64) -> Vec<f64> {
        self.matching.iter().map(|l| (l / w_max).powi(2)).collect()
    }
}

/// Delivery-time disutility `p_d(t) = a (tanh(t/s - b) + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisutilityParams {
    pub amplitude: f64,
    pub scale: f64,
    pub shift: f64,
}

impl Default for DisutilityParams {
    fn default() -> Self {
        Self { amplitude: 25.0, scale: 200.0, shift: 5.0 }
    }
}

impl DisutilityParams {
    pub fn eval(&self, t: f64) -> f64 {
        if t == f64::INFINITY {
            return 2.0 * self.amplitude;
        }
        self.amplitude * ((t / self.scale - self.shift).tanh() + 1.0)
    }
}

/// Distribution family of the waiting and handling times that race against
/// an idle driver's next on-demand match.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DistributionSpec {
    Exponential,
    LogNormal {
        /// Log-scale std dev of the idle cruising time `W^I`.
        sigma_idle: f64,
        /// Log-scale std dev of the drop-off time `T^g`.
        sigma_dropoff: f64,
        /// Log-scale std dev of the flexible dispatch wait `W^dg`.
        sigma_dispatch: f64,
        /// Log-scale std dev of the pick-up travel time `T̄^g`.
        sigma_pickup: f64,
        /// Correlation of `log W^I` and `log W^dg`.
        rho_dispatch: f64,
        /// Correlation of `log W^I` and `log T̄^g`.
        rho_pickup: f64,
    },
}

impl Default for DistributionSpec {
    fn default() -> Self {
        DistributionSpec::LogNormal {
            sigma_idle: 0.5,
            sigma_dropoff: 0.5,
            sigma_dispatch: 0.5,
            sigma_pickup: 0.5,
            rho_dispatch: 0.0,
            rho_pickup: 0.0,
        }
    }
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<()> {
        if let DistributionSpec::LogNormal {
            sigma_idle,
            sigma_dropoff,
            sigma_dispatch,
            sigma_pickup,
            rho_dispatch,
            rho_pickup,
        } = *self
        {
            if [sigma_idle, sigma_dropoff, sigma_dispatch, sigma_pickup].iter().any(|s| !(*s > 0.0)) {
                return Err(Error::InvalidInput("log-normal std devs must be positive".into()));
            }
            if rho_dispatch.abs() > 1.0 || rho_pickup.abs() > 1.0 {
                return Err(Error::InvalidInput("correlations must lie in [-1, 1]".into()));
            }
            let v1 = sigma_idle.powi(2) + sigma_dispatch.powi(2) - 2.0 * rho_dispatch * sigma_idle * sigma_dispatch;
            let v2 = sigma_idle.powi(2) + sigma_pickup.powi(2) - 2.0 * rho_pickup * sigma_idle * sigma_pickup;
            if !(v1 > 0.0 && v2 > 0.0) {
                return Err(Error::InvalidInput("log-normal race variances must be positive".into()));
            }
        }
        Ok(())
    }
}

/// All exogenous market parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    /// Potential passenger arrival rates (orders/min).
    pub lambda_r0: Matrix,
    /// Potential parcel arrival rates, all delivery modes (orders/min).
    pub lambda_d0: Matrix,
    /// Driver pool `N0`.
    pub driver_pool: f64,
    /// Passenger logit sensitivity (1/$).
    pub eps: f64,
    /// Parcel customer logit sensitivity (1/$).
    pub eta: f64,
    /// Driver logit sensitivity (1/$ per hr).
    pub sigma: f64,
    /// Outside-option cost of passengers ($).
    pub c_r0: Matrix,
    /// Outside-option cost of parcel customers ($).
    pub c_d0: Matrix,
    /// Outside wage ($/hr).
    pub outside_wage: f64,
    /// Passenger value of time ($/min).
    pub alpha_r: f64,
    /// Parcel customer value of pick-up waiting time ($/min).
    pub alpha_d: f64,
    /// Cap on the on-demand waiting time (min).
    pub w_max: f64,
    /// Flexible parcels a vehicle can carry.
    pub capacity: usize,
    pub distribution: DistributionSpec,
    pub disutility: DisutilityParams,
    /// When false the flexible channel is withdrawn and parcel customers
    /// choose only between on-demand delivery and the outside option.
    #[serde(default = "default_true")]
    pub flexible: bool,
}

fn default_true() -> bool {
    true
}

impl MarketParams {
    pub fn validate(&self, zones: usize) -> Result<()> {
        for (name, m) in [
            ("lambda_r0", &self.lambda_r0),
            ("lambda_d0", &self.lambda_d0),
            ("c_r0", &self.c_r0),
            ("c_d0", &self.c_d0),
        ] {
            if m.rows() != zones || m.cols() != zones {
                return Err(Error::InvalidInput(format!("{name} must be {zones}x{zones}")));
            }
        }
        if self.lambda_r0.as_slice().iter().chain(self.lambda_d0.as_slice()).any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidInput("potential demand rates must be nonnegative".into()));
        }
        if !(self.eps > 0.0 && self.eta > 0.0 && self.sigma > 0.0) {
            return Err(Error::InvalidInput("logit sensitivities must be positive".into()));
        }
        if !(self.driver_pool > 0.0) {
            return Err(Error::InvalidInput("driver pool must be positive".into()));
        }
        if !(self.alpha_d < self.alpha_r) {
            return Err(Error::InvalidInput("alpha_d must be below alpha_r".into()));
        }
        if !(self.w_max > 0.0) {
            return Err(Error::InvalidInput("w_max must be positive".into()));
        }
        if self.capacity < 1 {
            return Err(Error::InvalidInput("vehicle parcel capacity must be at least 1".into()));
        }
        self.distribution.validate()
    }
}

/// A network together with its market parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Market {
    pub network: Network,
    pub params: MarketParams,
}

impl Market {
    pub fn new(network: Network, params: MarketParams) -> Result<Self> {
        let m = Market { network, params };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.params.validate(self.network.zones)
    }

    pub fn zones(&self) -> usize {
        self.network.zones
    }

    /// Lower bound on idle supply keeping the on-demand wait below `w_max`.
    pub fn min_idle(&self) -> Vec<f64> {
        self.network.min_idle(self.params.w_max)
    }
}

/// Generalized cost of a ride: `α_r w + r t`.
pub fn ride_cost(wait: f64, fare_rate: f64, time: f64, alpha_r: f64) -> f64 {
    alpha_r * wait + fare_rate * time
}

/// Generalized costs of (flexible, on-demand) delivery for one OD pair.
#[allow(clippy::too_many_arguments)]
pub fn delivery_costs(
    w_flex: f64,
    t_flex: f64,
    fare_flex: f64,
    w_ride: f64,
    time: f64,
    fare_rate: f64,
    alpha_d: f64,
    pd: &DisutilityParams,
) -> (f64, f64) {
    (
        alpha_d * w_flex + pd.eval(t_flex) + fare_flex,
        alpha_d * w_ride + pd.eval(time) + fare_rate * time,
    )
}

/// Binary logit ride demand.
pub fn ride_demand(lambda0: f64, cost: f64, outside: f64, eps: f64) -> f64 {
    if lambda0 == 0.0 || cost == f64::INFINITY {
        return 0.0;
    }
    lambda0 / (1.0 + (eps * (cost - outside)).exp())
}

/// Three-way logit split of parcel demand into (flexible, on-demand) rates.
/// An infinite cost removes that alternative.
pub fn delivery_split(lambda0: f64, c_flex: f64, c_ondemand: f64, c_outside: f64, eta: f64) -> (f64, f64) {
    if lambda0 == 0.0 {
        return (0.0, 0.0);
    }
    let base = c_flex.min(c_ondemand).min(c_outside);
    let w = |c: f64| if c == f64::INFINITY { 0.0 } else { (-eta * (c - base)).exp() };
    let (a, b, o) = (w(c_flex), w(c_ondemand), w(c_outside));
    let total = a + b + o;
    (lambda0 * a / total, lambda0 * b / total)
}

/// Binary logit driver supply.
pub fn driver_supply(wage: f64, outside_wage: f64, sigma: f64, pool: f64) -> f64 {
    if wage == f64::NEG_INFINITY {
        return 0.0;
    }
    pool / (1.0 + (sigma * (outside_wage - wage)).exp())
}

/// Wage ($/hr) at which the logit supply equals `required` drivers.
pub fn invert_wage(required: f64, pool: f64, sigma: f64, outside_wage: f64) -> Result<f64> {
    if !(required > 0.0 && required < pool) {
        return Err(Error::InfeasibleSupply { required, pool });
    }
    Ok(outside_wage + (required / (pool - required)).ln() / sigma)
}
