//! Parcel demand synthesis and the builtin 11-zone city.

use crate::error::{Error, Result};
use crate::market::{DisutilityParams, DistributionSpec, MarketParams, Network};
use crate::matrix::Matrix;
use crate::optimizer::SolverConfig;

use super::{Benchmark, DemandMode, ScenarioSpec};

/// Gravity-model parcel demand from businesses (origins) to homes
/// (destinations) with friction `1/t`, scaled to `ratio · Σ λ_r0`.
pub fn synthesize_gravity(pop: &[f64], reg: &[f64], t: &Matrix, ratio: f64, lambda_r0: &Matrix) -> Result<Matrix> {
    let m = t.rows();
    if pop.len() != m || reg.len() != m {
        return Err(Error::InvalidInput("population and businesses need one entry per zone".into()));
    }
    if ratio == 0.0 {
        return Ok(Matrix::zeros(m, m));
    }
    let mut g = Matrix::zeros(m, m);
    for j in 0..m {
        let denom: f64 = (0..m).map(|k| reg[k] / t[(k, j)]).sum();
        for i in 0..m {
            g[(i, j)] = pop[j] * reg[i] / t[(i, j)] / denom;
        }
    }
    Ok(g.scale(ratio * lambda_r0.sum() / g.sum()))
}

/// Parcel demand whose OD ranking is the reverse of ride demand: the
/// largest ride pair gets the smallest value. Ties go by OD index.
pub fn reshuffle_opposite(lambda_r0: &Matrix, ratio: f64) -> Matrix {
    let n = lambda_r0.as_slice().len();
    let vals = lambda_r0.as_slice();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap().then(a.cmp(&b)));
    let mut out = Matrix::zeros(lambda_r0.rows(), lambda_r0.cols());
    for (rank, &idx) in order.iter().enumerate() {
        out.as_mut_slice()[idx] = vals[order[n - 1 - rank]];
    }
    let total = out.sum();
    if total > 0.0 {
        out.scale(ratio * lambda_r0.sum() / total)
    } else {
        out
    }
}

/// Zone centroids (km), activity weight, population (thousands) and
/// registered businesses (thousands). The business district sits in the
/// north-east.
const ZONES: [(f64, f64, f64, f64, f64); 11] = [
    (6.0, 6.0, 10.0, 45.0, 14.0),
    (5.1, 4.8, 6.0, 30.0, 6.0),
    (5.0, 6.8, 7.0, 95.0, 7.0),
    (3.2, 6.5, 4.5, 60.0, 5.5),
    (3.0, 4.2, 4.5, 65.0, 4.5),
    (4.8, 3.0, 5.0, 75.0, 4.5),
    (1.0, 5.6, 3.0, 75.0, 3.5),
    (0.8, 3.2, 3.5, 120.0, 4.0),
    (6.2, 2.8, 4.0, 70.0, 4.5),
    (3.8, 0.8, 3.0, 110.0, 3.5),
    (1.2, 1.0, 2.0, 60.0, 2.0),
];

/// Total potential ride demand (orders/min).
pub const SF11_RIDE_POTENTIAL: f64 = 1115.6;

/// The builtin 11-zone synthetic city.
pub fn sf11() -> ScenarioSpec {
    let m = ZONES.len();
    let t = Matrix::from_fn(m, m, |i, j| {
        let (xi, yi, ..) = ZONES[i];
        let (xj, yj, ..) = ZONES[j];
        let d = if i == j { 0.4 } else { ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt() };
        3.0 + d / 0.4
    });
    let raw = Matrix::from_fn(m, m, |i, j| ZONES[i].2 * ZONES[j].2 / t[(i, j)]);
    let lambda_r0 = raw.scale(SF11_RIDE_POTENTIAL / raw.sum());
    let params = MarketParams {
        lambda_r0,
        lambda_d0: Matrix::zeros(m, m),
        driver_pool: 10000.0,
        eps: 0.12,
        eta: 0.16,
        sigma: 0.18,
        c_r0: t.scale(KAPPA_RIDE),
        c_d0: t.scale(KAPPA_PARCEL),
        outside_wage: 29.0,
        alpha_r: 3.2,
        alpha_d: 0.7,
        w_max: 6.0,
        capacity: 3,
        distribution: DistributionSpec::default(),
        disutility: DisutilityParams::default(),
        flexible: true,
    };
    ScenarioSpec {
        name: "sf11".into(),
        network: Network { zones: m, travel_time: t, matching: vec![43.0; m], dropoff_time: vec![3.0; m] },
        params,
        demand_mode: DemandMode::Gravity,
        population: Some(ZONES.iter().map(|z| z.3).collect()),
        businesses: Some(ZONES.iter().map(|z| z.4).collect()),
        ratio: 0.4,
        sweep: (0..=8).map(|k| k as f64 / 10.0).collect(),
        benchmark: Benchmark::Integrated,
        solver: SolverConfig::default(),
    }
}

/// Single zone with one parcel slot per vehicle. Small enough for
/// exhaustive grid search.
pub fn toy() -> ScenarioSpec {
    let t = Matrix::filled(1, 1, 6.0);
    let params = MarketParams {
        lambda_r0: Matrix::filled(1, 1, 40.0),
        lambda_d0: Matrix::filled(1, 1, 1.0),
        driver_pool: 2000.0,
        eps: 0.12,
        eta: 0.16,
        sigma: 0.18,
        c_r0: t.scale(KAPPA_RIDE),
        c_d0: t.scale(KAPPA_PARCEL),
        outside_wage: 29.0,
        alpha_r: 3.2,
        alpha_d: 0.7,
        w_max: 6.0,
        capacity: 1,
        distribution: DistributionSpec::default(),
        disutility: DisutilityParams::default(),
        flexible: true,
    };
    ScenarioSpec {
        name: "toy1".into(),
        network: Network { zones: 1, travel_time: t, matching: vec![43.0], dropoff_time: vec![3.0] },
        params,
        demand_mode: DemandMode::Explicit,
        population: None,
        businesses: None,
        ratio: 0.4,
        sweep: vec![0.0, 0.2, 0.4],
        benchmark: Benchmark::Integrated,
        solver: SolverConfig::default(),
    }
}

/// Outside-option cost per minute of travel, passengers ($/min).
pub const KAPPA_RIDE: f64 = 1.15;
/// Outside-option cost per minute of travel, parcel customers ($/min).
pub const KAPPA_PARCEL: f64 = 1.5;
