//! Seeded Monte Carlo counterparts of the analytic chain quantities, and
//! random instance generators for checking them.
//!
//! Every replication draws from its own ChaCha8 stream, so results depend
//! only on the seed and the replication count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ctmc::{solve_chain, CtmcSolution};
use crate::equilibrium::EquilibriumState;
use crate::error::{Error, Result};
use crate::market::{DistributionSpec, Market};
use crate::matching::success_rates;
use crate::matrix::Matrix;

/// Walks longer than this many hops are treated as never arriving.
pub const MAX_HOPS: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    /// Events (chain simulation) or walks (passage and race simulation) per replication.
    pub samples: u64,
    pub replications: usize,
    /// Fraction of each chain replication discarded before recording.
    pub warmup: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { seed: 2024, samples: 100_000, replications: 10, warmup: 0.1 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.replications == 0 {
            return Err(Error::InvalidInput("simulation needs at least one sample and one replication".into()));
        }
        if !(0.0..1.0).contains(&self.warmup) {
            return Err(Error::InvalidInput(format!("warm-up fraction {} outside [0, 1)", self.warmup)));
        }
        Ok(())
    }

    fn stream(&self, rep: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(rep as u64);
        rng
    }
}

/// Mean over replications with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

impl Estimate {
    fn from_reps(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std_err = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        Self { mean, std_err }
    }
}

/// Cumulative rows for inverse-transform sampling.
struct Sampler {
    cum: Vec<Vec<f64>>,
}

impl Sampler {
    fn new(p: &Matrix) -> Result<Self> {
        let mut cum = Vec::with_capacity(p.rows());
        for i in 0..p.rows() {
            let mut acc = 0.0;
            let row: Vec<f64> = p
                .row(i)
                .iter()
                .map(|v| {
                    acc += v.max(0.0);
                    acc
                })
                .collect();
            if !(acc > 0.0) {
                return Err(Error::InvalidInput(format!("row {i} of the transition matrix has no mass")));
            }
            cum.push(row);
        }
        Ok(Self { cum })
    }

    fn next<R: Rng>(&self, rng: &mut R, from: usize) -> usize {
        let row = &self.cum[from];
        let u = rng.gen::<f64>() * row[row.len() - 1];
        row.iter().position(|&c| u < c).unwrap_or(row.len() - 1)
    }
}

fn exp<R: Rng>(rng: &mut R, mean: f64) -> f64 {
    let e: f64 = Exp1.sample(rng);
    mean * e
}

/// Share of time spent in each state of a semi-Markov chain with jump matrix
/// `transitions` and exponential sojourns of mean `hold`, started from `start`.
pub fn simulate_ctmc(transitions: &Matrix, hold: &[f64], start: usize, cfg: &SimConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    cfg.validate()?;
    let s = transitions.rows();
    if hold.len() != s || start >= s {
        return Err(Error::InvalidInput("holding times or start state do not match the chain".into()));
    }
    let sampler = Sampler::new(transitions)?;
    let skip = (cfg.warmup * cfg.samples as f64) as u64;
    let mut shares = vec![Vec::with_capacity(cfg.replications); s];
    for rep in 0..cfg.replications {
        let mut rng = cfg.stream(rep);
        let mut time = vec![0.0; s];
        let mut cur = start;
        for _ in 0..skip {
            cur = sampler.next(&mut rng, cur);
        }
        for _ in 0..cfg.samples {
            time[cur] += exp(&mut rng, hold[cur]);
            cur = sampler.next(&mut rng, cur);
        }
        let total: f64 = time.iter().sum();
        for (k, t) in time.iter().enumerate() {
            shares[k].push(t / total);
        }
    }
    let est: Vec<Estimate> = shares.iter().map(|v| Estimate::from_reps(v)).collect();
    Ok((est.iter().map(|e| e.mean).collect(), est.iter().map(|e| e.std_err).collect()))
}

fn walk_to<R: Rng>(rng: &mut R, sampler: &Sampler, s: &Matrix, from: usize, dest: usize) -> Result<f64> {
    let mut t = 0.0;
    let mut cur = from;
    for _ in 0..MAX_HOPS {
        let next = sampler.next(rng, cur);
        t += exp(rng, s[(cur, next)]);
        cur = next;
        if cur == dest {
            return Ok(t);
        }
    }
    Err(Error::NoConvergence { what: "first-passage walk", residual: t, iterations: MAX_HOPS as usize })
}

/// Time for a walk from `origin` to first reach `dest`; first return when
/// they coincide. Hops take exponential time with mean `s_ij`.
pub fn simulate_first_passage(p: &Matrix, s: &Matrix, origin: usize, dest: usize, cfg: &SimConfig) -> Result<Estimate> {
    cfg.validate()?;
    let sampler = Sampler::new(p)?;
    let mut reps = Vec::with_capacity(cfg.replications);
    for rep in 0..cfg.replications {
        let mut rng = cfg.stream(rep);
        let mut sum = 0.0;
        for _ in 0..cfg.samples {
            sum += walk_to(&mut rng, &sampler, s, origin, dest)?;
        }
        reps.push(sum / cfg.samples as f64);
    }
    Ok(Estimate::from_reps(&reps))
}

/// Delivery time of a parcel picked up in `origin` for `dest`: each visit to
/// `dest` is a drop-off attempt succeeding with `p_drop`, and a parcel
/// picked up in its destination makes its first attempt in place.
pub fn simulate_delivery(p: &Matrix, s: &Matrix, p_drop: f64, origin: usize, dest: usize, cfg: &SimConfig) -> Result<Estimate> {
    cfg.validate()?;
    if !(p_drop > 0.0 && p_drop <= 1.0) {
        return Err(Error::InvalidInput(format!("drop-off success {p_drop} outside (0, 1]")));
    }
    let sampler = Sampler::new(p)?;
    let mut reps = Vec::with_capacity(cfg.replications);
    for rep in 0..cfg.replications {
        let mut rng = cfg.stream(rep);
        let mut sum = 0.0;
        for _ in 0..cfg.samples {
            let mut t = 0.0;
            let mut at = origin;
            if origin != dest {
                t += walk_to(&mut rng, &sampler, s, origin, dest)?;
                at = dest;
            }
            while rng.gen::<f64>() >= p_drop {
                t += walk_to(&mut rng, &sampler, s, at, dest)?;
            }
            sum += t;
        }
        reps.push(sum / cfg.samples as f64);
    }
    Ok(Estimate::from_reps(&reps))
}

/// Sampled `P(A < B)` for the given means; under the log-normal family the
/// log-scale std devs are `sigma` and the log correlation is `rho`.
pub fn simulate_race(dist: &DistributionSpec, mean_a: f64, mean_b: f64, sigma: (f64, f64), rho: f64, cfg: &SimConfig) -> Result<Estimate> {
    cfg.validate()?;
    let mut reps = Vec::with_capacity(cfg.replications);
    for rep in 0..cfg.replications {
        let mut rng = cfg.stream(rep);
        let mut wins = 0u64;
        for _ in 0..cfg.samples {
            let (a, b) = match dist {
                DistributionSpec::Exponential => (exp(&mut rng, mean_a), exp(&mut rng, mean_b)),
                DistributionSpec::LogNormal { .. } => {
                    let z1: f64 = StandardNormal.sample(&mut rng);
                    let z2: f64 = StandardNormal.sample(&mut rng);
                    let (sa, sb) = sigma;
                    let a = (mean_a.ln() - 0.5 * sa * sa + sa * z1).exp();
                    let b = (mean_b.ln() - 0.5 * sb * sb + sb * (rho * z1 + (1.0 - rho * rho).sqrt() * z2)).exp();
                    (a, b)
                }
            };
            if a < b {
                wins += 1;
            }
        }
        reps.push(wins as f64 / cfg.samples as f64);
    }
    Ok(Estimate::from_reps(&reps))
}

/// Random zone chain with strictly positive transitions and transit times
/// between 2 and 20 minutes.
pub fn random_zone_chain<R: Rng>(rng: &mut R, zones: usize) -> (Matrix, Matrix) {
    let mut p = Matrix::from_fn(zones, zones, |_, _| rng.gen_range(0.05..1.0));
    for i in 0..zones {
        let t = p.row_sum(i);
        p.row_mut(i).iter_mut().for_each(|v| *v /= t);
    }
    let s = Matrix::from_fn(zones, zones, |_, _| rng.gen_range(2.0..20.0));
    (p, s)
}

/// Random driver chain built from random waits, travel times and flexible
/// flows through the same path as the equilibrium.
pub fn random_driver_chain<R: Rng>(rng: &mut R, zones: usize, capacity: usize, dist: &DistributionSpec) -> Result<CtmcSolution> {
    let (p, _) = random_zone_chain(rng, zones);
    let w_idle: Vec<f64> = (0..zones).map(|_| rng.gen_range(1.0..6.0)).collect();
    let t_g: Vec<f64> = (0..zones).map(|_| rng.gen_range(1.0..4.0)).collect();
    let tbar_g: Vec<f64> = (0..zones).map(|_| rng.gen_range(1.0..4.0)).collect();
    let w_dg: Vec<f64> = (0..zones).map(|_| rng.gen_range(0.5..5.0)).collect();
    let lambda_df = Matrix::from_fn(zones, zones, |_, _| rng.gen_range(0.1..2.0));
    let rates = success_rates(&w_idle, &t_g, &tbar_g, &w_dg, &lambda_df, capacity, dist);
    solve_chain(&p, &rates, &w_idle, &t_g, &w_dg, &tbar_g)
}

/// Relative tolerance of an analytic-vs-sampled comparison.
pub const REL_TOL: f64 = 0.02;
/// Standard errors of slack granted on top of [`REL_TOL`].
pub const SE_SLACK: f64 = 4.0;

/// One analytic-vs-sampled comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub quantity: String,
    pub index: String,
    pub analytic: f64,
    pub monte_carlo: f64,
    pub std_err: f64,
    pub pass: bool,
}

impl ValidationRow {
    pub fn new(quantity: &str, index: String, analytic: f64, est: Estimate) -> Self {
        let gap = (est.mean - analytic).abs();
        let pass = gap <= (REL_TOL * analytic.abs()).max(SE_SLACK * est.std_err);
        ValidationRow { quantity: quantity.into(), index, analytic, monte_carlo: est.mean, std_err: est.std_err, pass }
    }

    pub fn rel_err(&self) -> f64 {
        (self.monte_carlo - self.analytic).abs() / self.analytic.abs().max(f64::MIN_POSITIVE)
    }
}

/// Checks the first-passage times and delivery times out of `origin`, the
/// occupancy of every chain state and the per-zone races of an equilibrium
/// against simulation.
pub fn validate_state(market: &Market, state: &EquilibriumState, origin: usize, cfg: &SimConfig) -> Result<Vec<ValidationRow>> {
    let d = &state.demand;
    let zc = &d.zone_chain;
    let m = market.zones();
    if origin >= m {
        return Err(Error::InvalidInput(format!("origin zone {origin} out of range")));
    }
    let mut rows = Vec::new();
    for j in 0..m {
        let est = simulate_first_passage(&zc.p, &zc.s, origin, j, cfg)?;
        rows.push(ValidationRow::new("first_passage", format!("{}-{}", origin + 1, j + 1), zc.et[(origin, j)], est));
    }
    for j in 0..m {
        let p = d.drop_succ[j];
        if !(p >= crate::first_passage::MIN_DROP_SUCCESS) {
            continue;
        }
        let est = simulate_delivery(&zc.p, &zc.s, p, origin, j, cfg)?;
        rows.push(ValidationRow::new("delivery_time", format!("{}-{}", origin + 1, j + 1), d.t_df[(origin, j)], est));
    }
    let sol = &state.ctmc;
    let start = (0..sol.pi.len()).max_by(|&a, &b| sol.pi[a].total_cmp(&sol.pi[b])).unwrap_or(0);
    let (share, se) = simulate_ctmc(&sol.transitions, &sol.hold, start, cfg)?;
    for (k, (z, n)) in sol.states().into_iter().enumerate() {
        let est = Estimate { mean: share[k], std_err: se[k] };
        rows.push(ValidationRow::new("occupancy", format!("{}:{}", z + 1, n), sol.pi[k], est));
    }
    let dist = &market.params.distribution;
    let (s_idle, s_drop, s_disp, s_pick, r_disp, r_pick) = match *dist {
        DistributionSpec::Exponential => (0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
        DistributionSpec::LogNormal { sigma_idle, sigma_dropoff, sigma_dispatch, sigma_pickup, rho_dispatch, rho_pickup } => {
            (sigma_idle, sigma_dropoff, sigma_dispatch, sigma_pickup, rho_dispatch, rho_pickup)
        }
    };
    for z in 0..m {
        let w = d.w_idle[z];
        let drop = simulate_race(dist, market.network.dropoff_time[z], w, (s_drop, s_idle), 0.0, cfg)?;
        rows.push(ValidationRow::new("drop_success", (z + 1).to_string(), state.rates.drop_succ[z], drop));
        if state.w_dg[z].is_finite() {
            let pw = simulate_race(dist, state.w_dg[z], w, (s_disp, s_idle), r_disp, cfg)?;
            rows.push(ValidationRow::new("pick_dispatch", (z + 1).to_string(), state.rates.pick_succ_w[z], pw));
            let pt = simulate_race(dist, state.tbar_g[z], w, (s_pick, s_idle), r_pick, cfg)?;
            rows.push(ValidationRow::new("pick_travel", (z + 1).to_string(), state.rates.pick_succ_t[z], pt));
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::first_passage::{first_passage_times, flexible_delivery_time};
    use crate::matching::{exponential_race, lognormal_race};

    fn small() -> SimConfig {
        SimConfig { seed: 7, samples: 20_000, replications: 5, warmup: 0.1 }
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        assert!(SimConfig { samples: 0, ..SimConfig::default() }.validate().is_err());
        assert!(SimConfig { replications: 0, ..SimConfig::default() }.validate().is_err());
        assert!(SimConfig { warmup: 1.0, ..SimConfig::default() }.validate().is_err());
    }

    #[test]
    fn same_seed_same_result() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (p, s) = random_zone_chain(&mut rng, 3);
        let a = simulate_first_passage(&p, &s, 0, 2, &small()).unwrap();
        let b = simulate_first_passage(&p, &s, 0, 2, &small()).unwrap();
        assert_eq!(a, b);
        let c = simulate_first_passage(&p, &s, 0, 2, &SimConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn passage_and_delivery_agree_with_analytic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (p, s) = random_zone_chain(&mut rng, 3);
        let et = first_passage_times(&p, &s).unwrap();
        let td = flexible_delivery_time(&et, &[0.6, 0.6, 0.6]);
        for (i, j) in [(0, 1), (2, 2)] {
            let fp = simulate_first_passage(&p, &s, i, j, &small()).unwrap();
            assert!((fp.mean - et[(i, j)]).abs() < 5.0 * fp.std_err + 1e-3 * et[(i, j)]);
            let d = simulate_delivery(&p, &s, 0.6, i, j, &small()).unwrap();
            assert!((d.mean - td[(i, j)]).abs() < 5.0 * d.std_err + 1e-3 * td[(i, j)]);
        }
    }

    #[test]
    fn chain_occupancy_agrees_with_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sol = random_driver_chain(&mut rng, 2, 2, &DistributionSpec::default()).unwrap();
        let start = sol.pi.iter().position(|v| *v > 0.0).unwrap();
        let (share, se) = simulate_ctmc(&sol.transitions, &sol.hold, start, &small()).unwrap();
        for k in 0..share.len() {
            assert!((share[k] - sol.pi[k]).abs() < 5.0 * se[k] + 2e-3, "state {k}");
        }
    }

    #[test]
    fn races_agree_with_closed_form() {
        let e = simulate_race(&DistributionSpec::Exponential, 2.0, 3.0, (0.0, 0.0), 0.0, &small()).unwrap();
        assert!((e.mean - exponential_race(2.0, 3.0)).abs() < 5.0 * e.std_err + 1e-3);
        let l = simulate_race(&DistributionSpec::default(), 2.0, 3.0, (0.5, 0.7), 0.4, &small()).unwrap();
        assert!((l.mean - lognormal_race(2.0, 3.0, 0.5, 0.7, 0.4)).abs() < 5.0 * l.std_err + 1e-3);
    }

    #[test]
    fn equilibrium_validates() {
        let spec = crate::scenario::toy();
        let mk = spec.market().unwrap();
        let st = crate::optimizer::StartPoint::default_for(&mk);
        let state = crate::equilibrium::evaluate_exact(&mk, &st.r_r, &st.c_df, &st.n_idle).unwrap();
        let rows = validate_state(&mk, &state, 0, &small()).unwrap();
        assert!(rows.len() >= 1 + 1 + 2 + 3);
        for r in &rows {
            assert!(r.pass, "{r:?}");
        }
        assert!(validate_state(&mk, &state, 1, &small()).is_err());
    }

    #[test]
    fn bad_inputs_rejected() {
        let p = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.5, 0.5]]).unwrap();
        let s = Matrix::filled(2, 2, 1.0);
        assert!(simulate_first_passage(&p, &s, 1, 0, &small()).is_err());
        assert!(simulate_delivery(&Matrix::identity(2), &s, 0.0, 0, 0, &small()).is_err());
        assert!(simulate_ctmc(&Matrix::identity(2), &[1.0], 0, &small()).is_err());
    }
}
