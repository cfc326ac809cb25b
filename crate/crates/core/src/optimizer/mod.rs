//! Profit maximization: the two-stage algorithm (approximate problem, then
//! constrained refinement) and a direct-solve baseline.

pub mod algorithm;
pub mod approx;
pub mod auglag;
pub mod boxqn;
pub mod direct;
pub mod gradient;
pub mod refine;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{ElementaryVars, EquilibriumState};
use crate::market::Market;
use crate::matrix::Matrix;

pub use algorithm::{algorithm1, multistart};
pub use approx::solve_approx;
pub use direct::direct_solve;
pub use refine::refine_constrained;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Box for ride fares ($/min).
    pub r_bounds: (f64, f64),
    /// Box for flexible generalized costs ($).
    pub c_df_bounds: (f64, f64),
    /// Upper bound on idle drivers per zone; the lower bound is `(L/w_max)²`.
    pub n_idle_max: f64,
    /// Upper bound on dispatch waits (min).
    pub w_dg_max: f64,
    /// Box for the wage in the direct formulation ($/hr).
    pub q_bounds: (f64, f64),
    /// Box for flexible fares in the direct formulation ($).
    pub r_df_bounds: (f64, f64),
    pub fd_step: f64,
    pub mu0: f64,
    pub mu_growth: f64,
    pub max_outer: usize,
    pub approx_max_iter: usize,
    pub inner_max_iter: usize,
    pub grad_tol: f64,
    pub f_tol: f64,
    pub bisection_tol: f64,
    /// Exit tolerance on the constraint residuals.
    pub residual_tol: f64,
    pub starts: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            r_bounds: (0.0, 5.0),
            c_df_bounds: (0.0, 60.0),
            n_idle_max: 2000.0,
            w_dg_max: 200.0,
            q_bounds: (0.0, 80.0),
            r_df_bounds: (-20.0, 60.0),
            fd_step: 1e-5,
            mu0: 10.0,
            mu_growth: 10.0,
            max_outer: 8,
            approx_max_iter: 150,
            inner_max_iter: 60,
            grad_tol: 1e-8,
            f_tol: 1e-10,
            bisection_tol: 1e-8,
            residual_tol: 1e-6,
            starts: 10,
            seed: 2024,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a < b;
        if !(ordered(self.r_bounds) && ordered(self.c_df_bounds) && ordered(self.q_bounds) && ordered(self.r_df_bounds)) {
            return Err(crate::Error::InvalidInput("solver bounds must be finite and ordered".into()));
        }
        if !(self.fd_step > 0.0 && self.grad_tol > 0.0 && self.bisection_tol > 0.0 && self.residual_tol > 0.0) {
            return Err(crate::Error::InvalidInput("solver tolerances must be positive".into()));
        }
        if !(self.n_idle_max > 0.0 && self.w_dg_max > 0.0 && self.mu0 > 0.0 && self.mu_growth >= 1.0) {
            return Err(crate::Error::InvalidInput("invalid solver limits".into()));
        }
        Ok(())
    }
}

/// Initial guess for a run. Fields outside the elementary variables are
/// only used by the direct formulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartPoint {
    pub r_r: Vec<f64>,
    pub c_df: Matrix,
    pub n_idle: Vec<f64>,
    pub n_bar: Vec<f64>,
    pub w_dg: Vec<f64>,
    pub r_df: Matrix,
    pub q: f64,
    pub lambda_r: Matrix,
    pub lambda_df: Matrix,
    pub lambda_do: Matrix,
}

impl StartPoint {
    /// Deterministic default start: `r = 1.5`, `c_df = 15`, `N_I = 200`.
    pub fn default_for(market: &Market) -> Self {
        let m = market.zones();
        let p = &market.params;
        StartPoint {
            r_r: vec![1.5; m],
            c_df: Matrix::filled(m, m, 15.0),
            n_idle: vec![200.0; m],
            n_bar: vec![100.0; m],
            w_dg: vec![10.0; m],
            r_df: Matrix::filled(m, m, 10.0),
            q: 25.0,
            lambda_r: p.lambda_r0.scale(0.2),
            lambda_df: p.lambda_d0.scale(0.15),
            lambda_do: p.lambda_d0.scale(0.15),
        }
    }

    /// Warm start from a previous solution of the same network. Flexible
    /// costs and inner variables it lacks keep their default values.
    pub fn from_vars(market: &Market, vars: &ElementaryVars) -> Self {
        let mut s = Self::default_for(market);
        let keep = |v: f64, d: f64| if v.is_finite() { v } else { d };
        s.r_r = vars.r_r.clone();
        s.n_idle = vars.n_idle.clone();
        s.c_df = Matrix::from_fn(s.c_df.rows(), s.c_df.cols(), |i, j| keep(vars.c_df[(i, j)], s.c_df[(i, j)]));
        s.n_bar = vars.n_bar.iter().zip(&s.n_bar).map(|(v, d)| keep(*v, *d)).collect();
        s.w_dg = vars.w_dg.iter().zip(&s.w_dg).map(|(v, d)| keep(*v, *d)).collect();
        s
    }

    /// Uniform draw from the published initial-guess box.
    pub fn sample(market: &Market, rng: &mut impl Rng) -> Self {
        let m = market.zones();
        let p = &market.params;
        let mut u = |a: f64, b: f64| rng.gen_range(a..b);
        let r_r = (0..m).map(|_| u(1.0, 2.0)).collect();
        let r_df = Matrix::from_fn(m, m, |_, _| u(5.0, 15.0));
        let q = u(20.0, 30.0);
        let lambda_r = Matrix::from_fn(m, m, |i, j| u(0.15, 0.25) * p.lambda_r0[(i, j)]);
        let lambda_df = Matrix::from_fn(m, m, |i, j| u(0.1, 0.2) * p.lambda_d0[(i, j)]);
        let lambda_do = Matrix::from_fn(m, m, |i, j| u(0.1, 0.2) * p.lambda_d0[(i, j)]);
        let n_idle = (0..m).map(|_| u(150.0, 250.0)).collect();
        let n_bar = (0..m).map(|_| u(50.0, 150.0)).collect();
        let w_dg = (0..m).map(|_| u(5.0, 15.0)).collect();
        let c_df = Matrix::from_fn(m, m, |_, _| u(10.0, 20.0));
        StartPoint { r_r, c_df, n_idle, n_bar, w_dg, r_df, q, lambda_r, lambda_df, lambda_do }
    }

    /// `count` starts, each drawn from its own ChaCha stream of `seed`.
    pub fn sample_many(market: &Market, seed: u64, count: usize) -> Vec<Self> {
        (0..count)
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(k as u64 + 1);
                Self::sample(market, &mut rng)
            })
            .collect()
    }
}

/// Outcome of one optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptReport {
    pub method: String,
    pub vars: ElementaryVars,
    pub profit: f64,
    pub approx_profit: Option<f64>,
    pub refined_profit: Option<f64>,
    pub approx_iterations: usize,
    pub refine_iterations: usize,
    pub evaluations: usize,
    pub outer_rounds: usize,
    /// Best profit after each outer round.
    pub trajectory: Vec<f64>,
    /// Max constraint residual at exit.
    pub residual: f64,
    pub converged: bool,
    pub diverged: bool,
    /// Wall time (s); excluded from deterministic outputs.
    pub wall_time: f64,
    #[serde(skip)]
    pub state: Option<Box<EquilibriumState>>,
}

/// Decision-vector layout over the elementary variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub zones: usize,
    /// OD pairs whose flexible cost is a decision variable.
    pub flex_pairs: Vec<(usize, usize)>,
    /// Zones with flexible outflow; their `N̄` and `w_dg` are decisions in
    /// the constrained stage.
    pub flex_zones: Vec<usize>,
    pub with_inner: bool,
}

impl Layout {
    pub fn new(market: &Market, with_inner: bool) -> Self {
        let m = market.zones();
        let p = &market.params;
        let flex_pairs: Vec<(usize, usize)> = if p.flexible {
            (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).filter(|&(i, j)| p.lambda_d0[(i, j)] > 0.0).collect()
        } else {
            Vec::new()
        };
        let mut flex_zones: Vec<usize> = flex_pairs.iter().map(|p| p.0).collect();
        flex_zones.dedup();
        Layout { zones: m, flex_pairs, flex_zones, with_inner }
    }

    pub fn len(&self) -> usize {
        let base = 2 * self.zones + self.flex_pairs.len();
        if self.with_inner {
            base + 2 * self.flex_zones.len()
        } else {
            base
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn offsets(&self) -> (usize, usize, usize, usize) {
        let c = self.zones;
        let n = c + self.flex_pairs.len();
        let nb = n + self.zones;
        let w = nb + self.flex_zones.len();
        (c, n, nb, w)
    }

    /// `(r, c_df, N_I)` from a decision vector; non-decision pairs get `+∞`.
    pub fn unpack(&self, x: &[f64]) -> (Vec<f64>, Matrix, Vec<f64>) {
        let (c, n, _, _) = self.offsets();
        let m = self.zones;
        let mut c_df = Matrix::filled(m, m, f64::INFINITY);
        for (k, &(i, j)) in self.flex_pairs.iter().enumerate() {
            c_df[(i, j)] = x[c + k];
        }
        (x[..m].to_vec(), c_df, x[n..n + m].to_vec())
    }

    /// `(N̄, w_dg)` for the flexible zones, with `fill` elsewhere.
    pub fn unpack_inner(&self, x: &[f64], fill_bar: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (_, _, nb, w) = self.offsets();
        let mut n_bar = fill_bar.to_vec();
        let mut w_dg = vec![f64::INFINITY; self.zones];
        for (k, &z) in self.flex_zones.iter().enumerate() {
            n_bar[z] = x[nb + k];
            w_dg[z] = x[w + k];
        }
        (n_bar, w_dg)
    }

    pub fn pack(&self, r: &[f64], c_df: &Matrix, n_idle: &[f64], inner: Option<(&[f64], &[f64])>) -> Vec<f64> {
        let mut x = r.to_vec();
        x.extend(self.flex_pairs.iter().map(|&(i, j)| c_df[(i, j)]));
        x.extend_from_slice(n_idle);
        if self.with_inner {
            let (n_bar, w_dg) = inner.expect("constrained layout needs inner variables");
            x.extend(self.flex_zones.iter().map(|&z| n_bar[z]));
            x.extend(self.flex_zones.iter().map(|&z| w_dg[z]));
        }
        x
    }

    /// Box bounds and typical magnitudes.
    pub fn bounds(&self, market: &Market, cfg: &SolverConfig) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let m = self.zones;
        let nmin = market.min_idle();
        let mut lo = vec![cfg.r_bounds.0; m];
        let mut hi = vec![cfg.r_bounds.1; m];
        let mut typ = vec![1.0; m];
        for _ in &self.flex_pairs {
            lo.push(cfg.c_df_bounds.0);
            hi.push(cfg.c_df_bounds.1);
            typ.push(10.0);
        }
        for z in 0..m {
            lo.push(nmin[z]);
            hi.push(cfg.n_idle_max.max(nmin[z] * 2.0));
            typ.push(100.0);
        }
        if self.with_inner {
            for _ in &self.flex_zones {
                lo.push(crate::equilibrium::MIN_EFFECTIVE_IDLE);
                hi.push(cfg.n_idle_max);
                typ.push(100.0);
            }
            for _ in &self.flex_zones {
                lo.push(1e-3);
                hi.push(cfg.w_dg_max);
                typ.push(5.0);
            }
        }
        (lo, hi, typ)
    }

    pub fn clamp(&self, x: &mut [f64], lo: &[f64], hi: &[f64]) {
        for k in 0..x.len() {
            x[k] = x[k].clamp(lo[k], hi[k]);
        }
    }
}

/// Relative spread `(max - min) / |max|` of a set of profits.
pub fn relative_spread(profits: &[f64]) -> f64 {
    let max = profits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = profits.iter().cloned().fold(f64::INFINITY, f64::min);
    (max - min) / max.abs().max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::tests::symmetric_market;

    #[test]
    fn layout_round_trip() {
        let mk = symmetric_market(3, 2.0);
        let l = Layout::new(&mk, true);
        assert_eq!(l.len(), 3 + 9 + 3 + 6);
        let c = Matrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64);
        let x = l.pack(&[1.0, 2.0, 3.0], &c, &[100.0, 110.0, 120.0], Some((&[50.0, 60.0, 70.0], &[5.0, 6.0, 7.0])));
        let (r, c2, n) = l.unpack(&x);
        assert_eq!(r, vec![1.0, 2.0, 3.0]);
        assert_eq!(c2, c);
        assert_eq!(n, vec![100.0, 110.0, 120.0]);
        let (nb, w) = l.unpack_inner(&x, &[0.0; 3]);
        assert_eq!(nb, vec![50.0, 60.0, 70.0]);
        assert_eq!(w, vec![5.0, 6.0, 7.0]);
    }

    #[test]
    fn no_parcels_means_no_flexible_variables() {
        let mk = symmetric_market(2, 0.0);
        let l = Layout::new(&mk, true);
        assert!(l.flex_pairs.is_empty() && l.flex_zones.is_empty());
        assert_eq!(l.len(), 4);
    }

    #[test]
    fn samples_are_deterministic_and_in_range() {
        let mk = symmetric_market(2, 2.0);
        let a = StartPoint::sample_many(&mk, 7, 3);
        let b = StartPoint::sample_many(&mk, 7, 3);
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        for s in &a {
            assert!(s.r_r.iter().all(|v| (1.0..2.0).contains(v)));
            assert!(s.n_idle.iter().all(|v| (150.0..250.0).contains(v)));
            assert!(s.c_df.as_slice().iter().all(|v| (10.0..20.0).contains(v)));
            assert!((20.0..30.0).contains(&s.q));
        }
    }

    #[test]
    fn spread() {
        assert!((relative_spread(&[100.0, 95.0, 98.0]) - 0.05).abs() < 1e-15);
    }
}
