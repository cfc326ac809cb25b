//! Driver state chain over (zone, carried parcels): transitions, holding
//! times, limiting distribution, and the idle-supply quantities built on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::lu_solve;
use crate::matching::{p_flex, SuccessRates};
use crate::matrix::Matrix;

/// Index of state `(zone, n)` in a chain with parcel capacity `capacity`.
pub fn state_index(zone: usize, n: usize, capacity: usize) -> usize {
    zone * (capacity + 1) + n
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtmcSolution {
    pub zones: usize,
    pub capacity: usize,
    /// Jump-chain transition matrix.
    pub transitions: Matrix,
    /// Mean holding time per state (min).
    pub hold: Vec<f64>,
    /// Limiting probabilities.
    pub pi: Vec<f64>,
    /// States outside the recurrent class; they carry zero mass.
    pub transient: Vec<usize>,
}

impl CtmcSolution {
    pub fn states(&self) -> Vec<(usize, usize)> {
        (0..self.zones).flat_map(|z| (0..=self.capacity).map(move |n| (z, n))).collect()
    }

    /// Probability mass of one zone.
    pub fn zone_mass(&self, zone: usize) -> f64 {
        (0..=self.capacity).map(|n| self.pi[state_index(zone, n, self.capacity)]).sum()
    }

    /// Conditional distribution of the carried count within a zone. A zone
    /// without mass is treated as holding all drivers empty.
    pub fn conditional(&self, zone: usize) -> Vec<f64> {
        let mass = self.zone_mass(zone);
        let mut out = vec![0.0; self.capacity + 1];
        if mass > 0.0 {
            for (n, v) in out.iter_mut().enumerate() {
                *v = self.pi[state_index(zone, n, self.capacity)] / mass;
            }
        } else {
            out[0] = 1.0;
        }
        out
    }

    /// Idle drivers per state given the idle count of each zone.
    pub fn state_drivers(&self, idle: &[f64]) -> Vec<f64> {
        (0..self.zones).flat_map(|z| self.conditional(z).into_iter().map(move |c| c * idle[z])).collect()
    }

    /// Max-norm residual of the balance equations.
    pub fn balance_residual(&self) -> f64 {
        balance_residual(&self.transitions, &self.hold, &self.pi)
    }
}

/// Jump-chain transition matrix.
pub fn build_transitions(p_zone: &Matrix, rates: &SuccessRates) -> Result<Matrix> {
    let m = p_zone.rows();
    let ca = rates.capacity();
    let s = m * (ca + 1);
    let mut pc = Matrix::zeros(s, s);
    for z in 0..m {
        for n in 0..=ca {
            let idx = state_index(z, n, ca);
            let pick = rates.pick[z][n];
            let drop = rates.drop[z][n];
            let total = pick + drop;
            if !(0.0..=1.0 + 1e-12).contains(&total) || pick < 0.0 || drop < 0.0 {
                return Err(Error::InvalidRates { state: idx, total });
            }
            let stay = (1.0 - total).max(0.0);
            if n < ca {
                pc[(idx, state_index(z, n + 1, ca))] += pick;
            }
            if n > 0 {
                pc[(idx, state_index(z, n - 1, ca))] += drop;
            }
            for z2 in 0..m {
                pc[(idx, state_index(z2, n, ca))] += stay * p_zone[(z, z2)];
            }
        }
    }
    Ok(pc)
}

/// Mean holding time of each state. The pick-up term is skipped when its
/// probability is zero so that an infinite dispatch wait contributes nothing.
pub fn holding_times(pc: &Matrix, w_idle: &[f64], t_g: &[f64], w_dg: &[f64], tbar_g: &[f64], capacity: usize) -> Vec<f64> {
    let m = w_idle.len();
    let mut hold = Vec::with_capacity(m * (capacity + 1));
    for z in 0..m {
        for n in 0..=capacity {
            let idx = state_index(z, n, capacity);
            let mut t = 0.0;
            if n > 0 {
                t += pc[(idx, state_index(z, n - 1, capacity))] * t_g[z];
            }
            if n < capacity {
                let p = pc[(idx, state_index(z, n + 1, capacity))];
                if p > 0.0 {
                    t += p * (w_dg[z] + tbar_g[z]);
                }
            }
            let mv: f64 = (0..m).map(|z2| pc[(idx, state_index(z2, n, capacity))]).sum();
            t += mv * w_idle[z];
            hold.push(t);
        }
    }
    hold
}

/// `max_s |ν_s π_s - Σ_s' ν_s' π_s' Pc_s's|`.
pub fn balance_residual(pc: &Matrix, hold: &[f64], pi: &[f64]) -> f64 {
    let s = pi.len();
    let flow: Vec<f64> = (0..s).map(|k| pi[k] / hold[k]).collect();
    (0..s)
        .map(|k| {
            let inflow: f64 = (0..s).map(|j| flow[j] * pc[(j, k)]).sum();
            (flow[k] - inflow).abs()
        })
        .fold(0.0, f64::max)
}

/// Strongly connected components of the positive-entry graph (Kosaraju).
fn components(pc: &Matrix) -> Vec<usize> {
    let s = pc.rows();
    let mut order = Vec::with_capacity(s);
    let mut seen = vec![false; s];
    for root in 0..s {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut stack = vec![(root, 0usize)];
        while let Some((v, next)) = stack.pop() {
            match (next..s).find(|&w| pc[(v, w)] > 0.0 && !seen[w]) {
                Some(w) => {
                    stack.push((v, w + 1));
                    seen[w] = true;
                    stack.push((w, 0));
                }
                None => order.push(v),
            }
        }
    }
    let mut comp = vec![usize::MAX; s];
    let mut count = 0;
    for &root in order.iter().rev() {
        if comp[root] != usize::MAX {
            continue;
        }
        comp[root] = count;
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            for w in 0..s {
                if pc[(w, v)] > 0.0 && comp[w] == usize::MAX {
                    comp[w] = count;
                    stack.push(w);
                }
            }
        }
        count += 1;
    }
    comp
}

/// States of the recurrent class that carries the limiting mass. When the
/// chain has several closed classes the largest one is used (ties go to the
/// lowest state index).
pub fn recurrent_class(pc: &Matrix) -> Vec<usize> {
    let s = pc.rows();
    let comp = components(pc);
    let count = comp.iter().copied().max().map_or(0, |c| c + 1);
    let mut closed = vec![true; count];
    let mut size = vec![0usize; count];
    for v in 0..s {
        size[comp[v]] += 1;
        if (0..s).any(|w| pc[(v, w)] > 0.0 && comp[w] != comp[v]) {
            closed[comp[v]] = false;
        }
    }
    let mut best: Option<usize> = None;
    for v in 0..s {
        let c = comp[v];
        if closed[c] && best.map_or(true, |b| size[c] > size[b]) {
            best = Some(c);
        }
    }
    match best {
        Some(b) => (0..s).filter(|&v| comp[v] == b).collect(),
        None => Vec::new(),
    }
}

/// Limiting probabilities of the semi-Markov driver chain, together with
/// the states left with zero mass.
pub fn limiting_probabilities(pc: &Matrix, hold: &[f64]) -> Result<(Vec<f64>, Vec<usize>)> {
    let s = pc.rows();
    if let Some(k) = hold.iter().position(|h| !(*h > 0.0 && h.is_finite())) {
        return Err(Error::InvalidInput(format!("state {k} has holding time {}", hold[k])));
    }
    let class = recurrent_class(pc);
    let k = class.len();
    let mut a = Matrix::zeros(k, k);
    for (r, &sr) in class.iter().enumerate() {
        for (c, &sc) in class.iter().enumerate() {
            a[(r, c)] = pc[(sc, sr)] / hold[sc];
        }
        a[(r, r)] -= 1.0 / hold[sr];
    }
    for c in 0..k {
        a[(k - 1, c)] = 1.0;
    }
    let mut b = vec![0.0; k];
    b[k - 1] = 1.0;
    let x = lu_solve(&a, &b, "limiting probabilities")?;
    let mut pi = vec![0.0; s];
    for (r, &sr) in class.iter().enumerate() {
        pi[sr] = x[r].max(0.0);
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    let transient = (0..s).filter(|j| !class.contains(j)).collect();
    Ok((pi, transient))
}

/// Builds the chain, its holding times and its limiting distribution.
pub fn solve_chain(
    p_zone: &Matrix,
    rates: &SuccessRates,
    w_idle: &[f64],
    t_g: &[f64],
    w_dg: &[f64],
    tbar_g: &[f64],
) -> Result<CtmcSolution> {
    let capacity = rates.capacity();
    let transitions = build_transitions(p_zone, rates)?;
    let hold = holding_times(&transitions, w_idle, t_g, w_dg, tbar_g, capacity);
    let (pi, transient) = limiting_probabilities(&transitions, &hold)?;
    Ok(CtmcSolution { zones: p_zone.rows(), capacity, transitions, hold, pi, transient })
}

/// Idle drivers per zone able to take a flexible pick-up.
pub fn flexible_pickup_supply(idle: &[f64], sol: &CtmcSolution, rates: &SuccessRates) -> Vec<f64> {
    (0..sol.zones)
        .map(|z| {
            let cond = sol.conditional(z);
            idle[z] * cond.iter().zip(&rates.pick[z]).map(|(c, p)| c * p).sum::<f64>()
        })
        .collect()
}

/// Right side of the effective idle supply fixed point for one zone:
/// `N - t_g Σ_j λ_ji - N (π(i,Ca)/Σπ(i,·)) (1 - p_flex^Ca)`.
pub fn effective_idle_rhs(idle: f64, t_g: f64, inbound_flex: f64, cond_full: f64, dest_share: f64, capacity: usize) -> f64 {
    idle - t_g * inbound_flex - idle * cond_full * (1.0 - p_flex(dest_share, capacity))
}

/// Settings of the effective idle supply fixed-point solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointConfig {
    pub damping: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self { damping: 0.5, max_iter: 500, tol: 1e-8 }
    }
}

/// Outcome of the fixed-point solve.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointResult {
    pub value: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub used_bisection: bool,
}

/// Solves `x = rhs(x)` on the box `[0, upper]` by damped Picard iteration,
/// falling back to cyclic per-zone bisection on `x_i - rhs_i(x)`.
pub fn solve_idle_fixed_point<F>(rhs: F, upper: &[f64], start: &[f64], cfg: FixedPointConfig) -> Result<FixedPointResult>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let m = upper.len();
    let clamp = |v: f64, i: usize| v.clamp(0.0, upper[i]);
    let residual_of = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let r = rhs(x)?;
        let res = x.iter().zip(&r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        Ok((res, r))
    };
    let mut x: Vec<f64> = start.iter().enumerate().map(|(i, &v)| clamp(v, i)).collect();
    let mut iterations = 0;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..cfg.max_iter {
        iterations += 1;
        let (res, r) = residual_of(&x)?;
        if best.as_ref().map_or(true, |(b, _)| res < *b) {
            best = Some((res, x.clone()));
        }
        if res <= cfg.tol {
            return Ok(FixedPointResult { value: x, residual: res, iterations, used_bisection: false });
        }
        for i in 0..m {
            x[i] = clamp((1.0 - cfg.damping) * x[i] + cfg.damping * r[i], i);
        }
    }

    // Picard stalled: cyclic coordinate bisection. Each coordinate residual
    // is nonpositive at 0 when the existence condition holds and
    // nonnegative at the upper bound.
    let mut x = best.map(|(_, v)| v).unwrap_or(x);
    for sweep in 0..cfg.max_iter {
        for i in 0..m {
            let g = |v: f64, x: &mut Vec<f64>| -> Result<f64> {
                x[i] = v;
                let r = rhs(x)?;
                Ok(v - r[i])
            };
            let (mut lo, mut hi) = (0.0, upper[i]);
            let glo = g(lo, &mut x)?;
            if glo >= 0.0 {
                x[i] = lo;
                continue;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if g(mid, &mut x)? < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let glo = g(lo, &mut x)?;
            let ghi = g(hi, &mut x)?;
            x[i] = if glo.abs() <= ghi.abs() { lo } else { hi };
        }
        let (res, _) = residual_of(&x)?;
        iterations += 1;
        if res <= cfg.tol {
            return Ok(FixedPointResult { value: x, residual: res, iterations, used_bisection: true });
        }
        if sweep > 50 && m == 1 {
            break;
        }
    }
    let (res, _) = residual_of(&x)?;
    Err(Error::NoConvergence { what: "effective idle supply", residual: res, iterations })
}

/// Dispatch wait `w` solving `w = p_pick(w) N̄ / out` on the bracket `[0, N̄/out]`.
///
/// `pick(w)` must be nonincreasing in `w`. Returns `+∞` when there is no
/// flexible outflow from the zone.
pub fn pickup_wait<P>(nbar: f64, outflow: f64, pick: P) -> f64
where
    P: Fn(f64) -> f64,
{
    if !(outflow > 0.0) {
        return f64::INFINITY;
    }
    let k = nbar.max(0.0) / outflow;
    let g = |w: f64| w - pick(w) * k;
    let (mut lo, mut hi) = (0.0, k);
    let (mut glo, mut ghi) = (g(lo), g(hi));
    if glo >= 0.0 {
        return lo;
    }
    if ghi <= 0.0 {
        return hi;
    }
    // Illinois regula falsi on a bracket that always contains the root.
    let mut side = 0i8;
    for _ in 0..200 {
        let mut w = (lo * ghi - hi * glo) / (ghi - glo);
        if !(w > lo && w < hi) {
            w = 0.5 * (lo + hi);
        }
        let gw = g(w);
        if gw == 0.0 {
            return w;
        }
        if gw < 0.0 {
            lo = w;
            glo = gw;
            if side == -1 {
                ghi *= 0.5;
            }
            side = -1;
        } else {
            hi = w;
            ghi = gw;
            if side == 1 {
                glo *= 0.5;
            }
            side = 1;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    let (a, b) = (g(lo), g(hi));
    if a.abs() <= b.abs() {
        lo
    } else {
        hi
    }
}
