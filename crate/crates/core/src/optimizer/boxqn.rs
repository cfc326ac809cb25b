//! Projected quasi-Newton minimization over a box.
//!
//! Variables are mapped to the unit cube, or scaled by their typical
//! magnitudes when the box widths differ by orders of magnitude. The search direction is an
//! inverse-BFGS step restricted to the coordinates not pinned at a bound,
//! followed by a projected Armijo backtracking search. Non-finite objective
//! values are rejected by the line search.

use super::gradient;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QnConfig {
    pub max_iter: usize,
    /// Stop when the projected gradient (unit-cube coordinates) falls below
    /// `grad_tol * (1 + |f|)`.
    pub grad_tol: f64,
    /// Stop after several consecutive iterations with relative decrease below this.
    pub f_tol: f64,
    /// Relative finite-difference step.
    pub fd_rel: f64,
    /// Scale coordinates by typical magnitude instead of box width.
    pub typical_scaling: bool,
}

impl Default for QnConfig {
    fn default() -> Self {
        Self { max_iter: 200, grad_tol: 1e-8, f_tol: 1e-10, fd_rel: 1e-5, typical_scaling: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QnResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

struct Cube<'a> {
    lo: &'a [f64],
    width: Vec<f64>,
}

impl Cube<'_> {
    fn to_x(&self, u: &[f64]) -> Vec<f64> {
        u.iter().enumerate().map(|(k, v)| self.lo[k] + v * self.width[k]).collect()
    }
}

/// Minimizes `f` over `[lo, hi]` starting from `x0` (projected into the box).
pub fn minimize<F>(mut f: F, x0: &[f64], lo: &[f64], hi: &[f64], typical: &[f64], cfg: &QnConfig) -> QnResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let width: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| (b - a).max(f64::MIN_POSITIVE)).collect();
    let cube = if cfg.typical_scaling {
        Cube { lo, width: (0..n).map(|k| typical[k].abs().min(width[k]).max(f64::MIN_POSITIVE)).collect() }
    } else {
        Cube { lo, width: width.clone() }
    };
    let ub: Vec<f64> = (0..n).map(|k| width[k] / cube.width[k]).collect();
    let mut evaluations = 0usize;
    let mut fu = |u: &[f64]| {
        evaluations += 1;
        let v = f(&cube.to_x(u));
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut u: Vec<f64> = (0..n).map(|k| ((x0[k] - lo[k]) / cube.width[k]).clamp(0.0, ub[k])).collect();
    let zeros = vec![0.0; n];
    let mut fx = fu(&u);
    if !fx.is_finite() {
        return QnResult { x: cube.to_x(&u), f: fx, iterations: 0, evaluations: 1, converged: false };
    }
    // Steps are defined relative to the original coordinates.
    let grad = |fu: &mut dyn FnMut(&[f64]) -> f64, u: &[f64], fx: f64| {
        let x = cube.to_x(u);
        let hx = gradient::steps(&x, typical, cfg.fd_rel);
        let hu: Vec<f64> = (0..n).map(|k| hx[k] / cube.width[k]).collect();
        gradient::central(&mut |v: &[f64]| fu(v), u, fx, &hu, &zeros, &ub)
    };
    let mut g = grad(&mut fu, &u, fx);
    let mut h = vec![0.0; n * n];
    let reset = |h: &mut Vec<f64>, gamma: f64| {
        h.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..n {
            h[k * n + k] = gamma;
        }
    };
    let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let gamma0 = 0.1 / gmax.max(1e-12);
    reset(&mut h, gamma0);
    let mut fresh = true;
    let mut stall = 0;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..cfg.max_iter {
        iterations += 1;
        let pg = (0..n).map(|k| ((u[k] - g[k]).clamp(0.0, ub[k]) - u[k]).abs()).fold(0.0, f64::max);
        if pg <= cfg.grad_tol * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
        let free: Vec<bool> = (0..n).map(|k| !((u[k] <= 0.0 && g[k] > 0.0) || (u[k] >= ub[k] && g[k] < 0.0))).collect();
        let mut d = vec![0.0; n];
        for k in 0..n {
            if free[k] {
                d[k] = -(0..n).filter(|&j| free[j]).map(|j| h[k * n + j] * g[j]).sum::<f64>();
            }
        }
        let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            if fresh {
                break;
            }
            reset(&mut h, gamma0);
            fresh = true;
            continue;
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let un: Vec<f64> = (0..n).map(|k| (u[k] + alpha * d[k]).clamp(0.0, ub[k])).collect();
            let decrease: f64 = (0..n).map(|k| g[k] * (un[k] - u[k])).sum();
            let fnew = fu(&un);
            if fnew.is_finite() && fnew <= fx + 1e-4 * decrease {
                accepted = Some((un, fnew));
                break;
            }
            alpha *= 0.5;
        }
        let Some((un, fnew)) = accepted else {
            if fresh {
                break;
            }
            reset(&mut h, gamma0);
            fresh = true;
            continue;
        };
        let gn = grad(&mut fu, &un, fnew);
        let s: Vec<f64> = (0..n).map(|k| un[k] - u[k]).collect();
        let y: Vec<f64> = (0..n).map(|k| gn[k] - g[k]).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        if sy > 1e-12 * yy.sqrt() * s.iter().map(|v| v * v).sum::<f64>().sqrt() {
            if fresh {
                reset(&mut h, sy / yy);
            }
            bfgs_update(&mut h, &s, &y, sy);
            fresh = false;
        }
        let rel = (fx - fnew) / fx.abs().max(1.0);
        stall = if rel < cfg.f_tol { stall + 1 } else { 0 };
        u = un;
        fx = fnew;
        g = gn;
        if stall >= 5 {
            converged = true;
            break;
        }
    }
    QnResult { x: cube.to_x(&u), f: fx, iterations, evaluations, converged }
}

/// `H ← (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ` with `ρ = 1/(sᵀy)`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    let c = (1.0 + rho * yhy) * rho;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += c * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_interior() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let cfg = QnConfig { max_iter: 500, ..Default::default() };
        let r = minimize(f, &[-1.2, 1.0], &[-3.0, -3.0], &[3.0, 3.0], &[1.0, 1.0], &cfg);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r);
    }

    #[test]
    fn active_bound() {
        let f = |x: &[f64]| (x[0] - 5.0).powi(2) + (x[1] + 1.0).powi(2);
        let r = minimize(f, &[0.5, 0.5], &[0.0, 0.0], &[2.0, 2.0], &[1.0, 1.0], &QnConfig::default());
        assert!((r.x[0] - 2.0).abs() < 1e-9 && r.x[1].abs() < 1e-9);
    }

    #[test]
    fn infeasible_region_is_avoided() {
        let f = |x: &[f64]| if x[0] > 1.0 { f64::INFINITY } else { -x[0] };
        let r = minimize(f, &[0.0], &[0.0], &[4.0], &[1.0], &QnConfig::default());
        assert!(r.f.is_finite() && r.x[0] <= 1.0 && r.x[0] > 0.99);
    }

    #[test]
    fn infeasible_start_is_reported() {
        let r = minimize(|_: &[f64]| f64::INFINITY, &[0.5], &[0.0], &[1.0], &[1.0], &QnConfig::default());
        assert!(!r.f.is_finite() && !r.converged);
    }
}
