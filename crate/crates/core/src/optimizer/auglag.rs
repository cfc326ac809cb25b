//! Augmented Lagrangian for `min f(x)` subject to `h(x) = 0` and a box.

use super::boxqn::{minimize, QnConfig};

/// The penalty grows only when a round fails to cut the violation by this factor.
const SUFFICIENT_DECREASE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlConfig {
    pub mu0: f64,
    pub growth: f64,
    pub max_outer: usize,
    /// Constraint tolerance (max norm of `h`) for early exit.
    pub tol: f64,
    pub inner: QnConfig,
}

impl Default for AlConfig {
    fn default() -> Self {
        Self { mu0: 10.0, growth: 10.0, max_outer: 8, tol: 1e-6, inner: QnConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub violation: f64,
    pub rounds: usize,
    pub iterations: usize,
    pub evaluations: usize,
    pub multipliers: Vec<f64>,
}

/// What the caller wants after a round.
#[derive(Debug, Clone, PartialEq)]
pub enum Next {
    Continue,
    Restart(Vec<f64>),
    Stop,
}

/// Runs the outer loop. `eval` returns `(f, h)` or `None` when `x` is
/// infeasible. After every round `after_round` sees the iterate and may
/// replace it or stop the loop.
pub fn solve<E, R>(
    mut eval: E,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    typical: &[f64],
    cfg: &AlConfig,
    mut after_round: R,
) -> AlResult
where
    E: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
    R: FnMut(&[f64], usize) -> Next,
{
    let mut x = x0.to_vec();
    let mut lambda: Vec<f64> = match eval(&x) {
        Some((_, h)) => vec![0.0; h.len()],
        None => Vec::new(),
    };
    let mut mu = cfg.mu0;
    let mut iterations = 0;
    let mut evaluations = 0;
    let mut rounds = 0;
    let mut last_f = f64::INFINITY;
    let mut last_viol = f64::INFINITY;
    for round in 0..cfg.max_outer {
        rounds = round + 1;
        let merit = |v: &[f64]| -> f64 {
            match eval(v) {
                Some((f, h)) => {
                    if lambda.len() != h.len() {
                        return f64::INFINITY;
                    }
                    let pen: f64 = h.iter().zip(&lambda).map(|(hk, lk)| -lk * hk + 0.5 * mu * hk * hk).sum();
                    f + pen
                }
                None => f64::INFINITY,
            }
        };
        let r = minimize(merit, &x, lo, hi, typical, &cfg.inner);
        iterations += r.iterations;
        evaluations += r.evaluations;
        x = r.x;
        let Some((f, h)) = eval(&x) else { break };
        let viol = h.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (lk, hk) in lambda.iter_mut().zip(&h) {
            *lk -= mu * hk;
        }
        match after_round(&x, round) {
            Next::Continue => {}
            Next::Restart(next) => x = next,
            Next::Stop => break,
        }
        if viol <= cfg.tol && (last_f - f).abs() <= 1e-9 * f.abs().max(1.0) {
            break;
        }
        last_f = f;
        if viol > cfg.tol && viol > SUFFICIENT_DECREASE * last_viol {
            mu *= cfg.growth;
        }
        last_viol = viol;
    }
    let (f, violation) = match eval(&x) {
        Some((f, h)) => (f, h.iter().fold(0.0f64, |a, v| a.max(v.abs()))),
        None => (f64::INFINITY, f64::INFINITY),
    };
    AlResult { x, f, violation, rounds, iterations, evaluations, multipliers: lambda }
}
