//! Finite-difference gradients that respect box bounds.

/// Absolute step per coordinate: `rel * max(|x|, typical)`.
pub fn steps(x: &[f64], typical: &[f64], rel: f64) -> Vec<f64> {
    x.iter().zip(typical).map(|(v, t)| rel * v.abs().max(*t)).collect()
}

/// Central differences, switching to a one-sided difference where the
/// central stencil would leave the box or hit an infeasible point.
/// Coordinates where no finite difference exists get a zero entry.
pub fn central<F>(f: &mut F, x: &[f64], fx: f64, h: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut xp = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for k in 0..x.len() {
        let up_ok = x[k] + h[k] <= hi[k];
        let down_ok = x[k] - h[k] >= lo[k];
        let mut eval = |v: f64, xp: &mut Vec<f64>| {
            xp[k] = v;
            let r = f(xp);
            xp[k] = x[k];
            r
        };
        let fp = if up_ok { eval(x[k] + h[k], &mut xp) } else { f64::NAN };
        let fm = if down_ok { eval(x[k] - h[k], &mut xp) } else { f64::NAN };
        g[k] = if fp.is_finite() && fm.is_finite() {
            (fp - fm) / (2.0 * h[k])
        } else if fp.is_finite() {
            (fp - fx) / h[k]
        } else if fm.is_finite() {
            (fx - fm) / h[k]
        } else {
            0.0
        };
    }
    g
}

/// Forward differences, used to cross-check [`central`].
pub fn forward<F>(f: &mut F, x: &[f64], fx: f64, h: &[f64]) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|k| {
            xp[k] = x[k] + h[k];
            let v = (f(&xp) - fx) / h[k];
            xp[k] = x[k];
            v
        })
        .collect()
}
