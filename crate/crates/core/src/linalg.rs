//! Dense LU solves backed by nalgebra, with an explicit singularity check.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Relative pivot magnitude below which a system is treated as singular.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Solves `a x = b` by LU with partial pivoting.
pub fn lu_solve(a: &Matrix, b: &[f64], context: &str) -> Result<Vec<f64>> {
    let n = a.rows();
    debug_assert!(a.is_square() && b.len() == n);
    if n == 0 {
        return Ok(Vec::new());
    }
    let dm = DMatrix::from_row_slice(n, n, a.as_slice());
    let scale = dm.amax().max(f64::MIN_POSITIVE);
    let lu = dm.lu();
    let u = lu.u();
    let pivot = (0..n).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if !(pivot > PIVOT_TOLERANCE * scale) {
        return Err(Error::SingularChain { context: context.to_string(), pivot });
    }
    let x = lu
        .solve(&DVector::from_column_slice(b))
        .ok_or_else(|| Error::SingularChain { context: context.to_string(), pivot })?;
    Ok(x.iter().copied().collect())
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        1.0
    } else if x == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let x = lu_solve(&a, &[3.0, 5.0], "test").unwrap();
        assert!((x[0] - 0.8).abs() < 1e-12 && (x[1] - 1.4).abs() < 1e-12);
    }

    #[test]
    fn flags_singular() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(lu_solve(&a, &[1.0, 1.0], "s"), Err(Error::SingularChain { .. })));
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert!((std_normal_cdf(0.0) - 0.5).abs() < 1e-15);
        let v = std_normal_cdf(1.959963984540054);
        assert!((v - 0.975).abs() < 1e-11, "{v}");
        assert_eq!(std_normal_cdf(f64::INFINITY), 1.0);
    }
}
