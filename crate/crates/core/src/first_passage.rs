//! Zone-level driver movement chain, mean first-passage times and the
//! expected delivery time of a flexible parcel under retry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::lu_solve;
use crate::matrix::Matrix;

/// Drop-off success below this is treated as never succeeding.
pub const MIN_DROP_SUCCESS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneChain {
    /// One-step transition matrix.
    pub p: Matrix,
    /// Mean transit times `s_ij = w_i + t_ij`.
    pub s: Matrix,
    /// Expected first-passage times; the diagonal holds first-return times.
    pub et: Matrix,
}

impl ZoneChain {
    pub fn new(p: Matrix, s: Matrix) -> Result<Self> {
        let et = first_passage_times(&p, &s)?;
        Ok(Self { p, s, et })
    }
}

/// Destination probabilities of the next on-demand match.
pub fn zone_transition_matrix(lambda_r: &Matrix, lambda_do: &Matrix) -> Result<Matrix> {
    let m = lambda_r.rows();
    let flow = lambda_r.add(lambda_do);
    let mut p = Matrix::zeros(m, m);
    for i in 0..m {
        let total = flow.row_sum(i);
        if !(total > 0.0) {
            return Err(Error::DegenerateZone { zone: i });
        }
        for j in 0..m {
            p[(i, j)] = flow[(i, j)] / total;
        }
    }
    Ok(p)
}

pub fn transit_times(w_idle: &[f64], t: &Matrix) -> Matrix {
    Matrix::from_fn(t.rows(), t.cols(), |i, j| w_idle[i] + t[(i, j)])
}

/// Mean first-passage times to every zone, first-return on the diagonal.
pub fn first_passage_times(p: &Matrix, s: &Matrix) -> Result<Matrix> {
    let m = p.rows();
    let b: Vec<f64> = (0..m).map(|i| p.row(i).iter().zip(s.row(i)).map(|(a, c)| a * c).sum()).collect();
    let mut et = Matrix::zeros(m, m);
    for j in 0..m {
        let others: Vec<usize> = (0..m).filter(|&k| k != j).collect();
        let k = others.len();
        let mut col = vec![0.0; m];
        if k > 0 {
            let a = Matrix::from_fn(k, k, |r, c| {
                let v = -p[(others[r], others[c])];
                if r == c {
                    1.0 + v
                } else {
                    v
                }
            });
            let rhs: Vec<f64> = others.iter().map(|&i| b[i]).collect();
            let x = lu_solve(&a, &rhs, &format!("first passage to zone {j}"))?;
            for (r, &i) in others.iter().enumerate() {
                col[i] = x[r];
            }
        }
        col[j] = b[j] + others.iter().map(|&kz| p[(j, kz)] * col[kz]).sum::<f64>();
        for i in 0..m {
            et[(i, j)] = col[i];
        }
    }
    Ok(et)
}

/// Expected flexible delivery time from pick-up in zone `i` to successful
/// drop-off in zone `j`, retrying on every return to `j`. A parcel picked up
/// in its destination zone makes its first attempt in place. Destinations
/// with drop-off success below [`MIN_DROP_SUCCESS`] get `+∞`.
pub fn flexible_delivery_time(et: &Matrix, drop_succ: &[f64]) -> Matrix {
    let m = et.rows();
    Matrix::from_fn(m, m, |i, j| {
        let p = drop_succ[j];
        if p < MIN_DROP_SUCCESS {
            return f64::INFINITY;
        }
        let retry = (1.0 - p) / p * et[(j, j)];
        if i == j {
            retry
        } else {
            et[(i, j)] + retry
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transition_examples() {
        let lr = Matrix::from_rows(&[vec![1.0, 3.0], vec![2.0, 2.0]]).unwrap();
        let p = zone_transition_matrix(&lr, &Matrix::zeros(2, 2)).unwrap();
        assert_eq!(p.to_rows(), vec![vec![0.25, 0.75], vec![0.5, 0.5]]);
        let u = zone_transition_matrix(&Matrix::filled(3, 3, 0.7), &Matrix::filled(3, 3, 0.1)).unwrap();
        assert!(u.as_slice().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let perm = Matrix::from_rows(&[vec![0.0, 2.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(zone_transition_matrix(&perm, &Matrix::zeros(2, 2)).unwrap().to_rows(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let bad = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(zone_transition_matrix(&bad, &Matrix::zeros(2, 2)), Err(Error::DegenerateZone { zone: 1 })));
    }

    #[test]
    fn transit_examples() {
        let t = Matrix::filled(2, 2, 5.0);
        assert_eq!(transit_times(&[0.0, 0.0], &t), t);
        assert!(transit_times(&[2.0, 2.0], &t).as_slice().iter().all(|v| *v == 7.0));
        let s = transit_times(&[1.0, 3.0], &t);
        assert_eq!(s.row(0), &[6.0, 6.0]);
        assert_eq!(s.row(1), &[8.0, 8.0]);
    }

    #[test]
    fn single_zone_returns_in_one_hop() {
        let et = first_passage_times(&Matrix::identity(1), &Matrix::filled(1, 1, 7.5)).unwrap();
        assert_eq!(et[(0, 0)], 7.5);
    }

    #[test]
    fn symmetric_two_zone() {
        let s = 3.0;
        let et = first_passage_times(&Matrix::filled(2, 2, 0.5), &Matrix::filled(2, 2, s)).unwrap();
        for v in et.as_slice() {
            assert!((v - 2.0 * s).abs() < 1e-12);
        }
        let td = flexible_delivery_time(&et, &[0.5, 0.5]);
        assert!((td[(0, 1)] - 4.0 * s).abs() < 1e-12);
        let td1 = flexible_delivery_time(&et, &[1.0, 1.0]);
        assert_eq!(td1[(0, 1)], et[(0, 1)]);
        assert_eq!(td1[(1, 1)], 0.0);
        assert!((td[(1, 1)] - 2.0 * s).abs() < 1e-12);
    }

    #[test]
    fn tiny_success_gives_sentinel() {
        let et = Matrix::filled(2, 2, 3.0);
        let td = flexible_delivery_time(&et, &[0.5, 1e-9]);
        assert_eq!(td[(0, 1)], f64::INFINITY);
        assert!(td[(1, 0)].is_finite());
    }

    #[test]
    fn absorbing_class_is_singular() {
        let p = Matrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.5, 0.0, 0.5]]).unwrap();
        let s = Matrix::filled(3, 3, 1.0);
        assert!(matches!(first_passage_times(&p, &s), Err(Error::SingularChain { .. })));
    }

    #[test]
    fn three_zone_against_path_expansion() {
        // Independent oracle: E[T_ij] = Σ_k over paths avoiding j, summed by
        // repeated substitution of the first-step recursion.
        let p = Matrix::from_rows(&[vec![0.2, 0.5, 0.3], vec![0.4, 0.1, 0.5], vec![0.3, 0.3, 0.4]]).unwrap();
        let s = Matrix::from_rows(&[vec![4.0, 9.0, 7.0], vec![8.0, 5.0, 6.0], vec![6.5, 7.5, 3.5]]).unwrap();
        let et = first_passage_times(&p, &s).unwrap();
        for j in 0..3 {
            let mut e = vec![0.0; 3];
            for _ in 0..2000 {
                let next: Vec<f64> = (0..3)
                    .map(|i| (0..3).map(|k| p[(i, k)] * (s[(i, k)] + if k == j { 0.0 } else { e[k] })).sum())
                    .collect();
                e = next;
            }
            for i in 0..3 {
                assert!((et[(i, j)] - e[i]).abs() < 1e-9 * e[i]);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn chain() -> impl Strategy<Value = (Matrix, Matrix)> {
            (1usize..7).prop_flat_map(|m| {
                (proptest::collection::vec(0.01f64..1.0, m * m), proptest::collection::vec(1.0f64..20.0, m * m)).prop_map(
                    move |(raw, sv)| {
                        let mut p = Matrix::from_fn(m, m, |i, j| raw[i * m + j]);
                        for i in 0..m {
                            let t = p.row_sum(i);
                            p.row_mut(i).iter_mut().for_each(|v| *v /= t);
                        }
                        (p, Matrix::from_fn(m, m, |i, j| sv[i * m + j]))
                    },
                )
            })
        }

        proptest! {
            #[test]
            fn passage_times_bounded_below((p, s) in chain(), drop in proptest::collection::vec(1e-3f64..=1.0, 6)) {
                let et = first_passage_times(&p, &s).unwrap();
                let m = p.rows();
                for i in 0..m {
                    let min_row = s.row(i).iter().cloned().fold(f64::INFINITY, f64::min);
                    for j in 0..m {
                        prop_assert!(et[(i, j)].is_finite());
                        prop_assert!(et[(i, j)] >= min_row * (1.0 - 1e-12));
                    }
                }
                let td = flexible_delivery_time(&et, &drop[..m]);
                for i in 0..m {
                    for j in 0..m {
                        prop_assert!(td[(i, j)] >= 0.0);
                        if i != j {
                            prop_assert!(td[(i, j)] >= et[(i, j)]);
                        }
                    }
                }
            }
        }
    }
}
