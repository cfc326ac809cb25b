//! Square-root matching law and the success probabilities of flexible
//! parcel pick-ups and drop-offs performed during idle cruising.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::std_normal_cdf;
use crate::market::DistributionSpec;
use crate::matrix::Matrix;

/// Per-zone success probabilities and their per-count tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessRates {
    pub drop_succ: Vec<f64>,
    pub pick_succ_w: Vec<f64>,
    pub pick_succ_t: Vec<f64>,
    /// `pick[i][n]`: probability the next event in state `(i, n)` is a pick-up.
    pub pick: Vec<Vec<f64>>,
    /// `drop[i][n]`: probability the next event in state `(i, n)` is a drop-off.
    pub drop: Vec<Vec<f64>>,
    /// Share of flexible parcels destined to each zone.
    pub dest_share: Vec<f64>,
}

impl SuccessRates {
    pub fn zones(&self) -> usize {
        self.drop_succ.len()
    }

    pub fn capacity(&self) -> usize {
        self.pick.first().map_or(0, |r| r.len() - 1)
    }
}

/// Square-root law `L / sqrt(N)`.
pub fn waiting_time_ondemand(l: f64, idle: f64, zone: usize) -> Result<f64> {
    if !(idle > 0.0) {
        return Err(Error::DegenerateSupply { zone, value: idle });
    }
    Ok(l / idle.sqrt())
}

/// `P(A < B)` for independent-or-correlated log-normal `A`, `B` with the
/// given means, log-scale std devs and log correlation.
pub fn lognormal_race(mean_a: f64, mean_b: f64, sigma_a: f64, sigma_b: f64, rho: f64) -> f64 {
    if mean_a == 0.0 || mean_b == f64::INFINITY {
        return 1.0;
    }
    if mean_a == f64::INFINITY || mean_b == 0.0 {
        return 0.0;
    }
    let mu_a = mean_a.ln() - 0.5 * sigma_a * sigma_a;
    let mu_b = mean_b.ln() - 0.5 * sigma_b * sigma_b;
    let var = sigma_a * sigma_a + sigma_b * sigma_b - 2.0 * rho * sigma_a * sigma_b;
    std_normal_cdf((mu_b - mu_a) / var.sqrt())
}

/// `P(A < B)` for independent exponentials with the given means.
pub fn exponential_race(mean_a: f64, mean_b: f64) -> f64 {
    if mean_a == 0.0 || mean_b == f64::INFINITY {
        return 1.0;
    }
    if mean_a == f64::INFINITY || mean_b == 0.0 {
        return 0.0;
    }
    mean_b / (mean_a + mean_b)
}

/// Probability that a drop-off of mean length `t_g` completes before the
/// next on-demand match, of mean `w_idle`.
pub fn success_drop(t_g: f64, w_idle: f64, dist: &DistributionSpec) -> f64 {
    match *dist {
        DistributionSpec::Exponential => exponential_race(t_g, w_idle),
        DistributionSpec::LogNormal { sigma_idle, sigma_dropoff, .. } => {
            lognormal_race(t_g, w_idle, sigma_dropoff, sigma_idle, 0.0)
        }
    }
}

/// Pick-up success `(p, p_w, p_t)`: the dispatch wait `w_dg` and then the
/// travel to the parcel `tbar_g` must both beat the next on-demand match.
pub fn success_pick(tbar_g: f64, w_dg: f64, w_idle: f64, dist: &DistributionSpec) -> (f64, f64, f64) {
    let (pw, pt) = match *dist {
        DistributionSpec::Exponential => (exponential_race(w_dg, w_idle), exponential_race(tbar_g, w_idle)),
        DistributionSpec::LogNormal { sigma_idle, sigma_dispatch, sigma_pickup, rho_dispatch, rho_pickup, .. } => (
            lognormal_race(w_dg, w_idle, sigma_dispatch, sigma_idle, rho_dispatch),
            lognormal_race(tbar_g, w_idle, sigma_pickup, sigma_idle, rho_pickup),
        ),
    };
    (pw * pt, pw, pt)
}

/// Probability that a driver carrying `n` parcels holds one for the current zone.
pub fn p_flex(dest_share: f64, n: usize) -> f64 {
    1.0 - (1.0 - dest_share).powi(n as i32)
}

/// Share of all flexible parcels whose destination is each zone; all zero
/// when there is no flexible demand.
pub fn dest_shares(lambda_df: &Matrix) -> Vec<f64> {
    let total = lambda_df.sum();
    (0..lambda_df.cols())
        .map(|j| if total > 0.0 { lambda_df.col_sum(j) / total } else { 0.0 })
        .collect()
}

/// Pick-up and drop-off probabilities by carried count `n = 0..=capacity`.
pub fn pick_drop_by_count(pick_succ: f64, drop_succ: f64, dest_share: f64, capacity: usize) -> (Vec<f64>, Vec<f64>) {
    let mut pick = vec![0.0; capacity + 1];
    let mut drop = vec![0.0; capacity + 1];
    for n in 0..=capacity {
        let pf = p_flex(dest_share, n);
        if n == 0 {
            pick[n] = pick_succ;
        } else {
            drop[n] = drop_succ * pf;
            if n < capacity {
                pick[n] = pick_succ * (1.0 - pf);
            }
        }
    }
    (pick, drop)
}

/// All success probabilities for a network state.
///
/// `w_dg` may be infinite for zones without flexible outflow, which disables
/// pick-ups there.
pub fn success_rates(
    w_idle: &[f64],
    t_g: &[f64],
    tbar_g: &[f64],
    w_dg: &[f64],
    lambda_df: &Matrix,
    capacity: usize,
    dist: &DistributionSpec,
) -> SuccessRates {
    let m = w_idle.len();
    let dest_share = dest_shares(lambda_df);
    let mut out = SuccessRates {
        drop_succ: Vec::with_capacity(m),
        pick_succ_w: Vec::with_capacity(m),
        pick_succ_t: Vec::with_capacity(m),
        pick: Vec::with_capacity(m),
        drop: Vec::with_capacity(m),
        dest_share,
    };
    for i in 0..m {
        let pd = success_drop(t_g[i], w_idle[i], dist);
        let (pp, pw, pt) = success_pick(tbar_g[i], w_dg[i], w_idle[i], dist);
        let (pick, drop) = pick_drop_by_count(pp, pd, out.dest_share[i], capacity);
        out.drop_succ.push(pd);
        out.pick_succ_w.push(pw);
        out.pick_succ_t.push(pt);
        out.pick.push(pick);
        out.drop.push(drop);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lognormal(s: f64) -> DistributionSpec {
        DistributionSpec::LogNormal {
            sigma_idle: s,
            sigma_dropoff: s,
            sigma_dispatch: s,
            sigma_pickup: s,
            rho_dispatch: 0.0,
            rho_pickup: 0.0,
        }
    }

    #[test]
    fn square_root_law() {
        assert!((waiting_time_ondemand(43.0, 100.0, 0).unwrap() - 4.3).abs() < 1e-12);
        let nmin = (43.0f64 / 6.0).powi(2);
        assert!((waiting_time_ondemand(43.0, nmin, 0).unwrap() - 6.0).abs() < 1e-12);
        assert!(waiting_time_ondemand(43.0, 1e30, 0).unwrap() < 1e-12);
        assert!(matches!(waiting_time_ondemand(43.0, 0.0, 3), Err(Error::DegenerateSupply { zone: 3, .. })));
    }

    #[test]
    fn drop_examples() {
        assert!((success_drop(4.0, 4.0, &DistributionSpec::Exponential) - 0.5).abs() < 1e-15);
        assert!((success_drop(4.0, 4.0, &lognormal(0.5)) - 0.5).abs() < 1e-12);
        assert_eq!(success_drop(0.0, 4.0, &DistributionSpec::Exponential), 1.0);
        assert_eq!(success_drop(0.0, 4.0, &lognormal(0.5)), 1.0);
        assert!(success_drop(1e-9, 4.0, &lognormal(0.5)) > 1.0 - 1e-12);
    }

    #[test]
    fn lognormal_drop_uses_mean_parameterization() {
        // P(T < W) with log T ~ N(ln 2 - 0.02, 0.2), log W ~ N(ln 5 - 0.5, 1):
        // Phi((ln 2.5 - 0.48) / sqrt(1.04)).
        let dist = DistributionSpec::LogNormal {
            sigma_idle: 1.0,
            sigma_dropoff: 0.2,
            sigma_dispatch: 0.5,
            sigma_pickup: 0.5,
            rho_dispatch: 0.0,
            rho_pickup: 0.0,
        };
        let expected = std_normal_cdf(((2.5f64).ln() - 0.48) / 1.04f64.sqrt());
        assert!((success_drop(2.0, 5.0, &dist) - expected).abs() < 1e-14);
    }

    #[test]
    fn pick_examples() {
        let (p, pw, pt) = success_pick(5.0, 5.0, 5.0, &DistributionSpec::Exponential);
        assert!((p - 0.25).abs() < 1e-15 && (pw - 0.5).abs() < 1e-15 && (pt - 0.5).abs() < 1e-15);
        let (p, pw, pt) = success_pick(5.0, 5.0, 5.0, &lognormal(0.5));
        assert!((p - 0.25).abs() < 1e-12 && (pw - 0.5).abs() < 1e-12 && (pt - 0.5).abs() < 1e-12);
        let (p, pw, _) = success_pick(5.0, f64::INFINITY, 5.0, &lognormal(0.5));
        assert_eq!((p, pw), (0.0, 0.0));
        assert!(success_pick(5.0, 1e12, 5.0, &lognormal(0.5)).0 < 1e-12);
    }

    #[test]
    fn flex_examples() {
        assert_eq!(p_flex(0.3, 0), 0.0);
        assert_eq!(p_flex(1.0, 3), 1.0);
        assert!((p_flex(0.25, 2) - 0.4375).abs() < 1e-15);
    }

    #[test]
    fn count_table() {
        let (pick, drop) = pick_drop_by_count(0.6, 0.8, 0.5, 3);
        assert_eq!(pick[0], 0.6);
        assert_eq!(pick[3], 0.0);
        assert_eq!(drop[0], 0.0);
        assert!((pick[1] - 0.3).abs() < 1e-15);
        assert!((drop[1] - 0.4).abs() < 1e-15);
        assert!((drop[3] - 0.8 * 0.875).abs() < 1e-15);
        let (pick, drop) = pick_drop_by_count(0.6, 0.8, 0.0, 1);
        assert_eq!(pick, vec![0.6, 0.0]);
        assert_eq!(drop, vec![0.0, 0.0]);
    }

    #[test]
    fn shares_of_empty_demand_are_zero() {
        assert_eq!(dest_shares(&Matrix::zeros(3, 3)), vec![0.0; 3]);
        let m = Matrix::from_rows(&[vec![1.0, 3.0], vec![0.0, 4.0]]).unwrap();
        assert_eq!(dest_shares(&m), vec![0.125, 0.875]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn any_dist() -> impl Strategy<Value = DistributionSpec> {
            prop_oneof![
                Just(DistributionSpec::Exponential),
                (0.1f64..1.5, 0.1f64..1.5, 0.1f64..1.5, 0.1f64..1.5, -0.9f64..0.9, -0.9f64..0.9).prop_map(
                    |(a, b, c, d, r1, r2)| DistributionSpec::LogNormal {
                        sigma_idle: a,
                        sigma_dropoff: b,
                        sigma_dispatch: c,
                        sigma_pickup: d,
                        rho_dispatch: r1,
                        rho_pickup: r2,
                    }
                ),
            ]
        }

        proptest! {
            #[test]
            fn count_probabilities_sum_below_one(pp in 0.0f64..=1.0, pd in 0.0f64..=1.0, share in 0.0f64..=1.0, ca in 1usize..6) {
                let (pick, drop) = pick_drop_by_count(pp, pd, share, ca);
                for n in 0..=ca {
                    let s = pick[n] + drop[n];
                    prop_assert!((0.0..=1.0 + 1e-15).contains(&s));
                }
                prop_assert_eq!(pick[ca], 0.0);
                prop_assert_eq!(drop[0], 0.0);
            }

            #[test]
            fn races_are_monotone(dist in any_dist(), w in 0.5f64..20.0, t in 0.5f64..20.0, u in 0.5f64..20.0) {
                let h = 1e-4;
                prop_assert!(success_drop(t, w + h, &dist) >= success_drop(t, w, &dist));
                prop_assert!(success_drop(t + h, w, &dist) <= success_drop(t, w, &dist));
                let (_, pw, pt) = success_pick(t, u, w, &dist);
                let (_, pw_w, pt_w) = success_pick(t, u, w + h, &dist);
                prop_assert!(pw_w >= pw && pt_w >= pt);
                let (_, pw_u, _) = success_pick(t, u + h, w, &dist);
                let (_, _, pt_t) = success_pick(t + h, u, w, &dist);
                prop_assert!(pw_u <= pw && pt_t <= pt);
                prop_assert!((0.0..=1.0).contains(&pw) && (0.0..=1.0).contains(&pt));
            }

            #[test]
            fn families_agree_at_symmetric_point(m in 0.1f64..50.0, s in 0.05f64..2.0) {
                prop_assert!((success_drop(m, m, &lognormal(s)) - 0.5).abs() <= 1e-12);
                prop_assert!((success_drop(m, m, &DistributionSpec::Exponential) - 0.5).abs() <= 1e-12);
            }
        }
    }
}
