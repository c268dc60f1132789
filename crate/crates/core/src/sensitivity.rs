//! The `(Γ, Δ, p)` sensitivity model.
//!
//! `Γ` bounds the odds ratio between the confounded behavior policy
//! `π_b(a|x,u)` and the observed marginal `π_b(a|x)`; `Δ` bounds the odds
//! ratio between `P(x'|x,u,a)` and the observed `P̂(x'|x,a)`; `p = p(u=1)`.
//!
//! The constraint is exposed in two equivalent forms: the ratio interval
//! `[α, β]` on `π_b(a|x) / π_b(a|x,u)` used by the FQE linear program, and
//! per-entry probability intervals used by the robust solver.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityParams {
    pub gamma: f64,
    pub delta: f64,
    pub p: f64,
}

impl SensitivityParams {
    pub fn new(gamma: f64, delta: f64, p: f64) -> Result<Self> {
        if !(gamma >= 1.0 && gamma.is_finite()) {
            return Err(Error::Parameter(format!("Γ must be a finite value ≥ 1, got {gamma}")));
        }
        if !(delta >= 1.0 && delta.is_finite()) {
            return Err(Error::Parameter(format!("Δ must be a finite value ≥ 1, got {delta}")));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Parameter(format!("p must lie in [0, 1], got {p}")));
        }
        Ok(Self { gamma, delta, p })
    }

    /// Weights `(p(u=0), p(u=1))`.
    pub fn confounder_weights(&self) -> [f64; 2] {
        [1.0 - self.p, self.p]
    }
}

/// Entrywise feasible intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl IntervalBox {
    pub fn contains(&self, values: &[f64], tol: f64) -> bool {
        values
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (lo, hi))| *v >= lo - tol && *v <= hi + tol)
    }
}

/// Bounds `α ≤ π̂ / π_b(a|x,u) ≤ β` implied by a policy odds ratio of `Γ`.
pub fn alpha_beta(pi_hat: f64, gamma: f64) -> Result<(f64, f64)> {
    if !(gamma >= 1.0) {
        return Err(Error::Parameter(format!("Γ must be ≥ 1, got {gamma}")));
    }
    let alpha = pi_hat + (1.0 - pi_hat) / gamma;
    let beta = gamma + pi_hat * (1.0 - gamma);
    Ok((alpha, beta))
}

/// Probability interval for `q` when the odds of `q` may differ from the odds
/// of `q_hat` by a factor of at most `rho`. `q_hat ∈ {0, 1}` is a fixed point.
pub fn odds_interval(q_hat: f64, rho: f64) -> (f64, f64) {
    if q_hat <= 0.0 || q_hat >= 1.0 || rho == 1.0 {
        return (q_hat, q_hat);
    }
    let lo = q_hat / (q_hat + rho * (1.0 - q_hat));
    let hi = rho * q_hat / (rho * q_hat + (1.0 - q_hat));
    (lo.min(q_hat), hi.max(q_hat))
}

/// Feasible box for `π_b(·|x,u)` given the observed row `π̂(·|x)`.
pub fn policy_box(pi_hat_row: &[f64], gamma: f64) -> IntervalBox {
    entrywise(pi_hat_row, gamma)
}

/// Feasible box for `P(·|x,u,a)` given the observed row `P̂(·|x,a)`.
pub fn transition_box(p_hat_row: &[f64], delta: f64) -> IntervalBox {
    entrywise(p_hat_row, delta)
}

fn entrywise(row: &[f64], rho: f64) -> IntervalBox {
    let (lo, hi) = row.iter().map(|&q| odds_interval(q, rho)).unzip();
    IntervalBox { lo, hi }
}

/// Odds ratio `odds(q) / odds(q_hat)`, `None` when `q_hat ∈ {0, 1}`.
/// Infinite when `q = 1` against an interior `q_hat`, zero when `q = 0`.
pub fn odds_ratio(q: f64, q_hat: f64) -> Option<f64> {
    if q_hat <= 0.0 || q_hat >= 1.0 {
        return None;
    }
    let base = q_hat / (1.0 - q_hat);
    if q >= 1.0 {
        return Some(f64::INFINITY);
    }
    Some((q / (1.0 - q)) / base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn alpha_beta_values() {
        assert_eq!(alpha_beta(0.37, 1.0).unwrap(), (1.0, 1.0));
        let (a, b) = alpha_beta(0.5, 2.0).unwrap();
        assert!((a - 0.75).abs() < 1e-15 && (b - 1.5).abs() < 1e-15);
        assert!(alpha_beta(0.5, 0.9).is_err());
    }

    #[test]
    fn odds_interval_values() {
        assert_eq!(odds_interval(0.0, 7.0), (0.0, 0.0));
        assert_eq!(odds_interval(1.0, 7.0), (1.0, 1.0));
        assert_eq!(odds_interval(0.3, 1.0), (0.3, 0.3));
        let (lo, hi) = odds_interval(0.5, 3.0);
        assert!((lo - 0.25).abs() < 1e-15 && (hi - 0.75).abs() < 1e-15);
    }

    #[test]
    fn one_hot_row_is_a_point_box() {
        let b = transition_box(&[0.0, 1.0, 0.0], 50.0);
        assert_eq!(b.lo, vec![0.0, 1.0, 0.0]);
        assert_eq!(b.hi, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn policy_box_is_entrywise() {
        let b = policy_box(&[0.5, 0.0, 0.5], 3.0);
        assert!((b.lo[0] - 0.25).abs() < 1e-15 && (b.hi[2] - 0.75).abs() < 1e-15);
        assert_eq!((b.lo[1], b.hi[1]), (0.0, 0.0));
        assert!(b.contains(&[0.5, 0.0, 0.5], 0.0));
    }

    #[test]
    fn parameter_validation() {
        assert!(SensitivityParams::new(0.5, 1.0, 0.5).is_err());
        assert!(SensitivityParams::new(1.0, 0.5, 0.5).is_err());
        assert!(SensitivityParams::new(1.0, 1.0, 1.5).is_err());
        assert!(SensitivityParams::new(2.0, 1e6, 0.5).is_ok());
    }

    #[test]
    fn ratio_and_box_forms_agree_on_grid() {
        for i in 1..20 {
            let q = i as f64 / 20.0;
            for &g in &[1.0, 1.1, 1.5, 2.0, 4.0, 10.0, 100.0] {
                let (alpha, beta) = alpha_beta(q, g).unwrap();
                let (lo, hi) = odds_interval(q, g);
                assert!((q / hi - alpha).abs() < 1e-12, "q={q} Γ={g}");
                assert!((q / lo - beta).abs() < 1e-12, "q={q} Γ={g}");
            }
        }
    }

    proptest! {
        #[test]
        fn intervals_nest_and_stay_in_unit(q in 0.0f64..=1.0, r1 in 1.0f64..50.0, dr in 0.0f64..50.0) {
            let (lo1, hi1) = odds_interval(q, r1);
            let (lo2, hi2) = odds_interval(q, r1 + dr);
            prop_assert!(lo2 <= lo1 + 1e-15 && hi2 >= hi1 - 1e-15);
            prop_assert!(lo1 <= q && q <= hi1);
            prop_assert!((0.0..=1.0).contains(&lo2) && (0.0..=1.0).contains(&hi2));
        }

        #[test]
        fn interval_endpoints_have_extreme_odds(q in 0.01f64..0.99, rho in 1.0f64..30.0) {
            let (lo, hi) = odds_interval(q, rho);
            prop_assert!((odds_ratio(hi, q).unwrap() - rho).abs() < 1e-9 * rho);
            prop_assert!((odds_ratio(lo, q).unwrap() - 1.0 / rho).abs() < 1e-9);
        }
    }
}
