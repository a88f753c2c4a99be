//! Feature-selection thresholds. All returned index sets are 0-based and
//! ascending; logarithms are natural.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionRule {
    /// Gaussian maximal inequality with known `ω_jj`.
    KnownCovMaximal,
    /// `√(ln n · ln p / n)`.
    IseeRate,
    /// Gaussian maximal inequality with ISEE estimates of `ω_jj`.
    IseeMaximal,
}

/// `√(2 ω n ln(2p)) / √(n1 n2)`.
pub fn maximal_threshold(omega: f64, n: usize, p: usize, n1: usize, n2: usize) -> f64 {
    (2.0 * omega * n as f64 * (2.0 * p as f64).ln()).sqrt() / ((n1 as f64) * (n2 as f64)).sqrt()
}

/// `√(ln n · ln p / n)`.
pub fn rate_threshold(n: usize, p: usize) -> f64 {
    ((n as f64).ln() * (p as f64).ln() / n as f64).sqrt()
}

/// `{ j : |β̂_j| > √(2 ω_jj n ln(2p)) / √(n1 n2) }`.
pub fn select_known_cov(
    beta_hat: &DVector<f64>,
    omega_diag: &DVector<f64>,
    n: usize,
    p: usize,
    n1: usize,
    n2: usize,
) -> Result<Vec<usize>> {
    if beta_hat.len() != omega_diag.len() {
        return Err(Error::arg("beta_hat and omega_diag lengths differ"));
    }
    if n1 == 0 || n2 == 0 || n1 + n2 != n {
        return Err(Error::arg(format!("cluster sizes {n1} + {n2} must be positive and sum to n = {n}")));
    }
    if let Some(w) = omega_diag.iter().find(|&&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::arg(format!("precision diagonal entry {w} is not positive")));
    }
    Ok(beta_hat
        .iter()
        .zip(omega_diag.iter())
        .enumerate()
        .filter(|(_, (b, &w))| b.abs() > maximal_threshold(w, n, p, n1, n2))
        .map(|(j, _)| j)
        .collect())
}

/// `{ j : |Δμ̃_j| > √(ln n · ln p / n) }`.
pub fn select_isee(mu_diff: &DVector<f64>, n: usize, p: usize) -> Result<Vec<usize>> {
    if n < 2 || p < 2 {
        return Err(Error::arg(format!("rate threshold needs n, p >= 2, got n = {n}, p = {p}")));
    }
    let t = rate_threshold(n, p);
    Ok(mu_diff.iter().enumerate().filter(|(_, d)| d.abs() > t).map(|(j, _)| j).collect())
}

/// [`select_known_cov`] with estimated precision diagonals.
pub fn select_isee_maximal(
    mu_diff: &DVector<f64>,
    omega_diag: &DVector<f64>,
    n: usize,
    p: usize,
    n1: usize,
    n2: usize,
) -> Result<Vec<usize>> {
    select_known_cov(mu_diff, omega_diag, n, p, n1, n2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_cov_threshold_example() {
        let t = maximal_threshold(1.0, 200, 1000, 100, 100);
        let oracle = (2.0f64 * 200.0 * 2000f64.ln()).sqrt() / 100.0;
        assert!((t - oracle).abs() < 1e-15);
        assert!((t - 0.55139).abs() < 5e-6);
        let beta = DVector::from_vec(vec![0.6, 0.5, -0.6]);
        let omega = DVector::from_element(3, 1.0);
        assert_eq!(select_known_cov(&beta, &omega, 200, 1000, 100, 100).unwrap(), vec![0, 2]);
    }

    #[test]
    fn zero_effect_selects_nothing() {
        let z = DVector::zeros(5);
        let w = DVector::from_element(5, 1.0);
        assert!(select_known_cov(&z, &w, 10, 5, 5, 5).unwrap().is_empty());
        assert!(select_isee(&z, 10, 5).unwrap().is_empty());
        assert!(select_isee_maximal(&z, &w, 10, 5, 5, 5).unwrap().is_empty());
    }

    #[test]
    fn doubling_omega_scales_threshold() {
        let t1 = maximal_threshold(1.0, 200, 1000, 100, 100);
        let t2 = maximal_threshold(2.0, 200, 1000, 100, 100);
        assert!((t2 / t1 - 2f64.sqrt()).abs() < 1e-14);
        let beta = DVector::from_vec(vec![0.6]);
        assert_eq!(select_known_cov(&beta, &DVector::from_element(1, 1.0), 200, 1000, 100, 100).unwrap(), vec![0]);
        assert!(select_known_cov(&beta, &DVector::from_element(1, 2.0), 200, 1000, 100, 100).unwrap().is_empty());
    }

    #[test]
    fn rate_threshold_example() {
        let t = rate_threshold(500, 400);
        assert!((t - (500f64.ln() * 400f64.ln() / 500.0).sqrt()).abs() < 1e-15);
        assert!((t - 0.27289).abs() < 5e-6);
        let mut d = DVector::zeros(6);
        d[3] = 10.0;
        assert_eq!(select_isee(&d, 500, 6).unwrap(), vec![3]);
    }

    #[test]
    fn rate_threshold_vanishes() {
        let d = DVector::from_element(3, 0.05);
        assert!(select_isee(&d, 100, 3).unwrap().is_empty());
        assert_eq!(select_isee(&d, 10_000_000, 3).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn maximal_with_unit_omega_matches_known() {
        let d = DVector::from_vec(vec![0.1, 0.9, -0.7, 0.3]);
        let w = DVector::from_element(4, 1.0);
        assert_eq!(
            select_isee_maximal(&d, &w, 60, 4, 20, 40).unwrap(),
            select_known_cov(&d, &w, 60, 4, 20, 40).unwrap()
        );
    }

    #[test]
    fn preconditions() {
        let d = DVector::from_element(2, 1.0);
        assert!(select_known_cov(&d, &DVector::from_element(2, 1.0), 10, 2, 4, 4).is_err());
        assert!(select_known_cov(&d, &DVector::from_element(2, 0.0), 10, 2, 5, 5).is_err());
        assert!(select_isee(&d, 1, 2).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn monotone_in_effect(
                beta in proptest::collection::vec(-2.0f64..2.0, 1..30),
                j in 0usize..30,
                bump in 0.0f64..1.0,
            ) {
                let p = beta.len();
                let j = j % p;
                let w = DVector::from_element(p, 1.0);
                let b = DVector::from_vec(beta);
                let before = select_known_cov(&b, &w, 40, p, 20, 20).unwrap();
                let mut b2 = b.clone();
                b2[j] += bump * b2[j].signum();
                let after = select_known_cov(&b2, &w, 40, p, 20, 20).unwrap();
                if before.contains(&j) {
                    prop_assert!(after.contains(&j));
                }
                prop_assert!(after.windows(2).all(|w| w[0] < w[1]));
            }

            #[test]
            fn larger_threshold_never_adds(
                beta in proptest::collection::vec(-2.0f64..2.0, 1..30),
                scale in 1.0f64..4.0,
            ) {
                let p = beta.len();
                let b = DVector::from_vec(beta);
                let small = select_known_cov(&b, &DVector::from_element(p, 1.0), 40, p, 20, 20).unwrap();
                let big = select_known_cov(&b, &DVector::from_element(p, scale), 40, p, 20, 20).unwrap();
                prop_assert!(big.iter().all(|j| small.contains(j)));
            }
        }
    }
}
