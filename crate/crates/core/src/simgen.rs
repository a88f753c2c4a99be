//! Synthetic symmetric two-cluster Gaussian mixtures.
//!
//! Observations `1..n/2` are drawn from `N(+μ, Σ)` and the rest from
//! `N(−μ, Σ)`. The discriminating direction `β = Ω μ` has equal-magnitude
//! entries on the first `s` coordinates and the magnitude is set so that the
//! Mahalanobis distance between the two centres, `2 √(μᵀ Ω μ)`, equals the
//! requested separation.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Assignment, CovarianceModel, Dataset};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// `Σ = I_p`.
    Isotropic,
    /// Tridiagonal precision with unit diagonal and `ρ` off the diagonal.
    ChainPrecision,
    /// `Σ_ij = ρ^|i−j|`.
    Ar1Covariance,
}

fn default_s() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub p: usize,
    pub n: usize,
    #[serde(default = "default_s")]
    pub s: usize,
    pub separation: f64,
    #[serde(default)]
    pub rho: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn isotropic(p: usize, n: usize, separation: f64, seed: u64) -> Self {
        ScenarioSpec { scenario: Scenario::Isotropic, p, n, s: 10.min(p), separation, rho: 0.0, seed }
    }

    pub fn chain(p: usize, n: usize, rho: f64, separation: f64, seed: u64) -> Self {
        ScenarioSpec { scenario: Scenario::ChainPrecision, p, n, s: 10.min(p), separation, rho, seed }
    }

    pub fn ar1(p: usize, n: usize, rho: f64, separation: f64, seed: u64) -> Self {
        ScenarioSpec { scenario: Scenario::Ar1Covariance, p, n, s: 10.min(p), separation, rho, seed }
    }

    /// Structural checks; positive definiteness of the chain precision is
    /// verified in [`make_covariance`].
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::Spec("p must be positive".into()));
        }
        if self.s == 0 || self.s > self.p {
            return Err(Error::Spec(format!("support size s = {} must lie in 1..={}", self.s, self.p)));
        }
        if self.n < 4 || self.n % 2 != 0 {
            return Err(Error::Spec(format!("n = {} must be even and at least 4", self.n)));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::Spec("separation must be finite and non-negative".into()));
        }
        if self.scenario != Scenario::Isotropic && !(self.rho.abs() < 1.0) {
            return Err(Error::Spec(format!("rho = {} must lie in (-1, 1)", self.rho)));
        }
        Ok(())
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.s).collect()
    }
}

pub fn make_covariance(spec: &ScenarioSpec) -> Result<CovarianceModel> {
    spec.validate()?;
    let p = spec.p;
    match spec.scenario {
        Scenario::Isotropic => Ok(CovarianceModel::identity(p)),
        Scenario::ChainPrecision => {
            let omega = DMatrix::from_fn(p, p, |i, j| {
                if i == j {
                    1.0
                } else if i.abs_diff(j) == 1 {
                    spec.rho
                } else {
                    0.0
                }
            });
            let min_eig = linalg::min_eigenvalue(&omega)?;
            if min_eig <= 0.0 {
                return Err(Error::Spec(format!(
                    "chain precision with rho = {} and p = {p} is not positive definite (min eigenvalue {min_eig:e})",
                    spec.rho
                )));
            }
            Ok(CovarianceModel::Precision(omega))
        }
        Scenario::Ar1Covariance => {
            let sigma = DMatrix::from_fn(p, p, |i, j| spec.rho.powi(i.abs_diff(j) as i32));
            Ok(CovarianceModel::Covariance(sigma))
        }
    }
}

/// Returns `(μ, β)` for the `+μ` cluster.
pub fn make_centers(spec: &ScenarioSpec, cov: &CovarianceModel) -> Result<(DVector<f64>, DVector<f64>)> {
    spec.validate()?;
    if cov.dim() != spec.p {
        return Err(Error::Spec(format!("covariance has dimension {} but p = {}", cov.dim(), spec.p)));
    }
    let s = spec.s;
    // β = b·1_S, μ = Σβ, and μᵀΩμ = βᵀΣβ = b²·1ᵀ Σ_SS 1.
    let (mu_unit, quad) = match cov {
        CovarianceModel::IdentityScaled { p, sigma2 } => {
            let mut mu = DVector::zeros(*p);
            mu.rows_mut(0, s).fill(*sigma2);
            (mu, sigma2 * s as f64)
        }
        _ => {
            let sigma = cov.covariance()?;
            let mu = sigma.columns(0, s).column_sum();
            let quad = mu.rows(0, s).sum();
            (mu, quad)
        }
    };
    if !(quad > 0.0) {
        return Err(Error::Spec("support block of the covariance is degenerate".into()));
    }
    let b = spec.separation / (2.0 * quad.sqrt());
    let mut beta = DVector::zeros(spec.p);
    beta.rows_mut(0, s).fill(b);
    Ok((mu_unit * b, beta))
}

/// Draws the dataset for `spec`; identical seeds give bit-identical data.
pub fn generate(spec: &ScenarioSpec) -> Result<Dataset> {
    let cov = make_covariance(spec)?;
    let (mu, _) = make_centers(spec, &cov)?;
    let (p, n) = (spec.p, spec.n);
    let chol = match &cov {
        CovarianceModel::IdentityScaled { sigma2, .. } => Factor::Scaled(sigma2.sqrt()),
        _ => Factor::Lower(
            linalg::cholesky_lower(&cov.covariance()?)
                .map_err(|e| Error::Spec(format!("covariance factorization failed: {e}")))?,
        ),
    };
    let mut rng = rng::rng_from_seed(spec.seed);
    let mut x = DMatrix::zeros(p, n);
    let mut z = DVector::zeros(p);
    for i in 0..n {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let noise = match &chol {
            Factor::Scaled(sd) => &z * *sd,
            Factor::Lower(l) => l * &z,
        };
        let sign = if i < n / 2 { 1.0 } else { -1.0 };
        x.set_column(i, &(noise + &mu * sign));
    }
    let mut ds = Dataset::new(x, Some(Assignment::halves(n)))?;
    ds.gen = Some(spec.clone());
    Ok(ds)
}

enum Factor {
    Scaled(f64),
    Lower(DMatrix<f64>),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_precision_example() {
        let spec = ScenarioSpec::chain(3, 10, 0.45, 1.0, 0);
        let CovarianceModel::Precision(om) = make_covariance(&spec).unwrap() else { panic!() };
        let want = DMatrix::from_row_slice(3, 3, &[1.0, 0.45, 0.0, 0.45, 1.0, 0.45, 0.0, 0.45, 1.0]);
        assert_eq!(om, want);
    }

    #[test]
    fn isotropic_and_ar1_examples() {
        let spec = ScenarioSpec::isotropic(5, 10, 1.0, 0);
        let cov = make_covariance(&spec).unwrap();
        assert_eq!(cov.covariance().unwrap(), DMatrix::identity(5, 5));

        let spec = ScenarioSpec::ar1(3, 10, 0.5, 1.0, 0);
        let CovarianceModel::Covariance(sig) = make_covariance(&spec).unwrap() else { panic!() };
        let want = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.25, 0.5, 1.0, 0.5, 0.25, 0.5, 1.0]);
        assert_eq!(sig, want);
    }

    #[test]
    fn chain_not_positive_definite_is_rejected() {
        // 1/(2 cos(π/4)) ≈ 0.7071 for p = 3
        let spec = ScenarioSpec::chain(3, 10, 0.72, 1.0, 0);
        assert!(matches!(make_covariance(&spec), Err(Error::Spec(_))));
        let spec = ScenarioSpec::chain(3, 10, 0.70, 1.0, 0);
        assert!(make_covariance(&spec).is_ok());
    }

    #[test]
    fn centers_examples() {
        let spec = ScenarioSpec { s: 10, ..ScenarioSpec::isotropic(20, 10, 5.0, 0) };
        let cov = make_covariance(&spec).unwrap();
        let (mu, beta) = make_centers(&spec, &cov).unwrap();
        let want = 5.0 / (2.0 * 10f64.sqrt());
        for j in 0..20 {
            let w = if j < 10 { want } else { 0.0 };
            assert!((mu[j] - w).abs() < 1e-15);
            assert!((beta[j] - w).abs() < 1e-15);
        }
        assert!((want - 0.7906).abs() < 1e-4);

        let spec = ScenarioSpec { s: 1, ..ScenarioSpec::isotropic(4, 10, 2.0, 0) };
        let (mu, _) = make_centers(&spec, &make_covariance(&spec).unwrap()).unwrap();
        assert_eq!(mu.as_slice(), &[1.0, 0.0, 0.0, 0.0]);

        let spec = ScenarioSpec { s: 2, ..ScenarioSpec::chain(3, 10, 0.0, 2.0, 0) };
        let (mu, _) = make_centers(&spec, &make_covariance(&spec).unwrap()).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert!((mu[0] - h).abs() < 1e-15 && (mu[1] - h).abs() < 1e-15 && mu[2] == 0.0);
    }

    #[test]
    fn centers_hit_requested_mahalanobis_separation() {
        for spec in [
            ScenarioSpec::chain(30, 10, 0.45, 4.0, 0),
            ScenarioSpec::ar1(30, 10, 0.5, 3.0, 0),
        ] {
            let cov = make_covariance(&spec).unwrap();
            let (mu, beta) = make_centers(&spec, &cov).unwrap();
            let omega = cov.precision().unwrap();
            let delta = 2.0 * (mu.transpose() * &omega * &mu)[(0, 0)].sqrt();
            assert!((delta - spec.separation).abs() < 1e-10);
            assert!((&omega * &mu - &beta).amax() < 1e-10);
            let b0 = beta[0];
            assert!(beta.iter().take(10).all(|&b| (b - b0).abs() < 1e-15));
            assert!(beta.iter().skip(10).all(|&b| b == 0.0));
        }
    }

    #[test]
    fn chain_sigma_reinverts_to_omega() {
        let spec = ScenarioSpec::chain(40, 10, 0.45, 4.0, 0);
        let cov = make_covariance(&spec).unwrap();
        let sigma = cov.covariance().unwrap();
        let back = linalg::spd_inverse(&sigma).unwrap();
        assert!((back - cov.precision().unwrap()).norm() < 1e-8);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = ScenarioSpec::chain(12, 20, 0.3, 3.0, 42);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.x, b.x);
        let c = generate(&ScenarioSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn zero_separation_has_vanishing_grand_mean() {
        let spec = ScenarioSpec::isotropic(3, 20_000, 0.0, 5);
        let ds = generate(&spec).unwrap();
        let mean = ds.x.column_mean();
        // 4 sd of the sample mean
        assert!(mean.amax() < 4.0 / (20_000f64).sqrt());
    }

    #[test]
    fn cluster_means_concentrate() {
        let spec = ScenarioSpec { s: 2, ..ScenarioSpec::isotropic(2, 10_000, 4.0, 11) };
        let ds = generate(&spec).unwrap();
        let (mu, _) = make_centers(&spec, &make_covariance(&spec).unwrap()).unwrap();
        let first: Vec<usize> = (0..5000).collect();
        let second: Vec<usize> = (5000..10_000).collect();
        let m1 = linalg::column_mean(&ds.x, &first);
        let m2 = linalg::column_mean(&ds.x, &second);
        // 3σ/√(n/2) ≈ 0.042 < 0.05
        assert!((m1 - &mu).amax() < 0.05);
        assert!((m2 + &mu).amax() < 0.05);
    }

    #[test]
    fn empirical_noise_covariance_converges() {
        let spec = ScenarioSpec::ar1(8, 4000, 0.5, 3.0, 3);
        let cov = make_covariance(&spec).unwrap();
        let (mu, _) = make_centers(&spec, &cov).unwrap();
        let ds = generate(&spec).unwrap();
        let mut centred = ds.x.clone();
        for i in 0..spec.n {
            let sign = if i < spec.n / 2 { 1.0 } else { -1.0 };
            let c = centred.column(i) - &mu * sign;
            centred.set_column(i, &c);
        }
        let emp = &centred * centred.transpose() / spec.n as f64;
        let err = (emp - cov.covariance().unwrap()).norm();
        assert!(err <= 5.0 * spec.p as f64 / (spec.n as f64).sqrt(), "err = {err}");
    }

    #[test]
    fn spec_json_roundtrip_uses_field_names() {
        let spec = ScenarioSpec::chain(100, 500, 0.45, 4.0, 9);
        let js = serde_json::to_value(&spec).unwrap();
        assert_eq!(js["scenario"], "chain-precision");
        for key in ["p", "n", "s", "separation", "rho", "seed"] {
            assert!(js.get(key).is_some(), "missing {key}");
        }
        let back: ScenarioSpec = serde_json::from_value(js).unwrap();
        assert_eq!(back, spec);
    }
}
