//! Shared domain types and label utilities.

use itertools::Itertools;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::simgen::ScenarioSpec;

/// Largest K for which the permutation search in [`misclustering_rate`] is run.
pub const MAX_PERMUTATION_K: usize = 8;

/// Cluster labels for `n` observations. Labels are 1-based (`1..=k`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    labels: Vec<usize>,
    k: usize,
}

impl Assignment {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::arg("K must be at least 1"));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l == 0 || l > k) {
            return Err(Error::arg(format!("label {l} at position {i} is outside 1..={k}")));
        }
        Ok(Assignment { labels, k })
    }

    /// Builds an assignment from 0-based cluster ids.
    pub fn from_zero_based(ids: &[usize], k: usize) -> Result<Self> {
        Self::new(ids.iter().map(|&c| c + 1).collect(), k)
    }

    /// `n/2` observations labelled 1 followed by `n - n/2` labelled 2.
    pub fn halves(n: usize) -> Self {
        let labels = (0..n).map(|i| if i < n / 2 { 1 } else { 2 }).collect();
        Assignment { labels, k: 2 }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// 0-based id of observation `i`.
    pub fn cluster_of(&self, i: usize) -> usize {
        self.labels[i] - 1
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l - 1] += 1;
        }
        s
    }

    /// 0-based observation indices carrying the 1-based `label`.
    pub fn members(&self, label: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| (l == label).then_some(i))
            .collect()
    }

    pub fn has_empty_cluster(&self) -> bool {
        self.sizes().contains(&0)
    }

    /// Relabels clusters in order of first appearance.
    pub fn canonical(&self) -> Self {
        let mut map = vec![0usize; self.k + 1];
        let mut next = 1;
        let labels = self
            .labels
            .iter()
            .map(|&l| {
                if map[l] == 0 {
                    map[l] = next;
                    next += 1;
                }
                map[l]
            })
            .collect();
        Assignment { labels, k: self.k }
    }
}

/// Minimum over label permutations of the fraction of disagreeing labels.
pub fn misclustering_rate(a: &Assignment, b: &Assignment) -> Result<f64> {
    if a.n() != b.n() {
        return Err(Error::arg(format!("label vectors have lengths {} and {}", a.n(), b.n())));
    }
    if a.k() != b.k() {
        return Err(Error::arg(format!("assignments use K = {} and K = {}", a.k(), b.k())));
    }
    let k = a.k();
    if k > MAX_PERMUTATION_K {
        return Err(Error::arg(format!("K = {k} exceeds the supported maximum {MAX_PERMUTATION_K}")));
    }
    if a.n() == 0 {
        return Ok(0.0);
    }
    // contingency[i][j] = #{obs : a = i, b = j}
    let mut contingency = vec![vec![0usize; k]; k];
    for (&la, &lb) in a.labels.iter().zip(&b.labels) {
        contingency[la - 1][lb - 1] += 1;
    }
    let best_agree = (0..k)
        .permutations(k)
        .map(|perm| perm.iter().enumerate().map(|(i, &j)| contingency[i][j]).sum::<usize>())
        .max()
        .unwrap_or(0);
    Ok((a.n() - best_agree) as f64 / a.n() as f64)
}

/// Number of true and false positives of `selected` against `truth_support`.
/// Indices are 0-based and must lie below `p`.
pub fn selection_confusion(
    selected: &[usize],
    truth_support: &[usize],
    p: usize,
) -> Result<(usize, usize)> {
    let mut in_truth = vec![false; p];
    for &j in truth_support {
        if j >= p {
            return Err(Error::arg(format!("support index {j} out of range for p = {p}")));
        }
        in_truth[j] = true;
    }
    let mut seen = vec![false; p];
    let (mut tp, mut fp) = (0, 0);
    for &j in selected {
        if j >= p {
            return Err(Error::arg(format!("selected index {j} out of range for p = {p}")));
        }
        if std::mem::replace(&mut seen[j], true) {
            continue;
        }
        if in_truth[j] {
            tp += 1;
        } else {
            fp += 1;
        }
    }
    Ok((tp, fp))
}

/// The lifted partition matrix `Z = Σ_k |G_k|⁻¹ 1_{G_k} 1_{G_k}ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipMatrix(pub DMatrix<f64>);

/// Violations of the membership-matrix constraints; all entries are
/// non-negative magnitudes except `min_entry` and `min_eigenvalue`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub asymmetry: f64,
    pub trace_error: f64,
    pub row_sum_error: f64,
    pub min_entry: f64,
    pub min_eigenvalue: f64,
}

/// Tolerances a feasibility report is compared against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityTolerance {
    pub symmetry: f64,
    pub trace: f64,
    pub row_sum: f64,
    pub entry: f64,
    pub eigenvalue: f64,
}

impl FeasibilityTolerance {
    /// Tolerances for exactly constructed membership matrices.
    pub const EXACT: FeasibilityTolerance = FeasibilityTolerance {
        symmetry: 1e-9,
        trace: 1e-9,
        row_sum: 1e-9,
        entry: 1e-9,
        eigenvalue: 1e-7,
    };

    /// Tolerances required of converged SDP solutions.
    pub const SOLVER: FeasibilityTolerance = FeasibilityTolerance {
        symmetry: 1e-7,
        trace: 1e-5,
        row_sum: 1e-5,
        entry: 1e-6,
        eigenvalue: 1e-5,
    };
}

impl FeasibilityReport {
    pub fn of(z: &DMatrix<f64>, k: usize) -> Result<Self> {
        let n = z.nrows();
        let trace_error = (z.trace() - k as f64).abs();
        let row_sum_error =
            (0..n).map(|i| (z.row(i).sum() - 1.0).abs()).fold(0.0, f64::max);
        let min_entry = z.iter().copied().fold(f64::INFINITY, f64::min);
        let min_eigenvalue = linalg::min_eigenvalue(&linalg::symmetrize(z))?;
        Ok(FeasibilityReport {
            asymmetry: linalg::max_asymmetry(z),
            trace_error,
            row_sum_error,
            min_entry,
            min_eigenvalue,
        })
    }

    pub fn within(&self, tol: &FeasibilityTolerance) -> bool {
        self.asymmetry <= tol.symmetry
            && self.trace_error <= tol.trace
            && self.row_sum_error <= tol.row_sum
            && self.min_entry >= -tol.entry
            && self.min_eigenvalue >= -tol.eigenvalue
    }
}

impl MembershipMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn feasibility(&self, k: usize) -> Result<FeasibilityReport> {
        FeasibilityReport::of(&self.0, k)
    }
}

/// Exact membership matrix of an assignment; every cluster must be non-empty.
pub fn membership_from_labels(a: &Assignment) -> Result<MembershipMatrix> {
    let sizes = a.sizes();
    if let Some(c) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::arg(format!("cluster {} is empty", c + 1)));
    }
    let n = a.n();
    let mut z = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            if a.labels[i] == a.labels[j] {
                z[(i, j)] = 1.0 / sizes[a.labels[i] - 1] as f64;
            }
        }
    }
    Ok(MembershipMatrix(z))
}

/// How the common covariance of the mixture is known.
#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceModel {
    /// `Σ = σ² I_p`.
    IdentityScaled { p: usize, sigma2: f64 },
    /// `Σ` given explicitly.
    Covariance(DMatrix<f64>),
    /// `Ω = Σ⁻¹` given explicitly.
    Precision(DMatrix<f64>),
}

impl CovarianceModel {
    pub fn identity(p: usize) -> Self {
        CovarianceModel::IdentityScaled { p, sigma2: 1.0 }
    }

    /// Checks symmetry (1e-10) and strict positive definiteness.
    pub fn validated(self) -> Result<Self> {
        match &self {
            CovarianceModel::IdentityScaled { p, sigma2 } => {
                if *p == 0 || !(*sigma2 > 0.0 && sigma2.is_finite()) {
                    return Err(Error::arg("identity covariance needs p >= 1 and sigma2 > 0"));
                }
            }
            CovarianceModel::Covariance(m) | CovarianceModel::Precision(m) => {
                if m.nrows() != m.ncols() || m.nrows() == 0 {
                    return Err(Error::arg("covariance matrix must be square and non-empty"));
                }
                if linalg::max_asymmetry(m) > 1e-10 {
                    return Err(Error::arg("covariance matrix is not symmetric"));
                }
                if linalg::min_eigenvalue(m)? <= 0.0 {
                    return Err(Error::arg("covariance matrix is not positive definite"));
                }
            }
        }
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        match self {
            CovarianceModel::IdentityScaled { p, .. } => *p,
            CovarianceModel::Covariance(m) | CovarianceModel::Precision(m) => m.nrows(),
        }
    }

    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        match self {
            CovarianceModel::IdentityScaled { p, sigma2 } => {
                Ok(DMatrix::identity(*p, *p) * *sigma2)
            }
            CovarianceModel::Covariance(m) => Ok(m.clone()),
            CovarianceModel::Precision(m) => linalg::spd_inverse(m),
        }
    }

    pub fn precision(&self) -> Result<DMatrix<f64>> {
        match self {
            CovarianceModel::IdentityScaled { p, sigma2 } => {
                Ok(DMatrix::identity(*p, *p) / *sigma2)
            }
            CovarianceModel::Covariance(m) => linalg::spd_inverse(m),
            CovarianceModel::Precision(m) => Ok(m.clone()),
        }
    }
}

/// `p × n` observations, one column per observation.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub truth: Option<Assignment>,
    pub gen: Option<ScenarioSpec>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, truth: Option<Assignment>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::arg("dataset needs at least one feature"));
        }
        if x.ncols() < 2 {
            return Err(Error::arg("dataset needs at least two observations"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("dataset contains non-finite entries"));
        }
        if let Some(t) = &truth {
            if t.n() != x.ncols() {
                return Err(Error::arg(format!(
                    "truth has {} labels for {} observations",
                    t.n(),
                    x.ncols()
                )));
            }
        }
        Ok(Dataset { x, truth, gen: None })
    }

    pub fn p(&self) -> usize {
        self.x.nrows()
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn asg(l: &[usize]) -> Assignment {
        let k = l.iter().copied().max().unwrap_or(1).max(2);
        Assignment::new(l.to_vec(), k).unwrap()
    }

    #[test]
    fn misclustering_examples() {
        assert_eq!(misclustering_rate(&asg(&[1, 1, 2, 2]), &asg(&[1, 1, 2, 2])).unwrap(), 0.0);
        assert_eq!(misclustering_rate(&asg(&[1, 1, 2, 2]), &asg(&[2, 2, 1, 1])).unwrap(), 0.0);
        assert_eq!(misclustering_rate(&asg(&[1, 1, 2, 2]), &asg(&[1, 2, 2, 2])).unwrap(), 0.25);
    }

    #[test]
    fn misclustering_rejects_length_mismatch() {
        assert!(misclustering_rate(&asg(&[1, 2]), &asg(&[1, 2, 2])).is_err());
    }

    #[test]
    fn misclustering_rejects_large_k() {
        let a = Assignment::new((1..=9).collect(), 9).unwrap();
        assert!(misclustering_rate(&a, &a).is_err());
    }

    #[test]
    fn labels_out_of_range_rejected() {
        assert!(Assignment::new(vec![1, 3], 2).is_err());
        assert!(Assignment::new(vec![0, 1], 2).is_err());
    }

    #[test]
    fn membership_examples() {
        let z = membership_from_labels(&Assignment::new(vec![1, 2], 2).unwrap()).unwrap();
        assert_eq!(z.0, DMatrix::identity(2, 2));

        let z = membership_from_labels(&Assignment::new(vec![1, 1], 1).unwrap()).unwrap();
        assert_eq!(z.0, DMatrix::from_element(2, 2, 0.5));

        let z = membership_from_labels(&asg(&[1, 1, 2, 2])).unwrap();
        let want = DMatrix::from_row_slice(
            4,
            4,
            &[0.5, 0.5, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.5, 0.5],
        );
        assert_eq!(z.0, want);
    }

    #[test]
    fn membership_rejects_empty_cluster() {
        let a = Assignment::new(vec![1, 1, 1], 2).unwrap();
        assert!(membership_from_labels(&a).is_err());
    }

    #[test]
    fn confusion_examples() {
        let truth: Vec<usize> = (0..10).collect();
        assert_eq!(selection_confusion(&[0, 1, 10], &truth, 400).unwrap(), (2, 1));
        assert_eq!(selection_confusion(&[], &truth, 400).unwrap(), (0, 0));
        assert_eq!(selection_confusion(&truth, &truth, 400).unwrap(), (10, 0));
        assert!(selection_confusion(&[400], &truth, 400).is_err());
    }

    #[test]
    fn covariance_model_validation() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(CovarianceModel::Covariance(bad).validated().is_err());
        let ok = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let m = CovarianceModel::Covariance(ok.clone()).validated().unwrap();
        let omega = m.precision().unwrap();
        assert!((&ok * omega - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    fn labels_strategy() -> impl Strategy<Value = (Vec<usize>, Vec<usize>, usize)> {
        (2usize..=4).prop_flat_map(|k| {
            (1usize..30).prop_flat_map(move |n| {
                (
                    prop::collection::vec(1..=k, n),
                    prop::collection::vec(1..=k, n),
                    Just(k),
                )
            })
        })
    }

    proptest! {
        #[test]
        fn misclustering_symmetric_and_bounded((a, b, k) in labels_strategy(), seed in 0u64..1000) {
            let a = Assignment::new(a, k).unwrap();
            let b = Assignment::new(b, k).unwrap();
            let ab = misclustering_rate(&a, &b).unwrap();
            prop_assert_eq!(ab, misclustering_rate(&b, &a).unwrap());
            prop_assert_eq!(misclustering_rate(&a, &a).unwrap(), 0.0);
            prop_assert!(ab <= 1.0 - 1.0 / k as f64 + 1e-12);

            // relabel a by a rotation determined by the seed
            let shift = (seed as usize) % k;
            let rel = Assignment::new(a.labels().iter().map(|&l| (l - 1 + shift) % k + 1).collect(), k).unwrap();
            prop_assert_eq!(misclustering_rate(&rel, &b).unwrap(), ab);
        }

        #[test]
        fn membership_is_exactly_feasible(raw in prop::collection::vec(1usize..=3, 3..20)) {
            let a = Assignment::new(raw, 3).unwrap();
            prop_assume!(!a.has_empty_cluster());
            let z = membership_from_labels(&a).unwrap();
            let rep = z.feasibility(3).unwrap();
            prop_assert!(rep.within(&FeasibilityTolerance::EXACT), "{:?}", rep);
        }
    }
}
