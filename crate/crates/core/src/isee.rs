//! Innovated scalable efficient estimation (ISEE) of the transformed data
//! `X̃ = Ω X` for a two-cluster split, without estimating the full
//! precision matrix.
//!
//! Features are split into small blocks `A`. Within each cluster the block
//! coordinates are lasso-regressed on all other coordinates; the intercepts
//! `α_k` and pooled residuals `Ê` then give
//!
//! ```text
//! Ω̂_AA = ((1/n) Ê Êᵀ)⁻¹,   μ̃_k|A = Ω̂_AA α_k,   X̃_A = M̃_A + Ω̂_AA Ê
//! ```
//!
//! where column `i` of `M̃_A` is the transformed mean of the cluster holding
//! observation `i`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lasso::{GramDesign, LambdaGrid, LassoOptions};
use crate::linalg;
use crate::model::Assignment;

/// Residual covariances with a larger condition number get a ridge.
pub const MAX_CONDITION: f64 = 1e12;
/// Ridge added to a flagged block, relative to its trace.
pub const RIDGE: f64 = 1e-8;
/// Smallest cluster ISEE accepts.
pub const MIN_CLUSTER_SIZE: usize = 3;

/// Consecutive feature blocks of size 2, the last of size 3 when `p` is odd.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    blocks: Vec<Vec<usize>>,
}

impl BlockPartition {
    pub fn consecutive(p: usize) -> Result<Self> {
        if p < 2 {
            return Err(Error::arg(format!("ISEE needs p >= 2, got {p}")));
        }
        let mut blocks: Vec<Vec<usize>> = (0..p / 2).map(|b| vec![2 * b, 2 * b + 1]).collect();
        if p % 2 == 1 {
            blocks.last_mut().expect("p >= 2").push(p - 1);
        }
        Ok(BlockPartition { blocks })
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct BlockDiagnostics {
    pub block: Vec<usize>,
    /// Chosen penalty per cluster (outer) and block coordinate (inner).
    pub lambdas: [Vec<f64>; 2],
    /// Condition number of the pooled residual covariance before any ridge.
    pub condition: f64,
    pub ridged: bool,
    /// Some predictor was constant within a cluster and left unpenalized.
    pub constant_predictors: bool,
    pub lasso_converged: bool,
}

#[derive(Debug, Clone)]
pub struct IseeEstimate {
    pub mu1_tilde: DVector<f64>,
    pub mu2_tilde: DVector<f64>,
    /// `p × n`.
    pub xtilde: DMatrix<f64>,
    pub omega_diag: DVector<f64>,
    pub per_block: Vec<BlockDiagnostics>,
}

impl IseeEstimate {
    pub fn mu_diff(&self) -> DVector<f64> {
        &self.mu1_tilde - &self.mu2_tilde
    }
}

/// Transformed means and data of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTransform {
    pub mu1: DVector<f64>,
    pub mu2: DVector<f64>,
    /// `|A| × n`.
    pub xtilde: DMatrix<f64>,
}

/// `μ̃_k = Ω α_k` and `X̃ = M̃ + Ω E`, where `cluster[i] ∈ {0, 1}`.
pub fn transform_block(
    omega: &DMatrix<f64>,
    alpha1: &DVector<f64>,
    alpha2: &DVector<f64>,
    resid: &DMatrix<f64>,
    cluster: &[usize],
) -> BlockTransform {
    let mu1 = omega * alpha1;
    let mu2 = omega * alpha2;
    let mut xtilde = omega * resid;
    for (i, mut col) in xtilde.column_iter_mut().enumerate() {
        col += if cluster[i] == 0 { &mu1 } else { &mu2 };
    }
    BlockTransform { mu1, mu2, xtilde }
}

/// Runs ISEE on `x` (`p × n`) for the two-cluster split `assignment`.
pub fn isee(x: &DMatrix<f64>, assignment: &Assignment) -> Result<IseeEstimate> {
    let (p, n) = x.shape();
    if assignment.k() != 2 {
        return Err(Error::arg(format!("ISEE needs K = 2, got {}", assignment.k())));
    }
    if assignment.n() != n {
        return Err(Error::arg(format!("assignment has {} labels for {n} observations", assignment.n())));
    }
    let members = [assignment.members(1), assignment.members(2)];
    for (k, m) in members.iter().enumerate() {
        if m.len() < MIN_CLUSTER_SIZE {
            return Err(Error::arg(format!(
                "cluster {} has {} members; ISEE needs at least {MIN_CLUSTER_SIZE}",
                k + 1,
                m.len()
            )));
        }
    }
    let partition = BlockPartition::consecutive(p)?;
    let designs = [cluster_design(x, &members[0])?, cluster_design(x, &members[1])?];
    let cluster: Vec<usize> = (0..n).map(|i| assignment.cluster_of(i)).collect();

    let results = partition
        .blocks()
        .par_iter()
        .map(|block| fit_block(block, p, &designs, &members, &cluster))
        .collect::<Result<Vec<_>>>()?;

    let mut mu1_tilde = DVector::zeros(p);
    let mut mu2_tilde = DVector::zeros(p);
    let mut omega_diag = DVector::zeros(p);
    let mut xtilde = DMatrix::zeros(p, n);
    let mut per_block = Vec::with_capacity(results.len());
    for (block, (t, omega, diag)) in partition.blocks().iter().zip(results) {
        for (r, &j) in block.iter().enumerate() {
            mu1_tilde[j] = t.mu1[r];
            mu2_tilde[j] = t.mu2[r];
            omega_diag[j] = omega[(r, r)];
            xtilde.row_mut(j).copy_from(&t.xtilde.row(r));
        }
        per_block.push(diag);
    }
    if omega_diag.iter().any(|&w| !(w > 0.0 && w.is_finite())) || xtilde.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("ISEE produced a non-positive or non-finite estimate".into()));
    }
    Ok(IseeEstimate { mu1_tilde, mu2_tilde, xtilde, omega_diag, per_block })
}

fn cluster_design(x: &DMatrix<f64>, members: &[usize]) -> Result<GramDesign> {
    GramDesign::new(linalg::select_columns(x, members).transpose())
}

fn fit_block(
    block: &[usize],
    p: usize,
    designs: &[GramDesign; 2],
    members: &[Vec<usize>; 2],
    cluster: &[usize],
) -> Result<(BlockTransform, DMatrix<f64>, BlockDiagnostics)> {
    let n = cluster.len();
    let a = block.len();
    let complement: Vec<usize> = (0..p).filter(|j| !block.contains(j)).collect();
    let grid = LambdaGrid::default();
    let opts = LassoOptions::default();

    let mut resid = DMatrix::zeros(a, n);
    let mut alphas = [DVector::zeros(a), DVector::zeros(a)];
    let mut lambdas = [Vec::with_capacity(a), Vec::with_capacity(a)];
    let mut constant_predictors = false;
    let mut lasso_converged = true;
    for k in 0..2 {
        for (r, &j) in block.iter().enumerate() {
            let fit = designs[k].fit(j, &complement, &grid, &opts)?;
            alphas[k][r] = fit.intercept;
            lambdas[k].push(fit.lambda);
            constant_predictors |= !fit.constant_predictors.is_empty();
            lasso_converged &= fit.converged;
            for (s, &i) in members[k].iter().enumerate() {
                resid[(r, i)] = fit.residuals[s];
            }
        }
    }

    let mut cov = linalg::symmetrize(&(&resid * resid.transpose() / n as f64));
    let condition = linalg::sym_condition(&cov)?;
    let ridged = !(condition <= MAX_CONDITION);
    if ridged {
        let ridge = RIDGE * cov.trace().max(f64::MIN_POSITIVE);
        for r in 0..a {
            cov[(r, r)] += ridge;
        }
    }
    let omega = linalg::spd_inverse(&cov)?;
    let t = transform_block(&omega, &alphas[0], &alphas[1], &resid, cluster);
    let diag = BlockDiagnostics {
        block: block.to_vec(),
        lambdas,
        condition,
        ridged,
        constant_predictors,
        lasso_converged,
    };
    Ok((t, omega, diag))
}
