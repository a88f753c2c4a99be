//! Explicit dual certificate for exact recovery of the true partition.
//!
//! For a support `S`, data `X_S` (`|S| × n`) and true clusters `G_1..G_K`,
//! the true membership matrix `Z*` is the unique maximiser of
//! `⟨X_Sᵀ X_S, Z⟩` over the SDP feasible set when there are `λ`, `α`, `B` with
//!
//! ```text
//! (C1) B ≥ 0                     (C2) W = λI − B + ½(1αᵀ + α1ᵀ) − X_SᵀX_S ⪰ 0
//! (C3) ⟨W, Z*⟩ = 0               (C4) ⟨B, Z*⟩ = 0
//! (C5) B_{G_k G_l} > 0 for k ≠ l
//! ```
//!
//! Given `λ`, the construction fixes `α` and builds `B` from rank-one
//! off-diagonal blocks with prescribed row sums. Conditions are checked in
//! floating point with tolerances relative to `‖X_SᵀX_S‖_F`.
//!
//! Cluster labels `k`, `l` are 1-based as in [`Assignment`]; observation
//! indices are 0-based.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{membership_from_labels, Assignment};

const C1_TOL: f64 = 1e-8;
const C2_TOL: f64 = 1e-6;
const C34_TOL: f64 = 1e-6;
const C5_TOL: f64 = 1e-10;
const DEGENERATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct CertificateInput {
    /// `|S| × n` data restricted to the support.
    pub x_s: DMatrix<f64>,
    pub truth: Assignment,
    /// Dual trace variable; when `None`, [`lambda_dot`] is evaluated from
    /// `sigma2` and `separation2`.
    pub lambda: Option<f64>,
    pub sigma2: Option<f64>,
    /// True squared separation restricted to `S ∩ S₀`.
    pub separation2: Option<f64>,
}

impl CertificateInput {
    pub fn with_lambda(x_s: DMatrix<f64>, truth: Assignment, lambda: f64) -> Self {
        CertificateInput { x_s, truth, lambda: Some(lambda), sigma2: None, separation2: None }
    }

    pub fn lambda(&self) -> Result<f64> {
        if let Some(l) = self.lambda {
            return Ok(l);
        }
        match (self.sigma2, self.separation2) {
            (Some(s2), Some(d2)) => lambda_dot(s2, self.x_s.nrows(), harmonic_m(&self.truth)?, d2),
            _ => Err(Error::arg("λ needs either an explicit value or both σ² and the restricted separation")),
        }
    }
}

/// Dual variables `(α̇, Ḃ, Ẇ)` at a given `λ`.
#[derive(Debug, Clone)]
pub struct DualCertificate {
    pub lambda: f64,
    pub alpha: DVector<f64>,
    pub b: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionCheck {
    pub name: &'static str,
    pub pass: bool,
    /// Distance to the tolerance boundary; non-negative exactly when `pass`
    /// (strictly positive for C5).
    pub margin: f64,
    /// The raw quantity tested.
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    pub conditions: Vec<ConditionCheck>,
    pub u_s: f64,
    pub l1_s: f64,
    pub lambda_used: f64,
    pub w_min_eig: f64,
    /// `‖X_SᵀX_S‖_F`, the reference for all tolerances.
    pub scale: f64,
}

impl CertificateReport {
    pub fn all_pass(&self) -> bool {
        self.conditions.iter().all(|c| c.pass)
    }

    pub fn condition(&self, name: &str) -> Option<&ConditionCheck> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

struct Clusters {
    members: Vec<Vec<usize>>,
    centroids: Vec<DVector<f64>>,
}

impl Clusters {
    fn new(x_s: &DMatrix<f64>, truth: &Assignment) -> Result<Self> {
        if truth.n() != x_s.ncols() {
            return Err(Error::arg(format!("truth has {} labels for {} observations", truth.n(), x_s.ncols())));
        }
        let members: Vec<Vec<usize>> = (1..=truth.k()).map(|l| truth.members(l)).collect();
        if let Some(k) = members.iter().position(|m| m.is_empty()) {
            return Err(Error::arg(format!("cluster {} is empty", k + 1)));
        }
        let centroids = members.iter().map(|m| linalg::column_mean(x_s, m)).collect();
        Ok(Clusters { members, centroids })
    }

    fn size(&self, k: usize) -> f64 {
        self.members[k - 1].len() as f64
    }

    /// `D_{kli}` without membership checks.
    fn d(&self, x_s: &DMatrix<f64>, k: usize, l: usize, i: usize) -> f64 {
        let xi = x_s.column(i);
        (&self.centroids[l - 1] - xi).norm_squared() - (&self.centroids[k - 1] - xi).norm_squared()
    }

    fn r(&self, x_s: &DMatrix<f64>, lambda: f64, k: usize, l: usize) -> DVector<f64> {
        let (nk, nl) = (self.size(k), self.size(l));
        let shift = -(nk + nl) / (2.0 * nk) * lambda;
        DVector::from_iterator(
            self.members[k - 1].len(),
            self.members[k - 1].iter().map(|&i| shift + 0.5 * nl * self.d(x_s, k, l, i)),
        )
    }
}

fn check_pair(truth: &Assignment, k: usize, l: usize) -> Result<()> {
    let kk = truth.k();
    if k == 0 || l == 0 || k > kk || l > kk || k == l {
        return Err(Error::arg(format!("need distinct cluster labels in 1..={kk}, got ({k}, {l})")));
    }
    Ok(())
}

/// `‖X̄_l − X_i‖² − ‖X̄_k − X_i‖²` for `i ∈ G_k`.
pub fn compute_d(x_s: &DMatrix<f64>, truth: &Assignment, k: usize, l: usize, i: usize) -> Result<f64> {
    check_pair(truth, k, l)?;
    if i >= truth.n() || truth.labels()[i] != k {
        return Err(Error::arg(format!("observation {i} is not in cluster {k}")));
    }
    Ok(Clusters::new(x_s, truth)?.d(x_s, k, l, i))
}

/// `min_{k≠l} (1/|G_k| + 1/|G_l|)⁻¹ min_{i∈G_k} D_{kli}`.
pub fn compute_u(x_s: &DMatrix<f64>, truth: &Assignment) -> Result<f64> {
    let c = Clusters::new(x_s, truth)?;
    let kk = truth.k();
    let mut u = f64::INFINITY;
    for k in 1..=kk {
        for l in (1..=kk).filter(|&l| l != k) {
            let h = 1.0 / (1.0 / c.size(k) + 1.0 / c.size(l));
            let dmin = c.members[k - 1].iter().map(|&i| c.d(x_s, k, l, i)).fold(f64::INFINITY, f64::min);
            u = u.min(h * dmin);
        }
    }
    Ok(u)
}

/// Orthogonal projector onto the complement of the cluster indicators.
pub fn gamma_projector(truth: &Assignment) -> Result<DMatrix<f64>> {
    let z = membership_from_labels(truth)?.into_inner();
    Ok(DMatrix::identity(truth.n(), truth.n()) - z)
}

/// Largest eigenvalue of `P EᵀE P` with `E = X_S − centers` and `P` the
/// projector onto `Γ_K`. `centers` is `|S| × K`. Since `P` annihilates
/// every per-cluster constant, the value does not depend on `centers`.
pub fn compute_l1(x_s: &DMatrix<f64>, truth: &Assignment, centers: &DMatrix<f64>) -> Result<f64> {
    if centers.shape() != (x_s.nrows(), truth.k()) {
        return Err(Error::arg(format!(
            "centers must be {}x{}, got {}x{}",
            x_s.nrows(),
            truth.k(),
            centers.nrows(),
            centers.ncols()
        )));
    }
    if truth.n() != x_s.ncols() {
        return Err(Error::arg("truth and data disagree on n"));
    }
    let mut e = x_s.clone();
    for (i, mut col) in e.column_iter_mut().enumerate() {
        col -= centers.column(truth.cluster_of(i));
    }
    let ep = &e * gamma_projector(truth)?;
    let gram = linalg::symmetrize(&(ep.transpose() * &ep));
    Ok(linalg::max_eigenvalue(&gram)?.max(0.0))
}

/// Per-cluster means as a `|S| × K` matrix.
pub fn empirical_centers(x_s: &DMatrix<f64>, truth: &Assignment) -> Result<DMatrix<f64>> {
    let c = Clusters::new(x_s, truth)?;
    Ok(DMatrix::from_columns(&c.centroids))
}

/// `σ²|S| + m Δ²/4`.
pub fn lambda_dot(sigma2: f64, s_size: usize, m: f64, delta2: f64) -> Result<f64> {
    if !(sigma2 >= 0.0 && m >= 0.0 && delta2 >= 0.0) {
        return Err(Error::arg("σ², m and Δ² must be non-negative"));
    }
    Ok(sigma2 * s_size as f64 + m * delta2 / 4.0)
}

/// `m = 2 min_{k≠l} (1/|G_k| + 1/|G_l|)⁻¹`.
pub fn harmonic_m(truth: &Assignment) -> Result<f64> {
    let sizes = truth.sizes();
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::arg("need at least two non-empty clusters"));
    }
    let mut best = f64::INFINITY;
    for (a, &na) in sizes.iter().enumerate() {
        for &nb in &sizes[a + 1..] {
            best = best.min(1.0 / (1.0 / na as f64 + 1.0 / nb as f64));
        }
    }
    Ok(2.0 * best)
}

/// The row-sum vector `r^{(k,l)}` of block `(k, l)` of `Ḃ`, indexed by the
/// members of `G_k` in increasing order.
pub fn r_vector(x_s: &DMatrix<f64>, truth: &Assignment, lambda: f64, k: usize, l: usize) -> Result<DVector<f64>> {
    check_pair(truth, k, l)?;
    Ok(Clusters::new(x_s, truth)?.r(x_s, lambda, k, l))
}

pub fn build_certificate(input: &CertificateInput) -> Result<DualCertificate> {
    let x_s = &input.x_s;
    let truth = &input.truth;
    let lambda = input.lambda()?;
    let c = Clusters::new(x_s, truth)?;
    if let Some(k) = c.members.iter().position(|m| m.len() < 2) {
        return Err(Error::arg(format!("cluster {} has fewer than two members", k + 1)));
    }
    let n = x_s.ncols();
    let kk = truth.k();
    let gram = linalg::symmetrize(&(x_s.transpose() * x_s));
    let scale = gram.norm();

    let mut alpha = DVector::zeros(n);
    for k in 1..=kk {
        let centroid = &c.centroids[k - 1];
        let offset = lambda / c.size(k) + centroid.norm_squared();
        for &i in &c.members[k - 1] {
            alpha[i] = 2.0 * x_s.column(i).dot(centroid) - offset;
        }
    }

    let r: Vec<Vec<Option<DVector<f64>>>> = (1..=kk)
        .map(|k| (1..=kk).map(|l| (k != l).then(|| c.r(x_s, lambda, k, l))).collect())
        .collect();
    let mut b = DMatrix::zeros(n, n);
    for k in 1..=kk {
        for l in (1..=kk).filter(|&l| l != k) {
            let rkl = r[k - 1][l - 1].as_ref().expect("off-diagonal");
            let rlk = r[l - 1][k - 1].as_ref().expect("off-diagonal");
            let t = rlk.sum();
            if !(t.abs() >= DEGENERATE_TOL * scale) || t == 0.0 {
                return Err(Error::DegenerateCertificate { l, k, value: t });
            }
            for (a, &i) in c.members[k - 1].iter().enumerate() {
                for (bb, &j) in c.members[l - 1].iter().enumerate() {
                    b[(i, j)] = rkl[a] * rlk[bb] / t;
                }
            }
        }
    }

    let mut w = DMatrix::from_fn(n, n, |i, j| 0.5 * (alpha[i] + alpha[j]) - b[(i, j)] - gram[(i, j)]);
    for i in 0..n {
        w[(i, i)] += lambda;
    }
    Ok(DualCertificate { lambda, alpha, b, w })
}

pub fn check_conditions(input: &CertificateInput) -> Result<CertificateReport> {
    let cert = build_certificate(input)?;
    let x_s = &input.x_s;
    let truth = &input.truth;
    let scale = (x_s.transpose() * x_s).norm();
    let z_star = membership_from_labels(truth)?.into_inner();

    let b_min = cert.b.min();
    let w_sym = linalg::symmetrize(&cert.w);
    let w_min_eig = linalg::min_eigenvalue(&w_sym)?;
    let w_norm = w_sym.norm();
    let wz = linalg::frob_dot(&cert.w, &z_star);
    let bz = linalg::frob_dot(&cert.b, &z_star);
    let labels = truth.labels();
    let off_min = (0..truth.n())
        .flat_map(|i| (0..truth.n()).map(move |j| (i, j)))
        .filter(|&(i, j)| labels[i] != labels[j])
        .map(|(i, j)| cert.b[(i, j)])
        .fold(f64::INFINITY, f64::min);

    let c1 = b_min + C1_TOL * scale;
    let c2 = w_min_eig + C2_TOL * w_norm;
    let c3 = C34_TOL * scale - wz.abs();
    let c4 = C34_TOL * scale - bz.abs();
    let c5 = off_min - C5_TOL * scale;
    let conditions = vec![
        ConditionCheck { name: "C1", pass: c1 >= 0.0, margin: c1, value: b_min },
        ConditionCheck { name: "C2", pass: c2 >= 0.0, margin: c2, value: w_min_eig },
        ConditionCheck { name: "C3", pass: c3 >= 0.0, margin: c3, value: wz },
        ConditionCheck { name: "C4", pass: c4 >= 0.0, margin: c4, value: bz },
        ConditionCheck { name: "C5", pass: c5 > 0.0, margin: c5, value: off_min },
    ];
    let centers = empirical_centers(x_s, truth)?;
    Ok(CertificateReport {
        conditions,
        u_s: compute_u(x_s, truth)?,
        l1_s: compute_l1(x_s, truth, &centers)?,
        lambda_used: cert.lambda,
        w_min_eig,
        scale,
    })
}

/// Checks the conditions at `count` evenly spaced `λ` from `L₁` to `U`.
pub fn scan_lambda(x_s: &DMatrix<f64>, truth: &Assignment, count: usize) -> Result<Vec<CertificateReport>> {
    let u = compute_u(x_s, truth)?;
    let l1 = compute_l1(x_s, truth, &empirical_centers(x_s, truth)?)?;
    (0..count)
        .map(|j| {
            let frac = if count > 1 { j as f64 / (count - 1) as f64 } else { 0.0 };
            let lambda = l1 + frac * (u - l1);
            check_conditions(&CertificateInput::with_lambda(x_s.clone(), truth.clone(), lambda))
        })
        .collect()
}
