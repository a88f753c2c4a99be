//! ADMM solver for the K-means SDP relaxation
//!
//! ```text
//! maximize ⟨A, Z⟩  s.t.  Z = Zᵀ ⪰ 0,  tr Z = K,  Z 1 = 1,  Z ≥ 0.
//! ```
//!
//! The feasible set is split as `C ∩ N` with
//! `C = {Z ⪰ 0, Z = Zᵀ, tr Z = K, Z 1 = 1}` and `N = {Z ≥ 0}`, and the
//! scaled-form ADMM iterates
//!
//! ```text
//! Z ← Π_C(Y − U + A/ρ),   Y ← max(Z + U, 0),   U ← U + Z − Y.
//! ```
//!
//! Every `Z ∈ C` has the form `11ᵀ/n + V` with `V ⪰ 0`, `V 1 = 0` and
//! `tr V = K − 1`, so `Π_C` is exact: map `1⊥` onto the first `n − 1`
//! coordinates with a Householder reflection, eigendecompose the compressed
//! `(n−1) × (n−1)` block, and project its eigenvalues onto the simplex
//! `{λ ≥ 0, Σλ = K − 1}`. The returned `Z` is the `C` iterate, so the
//! equality and PSD constraints hold to rounding. Its entrywise violation,
//! bounded by the primal residual `‖Z − Y‖_F`, is removed on convergence by
//! a convex step towards the centre of the feasible set.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{FeasibilityReport, FeasibilityTolerance};
use crate::topeig::TopEigenTracker;

#[derive(Debug, Clone)]
pub struct SdpProblem {
    a: DMatrix<f64>,
    k: usize,
}

impl SdpProblem {
    pub fn new(a: DMatrix<f64>, k: usize) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::arg("similarity matrix must be square"));
        }
        if k < 2 || a.nrows() < k {
            return Err(Error::arg(format!("need 2 <= K <= n, got K = {k}, n = {}", a.nrows())));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("similarity matrix has non-finite entries"));
        }
        if linalg::max_asymmetry(&a) > 1e-8 {
            return Err(Error::arg("similarity matrix is not symmetric"));
        }
        Ok(SdpProblem { a, k })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SdpOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Initial penalty; defaults to `‖A‖_F / √K`.
    pub rho: Option<f64>,
    /// Residual-balancing check period in iterations; 0 keeps `ρ` fixed.
    pub balance_every: usize,
    /// `ρ` is doubled or halved when one residual exceeds the other by this factor.
    pub balance_ratio: f64,
    /// Over-relaxation factor in `(0, 2)`; 1 is plain ADMM.
    pub relax: f64,
    /// Anderson acceleration memory; 0 disables it.
    pub anderson: usize,
}

impl Default for SdpOptions {
    fn default() -> Self {
        SdpOptions { tol: 1e-6, max_iter: 20_000, rho: None, balance_every: 10, balance_ratio: 2.0, relax: 1.6, anderson: 8 }
    }
}

/// Starting point for [`solve_warm`]. `multiplier` is the unscaled dual of
/// the `Z = Y` coupling, as returned in [`SdpSolution::multiplier`].
#[derive(Debug, Clone, Default)]
pub struct WarmStart {
    pub z: Option<DMatrix<f64>>,
    pub multiplier: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub z: DMatrix<f64>,
    pub objective: f64,
    /// `‖Z − Y‖_F`.
    pub primal_residual: f64,
    /// `ρ‖Y_t − Y_{t−1}‖_F / ‖A‖_F`.
    pub dual_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub rho: f64,
    pub multiplier: DMatrix<f64>,
}

impl SdpSolution {
    pub fn feasibility(&self, k: usize) -> Result<FeasibilityReport> {
        FeasibilityReport::of(&self.z, k)
    }

    /// True when the solution is converged and meets the solver tolerances.
    pub fn meets_tolerances(&self, k: usize) -> Result<bool> {
        Ok(self.converged && self.feasibility(k)?.within(&FeasibilityTolerance::SOLVER))
    }
}

pub fn solve(problem: &SdpProblem, opts: &SdpOptions) -> Result<SdpSolution> {
    solve_warm(problem, opts, &WarmStart::default())
}

pub fn solve_warm(problem: &SdpProblem, opts: &SdpOptions, warm: &WarmStart) -> Result<SdpSolution> {
    let n = problem.n();
    let k = problem.k();
    let a = &problem.a;
    let a_norm = a.norm();
    let a_scale = if a_norm > 0.0 { a_norm } else { 1.0 };
    let mut rho = opts.rho.unwrap_or(a_scale / (k as f64).sqrt());
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::arg("ADMM penalty must be positive"));
    }
    if !(opts.relax > 0.0 && opts.relax < 2.0) {
        return Err(Error::arg("over-relaxation factor must lie in (0, 2)"));
    }
    let mut proj = AffineSpectraplex::new(n, k);

    let y0 = match &warm.z {
        Some(z0) if z0.shape() == (n, n) => z0.map(|v| v.max(0.0)),
        Some(_) => return Err(Error::arg("warm-start matrix has the wrong shape")),
        None => proj.centre(),
    };
    let u0 = match &warm.multiplier {
        Some(m) if m.shape() == (n, n) => m.map(|v| v.min(0.0) / rho),
        Some(_) => return Err(Error::arg("warm-start multiplier has the wrong shape")),
        None => DMatrix::zeros(n, n),
    };
    // The ADMM state is v = Y + U with Y = max(v, 0), U = min(v, 0).
    let mut v = y0 + u0;
    let mut aa = Anderson::new(opts.anderson);
    let mut last_plain: Option<(DMatrix<f64>, f64)> = None;
    let mut z = DMatrix::zeros(n, n);
    let mut u_out = None;
    let mut primal = f64::INFINITY;
    let mut dual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let alpha = opts.relax;

    for it in 1..=opts.max_iter {
        iterations = it;
        let inv_rho = 1.0 / rho;
        let mut m = v.map(f64::abs);
        m.zip_apply(a, |mv, av| *mv += inv_rho * av);
        // Inexact projections, tightened as the iterates settle.
        let accuracy = (0.01 * primal.max(dual)).clamp(1e-10, 1e-4);
        z = proj.project(&m, accuracy)?;

        let mut next = DMatrix::zeros(n, n);
        let mut r2 = 0.0;
        let mut s2 = 0.0;
        let mut g2 = 0.0;
        for (((nv, zv), vv), _) in next.iter_mut().zip(z.iter()).zip(v.iter()).zip(0..) {
            let (yv, uv) = (vv.max(0.0), vv.min(0.0));
            let w = alpha * zv + (1.0 - alpha) * yv + uv;
            *nv = w;
            let yn = w.max(0.0);
            r2 += (zv - yn).powi(2);
            s2 += (yn - yv).powi(2);
            g2 += (w - vv).powi(2);
        }
        primal = r2.sqrt();
        dual = rho * s2.sqrt() / a_scale;
        let g_norm = g2.sqrt();
        if !primal.is_finite() || !dual.is_finite() {
            return Err(Error::Numerical(format!("ADMM iterate became non-finite at iteration {it}")));
        }
        if primal.max(dual) <= opts.tol {
            converged = true;
            u_out = Some(next.map(|w| w.min(0.0)));
            break;
        }
        // Safeguard: an extrapolated point whose fixed-point residual grew is
        // discarded in favour of the plain step from the previous point.
        if let Some((plain, prev_g)) = last_plain.take() {
            if g_norm > prev_g {
                aa.reset();
                v = plain;
                continue;
            }
        }
        let mut g = next;
        g -= &v;
        let plain = &v + &g;
        match aa.step(&v, &g) {
            Some(extrapolated) => {
                v = extrapolated;
                last_plain = Some((plain, g_norm));
            }
            None => v = plain,
        }
        if opts.balance_every > 0 && it % opts.balance_every == 0 {
            let mu = opts.balance_ratio;
            let scale = if primal > mu * dual {
                2.0
            } else if dual > mu * primal {
                0.5
            } else {
                1.0
            };
            if scale != 1.0 {
                rho *= scale;
                // ρU is invariant
                v.apply(|w| {
                    if *w < 0.0 {
                        *w /= scale
                    }
                });
                aa.reset();
                last_plain = None;
            }
        }
    }

    let u_out = u_out.unwrap_or_else(|| v.map(|w| w.min(0.0)));
    if converged {
        repair_nonnegativity(&mut z, k);
    }
    let objective = linalg::frob_dot(a, &z);
    Ok(SdpSolution {
        z,
        objective,
        primal_residual: primal,
        dual_residual: dual,
        iterations,
        converged,
        rho,
        multiplier: u_out * rho,
    })
}

/// Mixes `Z ∈ C` with the centre of the feasible set just enough to clear
/// the entrywise violation. The result stays in `C`, and the double-centred
/// part of `Z` is only rescaled.
fn repair_nonnegativity(z: &mut DMatrix<f64>, k: usize) {
    let n = z.nrows();
    let deficit = -z.min();
    if deficit <= 0.0 || n == k {
        return;
    }
    let nf = n as f64;
    let off = (nf - k as f64) / (nf * (nf - 1.0));
    let theta = deficit / (off + deficit);
    let diag = k as f64 / nf;
    for j in 0..n {
        for i in 0..n {
            let c = if i == j { diag } else { off };
            z[(i, j)] = (1.0 - theta) * z[(i, j)] + theta * c;
        }
    }
}

/// Type-II Anderson acceleration on the fixed-point map `v ↦ v + g(v)`.
struct Anderson {
    memory: usize,
    prev: Option<(DMatrix<f64>, DMatrix<f64>)>,
    dv: VecDeque<DMatrix<f64>>,
    dg: VecDeque<DMatrix<f64>>,
    /// Gram matrix of `dg`, in deque order.
    gram: DMatrix<f64>,
}

impl Anderson {
    fn new(memory: usize) -> Self {
        Anderson { memory, prev: None, dv: VecDeque::new(), dg: VecDeque::new(), gram: DMatrix::zeros(0, 0) }
    }

    fn reset(&mut self) {
        self.prev = None;
        self.dv.clear();
        self.dg.clear();
        self.gram = DMatrix::zeros(0, 0);
    }

    fn push(&mut self, dv: DMatrix<f64>, dg: DMatrix<f64>) {
        if self.dg.len() == self.memory {
            self.dv.pop_front();
            self.dg.pop_front();
            self.gram = self.gram.clone().remove_row(0).remove_column(0);
        }
        let dots: Vec<f64> = self.dg.iter().map(|d| d.dot(&dg)).collect();
        let self_dot = dg.norm_squared();
        let m = dots.len();
        let old = std::mem::replace(&mut self.gram, DMatrix::zeros(0, 0));
        self.gram = DMatrix::from_fn(m + 1, m + 1, |i, j| match (i == m, j == m) {
            (false, false) => old[(i, j)],
            (true, true) => self_dot,
            (true, false) => dots[j],
            (false, true) => dots[i],
        });
        self.dv.push_back(dv);
        self.dg.push_back(dg);
    }

    fn step(&mut self, v: &DMatrix<f64>, g: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        if self.memory == 0 {
            return None;
        }
        if let Some((pv, pg)) = self.prev.take() {
            self.push(v - pv, g - pg);
        }
        self.prev = Some((v.clone(), g.clone()));
        let m = self.dg.len();
        if m == 0 {
            return None;
        }
        let rhs = DVector::from_iterator(m, self.dg.iter().map(|d| d.dot(g)));
        let reg = 1e-10 * self.gram.trace().max(f64::MIN_POSITIVE);
        let gamma = (&self.gram + DMatrix::identity(m, m) * reg).cholesky()?.solve(&rhs);
        let mut out = v + g;
        for i in 0..m {
            out.zip_zip_apply(&self.dv[i], &self.dg[i], |o, a, b| *o -= gamma[i] * (a + b));
        }
        Some(out)
    }
}

/// Exact Euclidean projection onto `{Z ⪰ 0, tr Z = K, Z 1 = 1}`.
struct AffineSpectraplex {
    n: usize,
    k: usize,
    /// Householder vector mapping `e_{n−1}` to `1/√n`.
    w: DVector<f64>,
    /// `2 / ‖w‖²`.
    beta: f64,
    tracker: TopEigenTracker,
}

impl AffineSpectraplex {
    fn new(n: usize, k: usize) -> Self {
        let mut w = DVector::from_element(n, -1.0 / (n as f64).sqrt());
        w[n - 1] += 1.0;
        let beta = 2.0 / w.norm_squared();
        AffineSpectraplex { n, k, w, beta, tracker: TopEigenTracker::new() }
    }

    /// `11ᵀ/n + (K−1)/(n−1) (I − 11ᵀ/n)`, a feasible point of the full set.
    fn centre(&self) -> DMatrix<f64> {
        let n = self.n as f64;
        let c = (self.k as f64 - 1.0) / (n - 1.0);
        DMatrix::from_fn(self.n, self.n, |i, j| (1.0 - c) / n + if i == j { c } else { 0.0 })
    }

    fn project(&mut self, m: &DMatrix<f64>, accuracy: f64) -> Result<DMatrix<f64>> {
        let n = self.n;
        let w = &self.w;
        let beta = self.beta;
        // H Ms H with Ms the symmetric part of m
        let v = (m * w + m.tr_mul(w)) * 0.5;
        let gamma = w.dot(&v);
        let sym = |i: usize, j: usize| 0.5 * (m[(i, j)] + m[(j, i)]);
        let compressed = faer::Mat::<f64>::from_fn(n - 1, n - 1, |i, j| {
            sym(i, j) - beta * (w[i] * v[j] + v[i] * w[j]) + beta * beta * gamma * w[i] * w[j]
        });
        let total = self.k as f64 - 1.0;
        let pairs = self
            .tracker
            .top_above(compressed.as_ref(), &|vals: &[f64]| simplex_threshold(vals, total), accuracy)
            .ok_or_else(|| Error::Numerical("non-finite eigenvalue in PSD projection".into()))?;

        let mut z = DMatrix::from_element(n, n, 1.0 / n as f64);
        let mut h = DVector::zeros(n);
        for (idx, &lam) in pairs.values.iter().enumerate() {
            let weight = lam - pairs.cut;
            if weight <= 0.0 {
                continue;
            }
            // h = H [q_idx; 0]
            let mut dot = 0.0;
            for r in 0..n - 1 {
                h[r] = pairs.vectors.read(r, idx);
                dot += w[r] * h[r];
            }
            h[n - 1] = 0.0;
            h.axpy(-beta * dot, w, 1.0);
            z.ger(weight, &h, &h, 1.0);
        }
        Ok(z)
    }
}

/// Threshold `τ` with `Σ max(v − τ, 0) = total`; only the values above `τ`
/// influence it.
pub(crate) fn simplex_threshold(vals: &[f64], total: f64) -> f64 {
    let mut sorted = vals.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (j, &v) in sorted.iter().enumerate() {
        cum += v;
        let t = (cum - total) / (j + 1) as f64;
        if v - t > 0.0 {
            tau = t;
        }
    }
    tau
}

/// Euclidean projection of `vals` onto `{x ≥ 0, Σx = total}`.
#[cfg(test)]
fn project_simplex(vals: &[f64], total: f64) -> Vec<f64> {
    let tau = simplex_threshold(vals, total);
    vals.iter().map(|&v| (v - tau).max(0.0)).collect()
}

/// `X̃_Sᵀ Σ_SS X̃_S`, symmetrized.
pub fn similarity_known_cov(xt_s: &DMatrix<f64>, sigma_ss: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = xt_s.nrows();
    if sigma_ss.shape() != (s, s) {
        return Err(Error::arg(format!(
            "covariance block is {}x{} but the data has {s} selected rows",
            sigma_ss.nrows(),
            sigma_ss.ncols()
        )));
    }
    let m = xt_s.transpose() * (sigma_ss * xt_s);
    Ok(linalg::symmetrize(&m))
}
