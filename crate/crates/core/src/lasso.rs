//! Coordinate-descent lasso along a regularization path with AIC selection.
//!
//! Predictors are standardized to mean 0 and (population) standard
//! deviation 1 and the response is centred; the penalized problem solved at
//! each `λ` is
//!
//! ```text
//! min_β  (1/2m) ‖y_c − X_s β‖² + λ ‖β‖₁
//! ```
//!
//! Coefficients are reported on the original predictor scale and the
//! intercept is recovered from the means. The solver works in covariance
//! mode on the `p × p` sample covariance of a design, so any response column
//! can be regressed on any subset of the remaining columns without
//! touching the raw data again; the ISEE blocks rely on this.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum LambdaGrid {
    /// `len` log-spaced values from `λ_max` down to `min_ratio · λ_max`.
    LogSpaced { len: usize, min_ratio: f64 },
    /// Explicit strictly decreasing positive values.
    Explicit(Vec<f64>),
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid::LogSpaced { len: 50, min_ratio: 1e-3 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LassoOptions {
    /// Largest standardized coefficient change per sweep at convergence.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions { tol: 1e-7, max_sweeps: 1000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub lambda: f64,
    pub aic: f64,
    pub df: usize,
}

#[derive(Debug, Clone)]
pub struct LassoFit {
    pub intercept: f64,
    /// Original-scale coefficients, one per predictor.
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    /// Selected penalty (standardized scale).
    pub lambda: f64,
    pub path: Vec<PathPoint>,
    /// Predictors that were constant and therefore left out of the fit.
    pub constant_predictors: Vec<usize>,
    /// False if some `λ` on the path hit the sweep limit.
    pub converged: bool,
}

impl LassoFit {
    pub fn df(&self) -> usize {
        self.coefficients.iter().filter(|&&b| b != 0.0).count()
    }
}

/// Independent single-response fits sharing one predictor matrix.
#[derive(Debug, Clone)]
pub struct MultiLassoFit {
    pub intercepts: DVector<f64>,
    /// `q × r`.
    pub coefficients: DMatrix<f64>,
    /// `r × m`.
    pub residuals: DMatrix<f64>,
    pub fits: Vec<LassoFit>,
}

/// Fits `y` on the columns of `x` (`m × q`) over `grid`, returning the
/// AIC-minimizing fit.
pub fn lasso_path(x: &DMatrix<f64>, y: &DVector<f64>, grid: &LambdaGrid) -> Result<LassoFit> {
    lasso_path_with(x, y, grid, &LassoOptions::default())
}

pub fn lasso_path_with(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    grid: &LambdaGrid,
    opts: &LassoOptions,
) -> Result<LassoFit> {
    let (m, q) = x.shape();
    if y.len() != m {
        return Err(Error::arg(format!("response has {} entries for {m} samples", y.len())));
    }
    let mut full = x.clone().insert_column(q, 0.0);
    full.set_column(q, y);
    let design = GramDesign::new(full)?;
    let predictors: Vec<usize> = (0..q).collect();
    design.fit(q, &predictors, grid, opts)
}

pub fn lasso_path_multi(x: &DMatrix<f64>, ys: &DMatrix<f64>, grid: &LambdaGrid) -> Result<MultiLassoFit> {
    let (m, q) = x.shape();
    let r = ys.ncols();
    if ys.nrows() != m {
        return Err(Error::arg("response matrix must have one row per sample"));
    }
    let mut full = DMatrix::zeros(m, q + r);
    full.columns_mut(0, q).copy_from(x);
    full.columns_mut(q, r).copy_from(ys);
    let design = GramDesign::new(full)?;
    let predictors: Vec<usize> = (0..q).collect();
    let fits = (0..r)
        .map(|j| design.fit(q + j, &predictors, grid, &LassoOptions::default()))
        .collect::<Result<Vec<_>>>()?;
    Ok(MultiLassoFit {
        intercepts: DVector::from_iterator(r, fits.iter().map(|f| f.intercept)),
        coefficients: DMatrix::from_fn(q, r, |i, j| fits[j].coefficients[i]),
        residuals: DMatrix::from_fn(r, m, |i, j| fits[i].residuals[j]),
        fits,
    })
}

/// Sample moments of an `m × p` data matrix (rows are samples) from which
/// any column can be lasso-regressed on any other columns.
#[derive(Debug, Clone)]
pub struct GramDesign {
    data: DMatrix<f64>,
    means: DVector<f64>,
    sds: DVector<f64>,
    /// Population covariance (divisor `m`).
    cov: DMatrix<f64>,
}

impl GramDesign {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        let m = data.nrows();
        if m < 2 {
            return Err(Error::arg(format!("lasso needs at least 2 samples, got {m}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("lasso data contains non-finite values"));
        }
        let means = data.row_mean().transpose();
        let mut centred = data.clone();
        for (j, mut col) in centred.column_iter_mut().enumerate() {
            col.add_scalar_mut(-means[j]);
        }
        let cov = centred.tr_mul(&centred) / m as f64;
        let sds = DVector::from_iterator(cov.nrows(), (0..cov.nrows()).map(|j| cov[(j, j)].max(0.0).sqrt()));
        Ok(GramDesign { data, means, sds, cov })
    }

    pub fn samples(&self) -> usize {
        self.data.nrows()
    }

    fn is_constant(&self, j: usize) -> bool {
        self.sds[j] <= 1e-12 * (1.0 + self.means[j].abs())
    }

    /// Regresses column `response` on the columns in `predictors`.
    pub fn fit(
        &self,
        response: usize,
        predictors: &[usize],
        grid: &LambdaGrid,
        opts: &LassoOptions,
    ) -> Result<LassoFit> {
        let m = self.samples();
        if predictors.contains(&response) {
            return Err(Error::arg("response column cannot also be a predictor"));
        }
        let (active_cols, constant_predictors): (Vec<(usize, usize)>, Vec<(usize, usize)>) = predictors
            .iter()
            .copied()
            .enumerate()
            .partition(|&(_, g)| !self.is_constant(g));
        let idx: Vec<usize> = active_cols.iter().map(|&(_, g)| g).collect();
        let sd: Vec<f64> = idx.iter().map(|&g| self.sds[g]).collect();
        let c: Vec<f64> = idx.iter().zip(&sd).map(|(&g, s)| self.cov[(g, response)] / s).collect();
        let yy = self.cov[(response, response)];

        let lambda_max = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let lambdas = match grid {
            LambdaGrid::LogSpaced { len, min_ratio } => {
                if *len == 0 || !(*min_ratio > 0.0 && *min_ratio < 1.0) {
                    return Err(Error::arg("log-spaced grid needs len >= 1 and 0 < min_ratio < 1"));
                }
                if lambda_max == 0.0 {
                    vec![0.0]
                } else if *len == 1 {
                    vec![lambda_max]
                } else {
                    (0..*len)
                        .map(|i| lambda_max * min_ratio.powf(i as f64 / (*len - 1) as f64))
                        .collect()
                }
            }
            LambdaGrid::Explicit(v) => {
                if v.is_empty() || v.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
                    return Err(Error::arg("explicit lambda grid must be non-empty and non-negative"));
                }
                if v.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(Error::arg("explicit lambda grid must be strictly decreasing"));
                }
                v.clone()
            }
        };

        let gram = DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.cov[(idx[a], idx[b])] / (sd[a] * sd[b]));
        let mut cd = CoordinateDescent::new(&c, yy);
        let mut path = Vec::with_capacity(lambdas.len());
        let mut best: Option<(f64, f64, Vec<f64>)> = None;
        let mut converged = true;
        for &lam in &lambdas {
            converged &= cd.solve(lam, &gram, opts);
            let rss = (m as f64 * cd.twice_loss()).max(0.0);
            let df = cd.beta.iter().filter(|&&b| b != 0.0).count();
            let aic = m as f64 * (rss / m as f64).ln() + 2.0 * df as f64;
            path.push(PathPoint { lambda: lam, aic, df });
            if best.as_ref().map_or(true, |(a, _, _)| aic < *a) {
                best = Some((aic, lam, cd.beta.clone()));
            }
        }
        let (_, lambda, beta_std) = best.expect("grid is non-empty");

        let mut coefficients = DVector::zeros(predictors.len());
        for ((local, _), b) in active_cols.iter().zip(&beta_std).zip(&sd).map(|((a, b), s)| (a, b / s)) {
            coefficients[*local] = b;
        }
        let mut intercept = self.means[response];
        for (k, &g) in predictors.iter().enumerate() {
            intercept -= coefficients[k] * self.means[g];
        }
        let mut residuals = self.data.column(response) - DVector::from_element(m, intercept);
        for (k, &g) in predictors.iter().enumerate() {
            if coefficients[k] != 0.0 {
                residuals.axpy(-coefficients[k], &self.data.column(g), 1.0);
            }
        }
        Ok(LassoFit {
            intercept,
            coefficients,
            residuals,
            lambda,
            path,
            constant_predictors: constant_predictors.iter().map(|&(l, _)| l).collect(),
            converged,
        })
    }
}

/// Relative KKT tolerance demanded before a path point is accepted.
const KKT_TOL: f64 = 1e-7;

/// Covariance-mode coordinate descent, warm-started across calls.
struct CoordinateDescent<'a> {
    c: &'a [f64],
    yy: f64,
    beta: Vec<f64>,
    /// `c − Gβ`.
    grad: Vec<f64>,
}

fn soft(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

impl<'a> CoordinateDescent<'a> {
    fn new(c: &'a [f64], yy: f64) -> Self {
        CoordinateDescent { c, yy, beta: vec![0.0; c.len()], grad: c.to_vec() }
    }

    /// `(1/m)‖y_c − X_s β‖² = yy − 2cᵀβ + βᵀGβ`.
    fn twice_loss(&self) -> f64 {
        let cb: f64 = self.c.iter().zip(&self.beta).map(|(c, b)| c * b).sum();
        let gb: f64 = self.grad.iter().zip(&self.beta).map(|(g, b)| g * b).sum();
        self.yy - cb - gb
    }

    fn objective(&self, lam: f64) -> f64 {
        0.5 * self.twice_loss() + lam * self.beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    fn kkt_violation(&self, lam: f64) -> f64 {
        self.beta
            .iter()
            .zip(&self.grad)
            .map(|(&b, &g)| if b != 0.0 { (g - lam * b.signum()).abs() } else { (g.abs() - lam).max(0.0) })
            .fold(0.0, f64::max)
    }

    fn refresh_gradient(&mut self, gram: &DMatrix<f64>) {
        let q = self.c.len();
        self.grad.copy_from_slice(self.c);
        for k in 0..q {
            let bk = self.beta[k];
            if bk != 0.0 {
                for (g, &v) in self.grad.iter_mut().zip(gram.column(k).iter()) {
                    *g -= v * bk;
                }
            }
        }
    }

    fn signs(&self) -> Vec<i8> {
        self.beta.iter().map(|&b| if b > 0.0 { 1 } else if b < 0.0 { -1 } else { 0 }).collect()
    }

    /// Solves the stationarity equations on the current signed support and
    /// keeps the result only if it is an exact lasso solution.
    fn polish(&mut self, lam: f64, gram: &DMatrix<f64>) -> bool {
        let signs = self.signs();
        let support: Vec<usize> = (0..signs.len()).filter(|&j| signs[j] != 0).collect();
        if support.is_empty() {
            return false;
        }
        let g_aa = DMatrix::from_fn(support.len(), support.len(), |a, b| gram[(support[a], support[b])]);
        let rhs = DVector::from_iterator(support.len(), support.iter().map(|&j| self.c[j] - lam * signs[j] as f64));
        let Some(chol) = nalgebra::linalg::Cholesky::new(g_aa) else {
            return false;
        };
        let beta_a = chol.solve(&rhs);
        if support.iter().zip(beta_a.iter()).any(|(&j, &b)| b * signs[j] as f64 <= 0.0) {
            return false;
        }
        let saved = (self.beta.clone(), self.grad.clone());
        self.beta.iter_mut().for_each(|b| *b = 0.0);
        for (&j, &b) in support.iter().zip(beta_a.iter()) {
            self.beta[j] = b;
        }
        self.refresh_gradient(gram);
        if self.kkt_violation(lam) <= KKT_TOL * lam {
            return true;
        }
        (self.beta, self.grad) = saved;
        false
    }

    /// Returns false when the sweep limit is reached first.
    fn solve(&mut self, lam: f64, gram: &DMatrix<f64>, opts: &LassoOptions) -> bool {
        let q = self.c.len();
        let mut prev_obj = self.objective(lam);
        let mut prev_signs = self.signs();
        let mut polish_wait = 0usize;
        let mut polish_gap = 1usize;
        for _ in 0..opts.max_sweeps {
            let mut max_change = 0.0f64;
            for j in 0..q {
                let gjj = gram[(j, j)];
                let old = self.beta[j];
                let new = soft(self.grad[j] + gjj * old, lam) / gjj;
                let delta = new - old;
                if delta != 0.0 {
                    self.beta[j] = new;
                    for (g, &v) in self.grad.iter_mut().zip(gram.column(j).iter()) {
                        *g -= v * delta;
                    }
                    max_change = max_change.max(delta.abs());
                }
            }
            let obj = self.objective(lam);
            debug_assert!(
                obj <= prev_obj + 1e-10 * (1.0 + prev_obj.abs()),
                "lasso objective increased: {prev_obj} -> {obj}"
            );
            prev_obj = obj;
            if max_change <= opts.tol {
                self.refresh_gradient(gram);
                if self.kkt_violation(lam) <= KKT_TOL * lam.max(f64::MIN_POSITIVE) || lam == 0.0 && max_change == 0.0 {
                    return true;
                }
            }
            let signs = self.signs();
            if lam > 0.0 && signs == prev_signs {
                if polish_wait == 0 {
                    if self.polish(lam, gram) {
                        return true;
                    }
                    polish_gap *= 2;
                    polish_wait = polish_gap;
                } else {
                    polish_wait -= 1;
                }
            }
            prev_signs = signs;
        }
        self.refresh_gradient(gram);
        false
    }
}

/// Largest KKT violation of `fit` for the standardized problem, relative to
/// `fit.lambda`. Recomputed from the raw data and residuals.
pub fn kkt_violation(x: &DMatrix<f64>, y: &DVector<f64>, fit: &LassoFit) -> f64 {
    let (m, q) = x.shape();
    let resid = {
        let mut r = y - DVector::from_element(m, fit.intercept);
        r -= x * &fit.coefficients;
        r
    };
    let rmean = resid.mean();
    let mut worst = 0.0f64;
    for j in 0..q {
        if fit.constant_predictors.contains(&j) {
            continue;
        }
        let col = x.column(j);
        let mean = col.mean();
        let sd = (col.map(|v| (v - mean).powi(2)).sum() / m as f64).sqrt();
        let grad: f64 = col.iter().zip(resid.iter()).map(|(v, r)| (v - mean) / sd * (r - rmean)).sum::<f64>() / m as f64;
        let b = fit.coefficients[j];
        let v = if b != 0.0 { (grad - fit.lambda * b.signum()).abs() } else { (grad.abs() - fit.lambda).max(0.0) };
        worst = worst.max(v);
    }
    worst / fit.lambda
}
