//! Leading eigenpairs of a slowly varying symmetric matrix.
//!
//! The caller asks for every eigenpair above a cut that is itself a function
//! of the leading eigenvalues. A block of Ritz vectors is carried from call
//! to call and refined by Rayleigh–Ritz on `[Q, MQ]`. The result is accepted
//! only when every Ritz pair above the cut has a tiny residual and a
//! Bunch–Kaufman inertia count of `M − sI` confirms that no eigenvalue above
//! the cut was missed; otherwise a full eigendecomposition is used.

use faer::dyn_stack::{GlobalPodBuffer, PodStack};
use faer::linalg::cholesky::bunch_kaufman::compute as bk;
use faer::{Mat, MatRef, Parallelism, Side};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Columns kept beyond the ones above the cut.
const EXTRA: usize = 8;
const MAX_REFINE: usize = 4;
/// Number of blocks in the Krylov space.
const KRYLOV_DEPTH: usize = 4;
/// The inertia shift sits this far (relative) below the cut.
const SHIFT_GAP: f64 = 1e-9;
/// Use the partial path only while the block is at most this fraction of `N`.
const MAX_BLOCK_FRACTION: f64 = 0.25;

/// Eigenpairs above the cut, largest first.
pub(crate) struct TopPairs {
    pub values: Vec<f64>,
    pub vectors: Mat<f64>,
    pub cut: f64,
}

pub(crate) struct TopEigenTracker {
    basis: Option<Mat<f64>>,
    rng: ChaCha8Rng,
    pub(crate) full_solves: usize,
    pub(crate) partial_solves: usize,
}

impl TopEigenTracker {
    pub(crate) fn new() -> Self {
        TopEigenTracker { basis: None, rng: ChaCha8Rng::seed_from_u64(0x5EED), full_solves: 0, partial_solves: 0 }
    }

    /// `cut` maps the leading eigenvalues (descending) to the threshold; it
    /// must depend only on the values above the threshold it returns.
    /// `accuracy` bounds the Ritz residuals relative to the largest Ritz
    /// value; the full path is exact regardless.
    pub(crate) fn top_above(
        &mut self,
        m: MatRef<'_, f64>,
        cut: &dyn Fn(&[f64]) -> f64,
        accuracy: f64,
    ) -> Option<TopPairs> {
        if let Some(q) = self.basis.take() {
            if let Some(pairs) = self.partial(m, q, cut, accuracy) {
                self.partial_solves += 1;
                return Some(pairs);
            }
        }
        self.full_solves += 1;
        self.full(m, cut)
    }

    fn full(&mut self, m: MatRef<'_, f64>, cut: &dyn Fn(&[f64]) -> f64) -> Option<TopPairs> {
        let n = m.nrows();
        let evd = m.selfadjoint_eigendecomposition(Side::Lower);
        let s = evd.s().column_vector();
        let u = evd.u();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| s.read(b).total_cmp(&s.read(a)));
        let desc: Vec<f64> = order.iter().map(|&i| s.read(i)).collect();
        if desc.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let tau = cut(&desc);
        let r = desc.iter().take_while(|&&v| v > tau).count();
        let vectors = Mat::from_fn(n, r, |i, j| u.read(i, order[j]));
        let b = (r + EXTRA).min(n);
        if (b as f64) <= MAX_BLOCK_FRACTION * n as f64 {
            self.basis = Some(Mat::from_fn(n, b, |i, j| u.read(i, order[j])));
        }
        Some(TopPairs { values: desc[..r].to_vec(), vectors, cut: tau })
    }

    fn partial(
        &mut self,
        m: MatRef<'_, f64>,
        mut q: Mat<f64>,
        cut: &dyn Fn(&[f64]) -> f64,
        accuracy: f64,
    ) -> Option<TopPairs> {
        let n = m.nrows();
        let b = q.ncols();
        for _ in 0..MAX_REFINE {
            let (theta, x, resid) = rayleigh_ritz(m, &q);
            let scale = theta.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
            let tau = cut(&theta);
            let shift = tau - SHIFT_GAP * scale;
            let r = theta.iter().take_while(|&&v| v > shift).count();
            if r == b {
                return None;
            }
            let accurate = resid[..r].iter().all(|&e| e <= accuracy * scale);
            if !accurate {
                q = x;
                continue;
            }
            if count_above(m, shift)? != r {
                return None;
            }
            let keep = theta.iter().take_while(|&&v| v > tau).count();
            let vectors = Mat::from_fn(n, keep, |i, j| x.read(i, j));
            self.basis = Some(self.resize(x, r));
            return Some(TopPairs { values: theta[..keep].to_vec(), vectors, cut: tau });
        }
        None
    }

    /// Keeps `r + EXTRA` columns, padding with random directions.
    fn resize(&mut self, x: Mat<f64>, r: usize) -> Mat<f64> {
        let n = x.nrows();
        let want = (r + EXTRA).min(n);
        if want == x.ncols() {
            return x;
        }
        Mat::from_fn(n, want, |i, j| if j < x.ncols() { x.read(i, j) } else { StandardNormal.sample(&mut self.rng) })
    }
}

/// Rayleigh–Ritz on the block Krylov space `span[Q, MQ, …, M^{d−1}Q]`;
/// returns the leading `b` Ritz values (descending), their vectors and
/// residual norms.
fn rayleigh_ritz(m: MatRef<'_, f64>, q: &Mat<f64>) -> (Vec<f64>, Mat<f64>, Vec<f64>) {
    let n = m.nrows();
    let b = q.ncols();
    let mut stacked = Mat::<f64>::zeros(n, KRYLOV_DEPTH * b);
    let mut block = q.clone();
    for d in 0..KRYLOV_DEPTH {
        if d > 0 {
            block = m * &block;
            // keep the blocks at comparable scale
            let norm = block.norm_max();
            if norm > 0.0 {
                block = &block * (1.0 / norm);
            }
        }
        stacked.as_mut().submatrix_mut(0, d * b, n, b).copy_from(&block);
    }
    let v = stacked.qr().compute_thin_q();
    let mv = m * &v;
    let h = v.transpose() * &mv;
    let hs = Mat::from_fn(h.nrows(), h.ncols(), |i, j| 0.5 * (h.read(i, j) + h.read(j, i)));
    let evd = hs.selfadjoint_eigendecomposition(Side::Lower);
    let s = evd.s().column_vector();
    let k = hs.nrows();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &c| s.read(c).total_cmp(&s.read(a)));
    let y = Mat::from_fn(k, b, |i, j| evd.u().read(i, order[j]));
    let theta: Vec<f64> = order[..b].iter().map(|&i| s.read(i)).collect();
    let x = &v * &y;
    let mx = &mv * &y;
    let resid = (0..b)
        .map(|j| (0..n).map(|i| (mx.read(i, j) - theta[j] * x.read(i, j)).powi(2)).sum::<f64>().sqrt())
        .collect();
    (theta, x, resid)
}

/// Number of eigenvalues of `m` strictly above `shift`, by Sylvester's law of
/// inertia on a Bunch–Kaufman factorisation of `m − shift·I`.
fn count_above(m: MatRef<'_, f64>, shift: f64) -> Option<usize> {
    let n = m.nrows();
    let mut f = Mat::from_fn(n, n, |i, j| if i >= j { m.read(i, j) - if i == j { shift } else { 0.0 } } else { 0.0 });
    let mut subdiag = Mat::<f64>::zeros(n, 1);
    let mut perm = vec![0usize; n];
    let mut perm_inv = vec![0usize; n];
    let params = bk::BunchKaufmanParams::default();
    let req = bk::cholesky_in_place_req::<usize, f64>(n, Parallelism::None, params).ok()?;
    let mut buf = GlobalPodBuffer::new(req);
    bk::cholesky_in_place(
        f.as_mut(),
        subdiag.as_mut().col_mut(0),
        Default::default(),
        &mut perm,
        &mut perm_inv,
        Parallelism::None,
        PodStack::new(&mut buf),
        params,
    );
    let mut count = 0;
    let mut i = 0;
    while i < n {
        let off = subdiag.read(i, 0);
        if off != 0.0 && i + 1 < n {
            let (a, c) = (f.read(i, i), f.read(i + 1, i + 1));
            let det = a * c - off * off;
            let trace = a + c;
            if !det.is_finite() {
                return None;
            }
            count += if det < 0.0 {
                1
            } else if det > 0.0 && trace > 0.0 {
                2
            } else {
                0
            };
            i += 2;
        } else {
            let d = f.read(i, i);
            if !d.is_finite() {
                return None;
            }
            count += usize::from(d > 0.0);
            i += 1;
        }
    }
    Some(count)
}
