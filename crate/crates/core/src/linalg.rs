//! Dense linear-algebra helpers on top of `nalgebra`, with symmetric
//! eigendecompositions delegated to `faer`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigendecomposition of a symmetric matrix; eigenvalues ascending, the
/// `i`-th column of `vectors` pairs with `values[i]`.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

/// Only the lower triangle of `m` is read.
pub fn sym_eigen(m: &DMatrix<f64>) -> Result<SymEigen> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::arg("eigendecomposition needs a square matrix"));
    }
    if n == 0 {
        return Ok(SymEigen { values: DVector::zeros(0), vectors: DMatrix::zeros(0, 0) });
    }
    let fm = faer::Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)]);
    let evd = fm.selfadjoint_eigendecomposition(faer::Side::Lower);
    let s = evd.s().column_vector();
    let u = evd.u();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s.read(a).total_cmp(&s.read(b)));
    let values = DVector::from_iterator(n, order.iter().map(|&i| s.read(i)));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, dst)] = u.read(r, src);
        }
    }
    if values.iter().any(|v| !v.is_finite()) || vectors.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "symmetric eigensolver returned non-finite output for a {n}x{n} matrix"
        )));
    }
    Ok(SymEigen { values, vectors })
}

pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let fm = faer::Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)]);
    let mut vals = fm.selfadjoint_eigenvalues(faer::Side::Lower);
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite eigenvalue".into()));
    }
    vals.sort_by(f64::total_cmp);
    Ok(vals)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    Ok(sym_eigenvalues(m)?.first().copied().unwrap_or(0.0))
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    Ok(sym_eigenvalues(m)?.last().copied().unwrap_or(0.0))
}

/// Largest eigenvalues' eigenvectors, leading one first.
pub fn top_eigenvectors(m: &DMatrix<f64>, count: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let eig = sym_eigen(m)?;
    let n = m.nrows();
    let count = count.min(n);
    let mut vals = Vec::with_capacity(count);
    let mut vecs = DMatrix::zeros(n, count);
    for c in 0..count {
        let src = n - 1 - c;
        vals.push(eig.values[src]);
        vecs.set_column(c, &eig.vectors.column(src));
    }
    Ok((vals, vecs))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Frobenius inner product `<a, b>`.
pub fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Inverse of a symmetric positive-definite matrix through its Cholesky
/// factor; the result is symmetrized.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = nalgebra::linalg::Cholesky::new(m.clone())
        .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Lower-triangular Cholesky factor `L` with `m = L Lᵀ`.
pub fn cholesky_lower(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    nalgebra::linalg::Cholesky::new(m.clone())
        .map(|c| c.l())
        .ok_or_else(|| Error::Numerical("Cholesky factorization failed".into()))
}

pub fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

pub fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

/// Mean of the given columns of `m`.
pub fn column_mean(m: &DMatrix<f64>, cols: &[usize]) -> DVector<f64> {
    let mut acc = DVector::zeros(m.nrows());
    for &c in cols {
        acc += m.column(c);
    }
    acc / cols.len() as f64
}

/// Spectral condition number of a symmetric matrix, `inf` when singular.
pub fn sym_condition(m: &DMatrix<f64>) -> Result<f64> {
    let vals = sym_eigenvalues(m)?;
    let lo = vals.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    let hi = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(if lo == 0.0 { f64::INFINITY } else { hi / lo })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_matches_known_spectrum() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 5.0]);
        let e = sym_eigen(&m).unwrap();
        let want = [1.0, 3.0, 5.0];
        for (v, w) in e.values.iter().zip(want) {
            assert!((v - w).abs() < 1e-12);
        }
        let rebuilt = &e.vectors * DMatrix::from_diagonal(&e.values) * e.vectors.transpose();
        assert!((rebuilt - &m).norm() < 1e-12);
    }

    #[test]
    fn spd_inverse_roundtrip() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let inv = spd_inverse(&m).unwrap();
        assert!((&m * inv - DMatrix::identity(2, 2)).norm() < 1e-14);
        let not_pd = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(spd_inverse(&not_pd).is_err());
    }
}
