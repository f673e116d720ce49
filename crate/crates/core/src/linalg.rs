//! Dense linear-algebra helpers shared by the solver, synthesis and graph code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative threshold used for numerical rank decisions:
/// `max(rows, cols) * eps * sigma_max`.
pub fn rank_threshold(m: &DMatrix<f64>) -> f64 {
    let sigma_max = singular_values(m).iter().cloned().fold(0.0, f64::max);
    (m.nrows().max(m.ncols()) as f64) * f64::EPSILON * sigma_max
}

pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().cloned().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Numerical rank. `tol` overrides the default relative threshold.
pub fn numerical_rank(m: &DMatrix<f64>, tol: Option<f64>) -> usize {
    let s = singular_values(m);
    let thr = tol.unwrap_or_else(|| rank_threshold(m));
    s.iter().filter(|&&v| v > thr).count()
}

/// Moore–Penrose pseudo-inverse.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let thr = rank_threshold(m);
    let svd = m.clone().svd(true, true);
    svd.pseudo_inverse(thr.max(f64::MIN_POSITIVE)).expect("svd computed with both factors")
}

/// Orthonormal basis of the right null space of `m` (as columns).
pub fn null_space(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.ncols();
    let proj = DMatrix::identity(n, n) - pinv(m) * m;
    let svd = proj.svd(true, false);
    let u = svd.u.expect("left factor requested");
    let cols: Vec<usize> = (0..n).filter(|&k| svd.singular_values[k] > 0.5).collect();
    let mut out = DMatrix::zeros(n, cols.len());
    for (j, &k) in cols.iter().enumerate() {
        out.set_column(j, &u.column(k));
    }
    out
}

/// Column-stacking vectorisation.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_sym_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    symmetrize(m).symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Eigenvalues of a general real matrix as `(re, im)` pairs.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<(f64, f64)> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.clone().complex_eigenvalues().iter().map(|z| (z.re, z.im)).collect()
}

pub fn max_real_eig(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().map(|z| z.0).fold(f64::NEG_INFINITY, f64::max)
}

pub fn min_real_eig(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().map(|z| z.0).fold(f64::INFINITY, f64::min)
}

pub fn is_hurwitz(m: &DMatrix<f64>) -> bool {
    max_real_eig(m) < 0.0
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).first().cloned().unwrap_or(0.0)
}

/// Rank of the complex matrix `re + i·im`, computed on the real embedding
/// `[[re, -im], [im, re]]` whose rank is twice the complex rank.
pub fn complex_rank(re: &DMatrix<f64>, im: &DMatrix<f64>, tol: Option<f64>) -> usize {
    let (r, c) = re.shape();
    let mut big = DMatrix::zeros(2 * r, 2 * c);
    big.view_mut((0, 0), (r, c)).copy_from(re);
    big.view_mut((0, c), (r, c)).copy_from(&(-im));
    big.view_mut((r, 0), (r, c)).copy_from(im);
    big.view_mut((r, c), (r, c)).copy_from(re);
    numerical_rank(&big, tol) / 2
}

/// Solves `A P + P Aᵀ + Q = 0` through its Kronecker form.
pub fn lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.shape() != (n, n) {
        return Err(Error::Dimension("lyapunov operands must be square and equal".into()));
    }
    let id = DMatrix::<f64>::identity(n, n);
    let op = id.kronecker(a) + a.kronecker(&id);
    let rhs = -vec_of(q);
    let sol = op.lu().solve(&rhs).ok_or_else(|| Error::Numerical("singular Lyapunov operator".into()))?;
    Ok(symmetrize(&unvec(&sol, n, n)))
}

/// Vertical concatenation of matrices with equal column counts.
pub fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map(|b| b.ncols()).unwrap_or(0);
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

/// Horizontal concatenation of matrices with equal row counts.
pub fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map(|b| b.nrows()).unwrap_or(0);
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.view_mut((0, c), (rows, b.ncols())).copy_from(*b);
        c += b.ncols();
    }
    out
}

pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Builds a matrix from row-major nested vectors.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map(|x| x.len()).unwrap_or(0);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}
