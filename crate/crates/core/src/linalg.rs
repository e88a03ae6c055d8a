//! Dense linear-algebra helpers: numerical rank, null spaces, orthonormal
//! bases, and symmetric positive-definite utilities.
//!
//! Rank decisions compare singular values against `rel_tol * scale`, where
//! `scale` is normally the largest singular value of the matrix itself. When the
//! matrix is a product such as `L * V` with orthonormal `V`, the caller passes
//! `‖L‖` as the scale so that an image that is numerically zero is not promoted
//! to rank one by its own round-off.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::rng::{gaussian_matrix, Rng};

/// Singular values in descending order. Empty matrices have none.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Operator 2-norm.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Numerical rank relative to the matrix's own largest singular value.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&top) if top > 0.0 => s.iter().filter(|&&x| x > rel_tol * top).count(),
        _ => 0,
    }
}

/// Numerical rank with singular values compared to `rel_tol * scale`.
pub fn rank_with_scale(m: &DMatrix<f64>, rel_tol: f64, scale: f64) -> usize {
    if scale <= 0.0 {
        return 0;
    }
    singular_values(m)
        .iter()
        .filter(|&&x| x > rel_tol * scale)
        .count()
}

/// Full SVD with singular values sorted descending.
///
/// Returns `(U, s, V)` where `U` is `rows x min(rows, cols)` and `V` is
/// `cols x cols` (rows are zero-padded so that the right factor is square).
fn sorted_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let (rows, cols) = m.shape();
    let padded = if rows < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let v = DMatrix::from_fn(cols, order.len(), |r, c| vt[(order[c], r)]);
    let u_rows = rows.min(u.nrows());
    let keep = rows.min(cols);
    let u_sorted = DMatrix::from_fn(u_rows, keep, |r, c| u[(r, order[c])]);
    (u_sorted, s, v)
}

/// Orthonormal basis (as columns) of the null space of `m`.
///
/// The rank is decided against `rel_tol * scale`; pass `None` to use the
/// largest singular value of `m`.
pub fn null_space(m: &DMatrix<f64>, rel_tol: f64, scale: Option<f64>) -> DMatrix<f64> {
    let cols = m.ncols();
    if cols == 0 {
        return DMatrix::zeros(0, 0);
    }
    if m.nrows() == 0 {
        return DMatrix::identity(cols, cols);
    }
    let (_, s, v) = sorted_svd(m);
    let scale = scale.unwrap_or_else(|| s.first().copied().unwrap_or(0.0));
    let rank = if scale > 0.0 {
        s.iter().filter(|&&x| x > rel_tol * scale).count()
    } else {
        0
    };
    v.columns(rank, cols - rank).into_owned()
}

/// Orthonormal basis of the column space of `m`.
pub fn column_space(m: &DMatrix<f64>, rel_tol: f64, scale: Option<f64>) -> DMatrix<f64> {
    let rows = m.nrows();
    if rows == 0 || m.ncols() == 0 {
        return DMatrix::zeros(rows, 0);
    }
    let (u, s, _) = sorted_svd(m);
    let scale = scale.unwrap_or_else(|| s.first().copied().unwrap_or(0.0));
    let rank = if scale > 0.0 {
        s.iter().filter(|&&x| x > rel_tol * scale).count()
    } else {
        0
    };
    u.columns(0, rank.min(u.ncols())).into_owned()
}

/// Orthonormalises the columns of a full-column-rank matrix by QR, with the
/// signs fixed so that `R` has a positive diagonal. Applied to a Gaussian
/// matrix this yields a Haar-distributed frame.
pub fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let k = m.ncols();
    if k == 0 {
        return m.clone();
    }
    let qr = m.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for c in 0..k {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    q
}

/// Haar-random `n x k` frame with orthonormal columns.
pub fn random_frame(rng: &mut Rng, n: usize, k: usize) -> DMatrix<f64> {
    if k == 0 {
        return DMatrix::zeros(n, 0);
    }
    loop {
        let g = gaussian_matrix(rng, n, k);
        if numerical_rank(&g, 1e-10) == k {
            return orthonormalize(&g);
        }
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted descending.
/// Ties are kept in the order returned by the solver (stable sort).
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute asymmetry `max |m - m^T|` relative to `max(1, max |m|)`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() / scale
}

/// `log det` of a symmetric positive-definite matrix, or `None` when the
/// Cholesky factorisation fails.
pub fn spd_log_det(m: &DMatrix<f64>) -> Option<f64> {
    if m.nrows() == 0 {
        return Some(0.0);
    }
    let chol = Cholesky::new(symmetrize(m))?;
    let l = chol.l_dirty();
    let mut acc = 0.0;
    for i in 0..m.nrows() {
        let d = l[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        acc += d.ln();
    }
    Some(2.0 * acc)
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Some(m.clone());
    }
    let chol = Cholesky::new(symmetrize(m))?;
    Some(symmetrize(&chol.inverse()))
}

/// `m^t` for symmetric positive-definite `m` through its eigendecomposition.
pub fn spd_power(m: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let (values, vectors) = sym_eigen_desc(m);
    let d = DVector::from_iterator(values.len(), values.iter().map(|&v| v.max(0.0).powf(t)));
    &vectors * DMatrix::from_diagonal(&d) * vectors.transpose()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    sym_eigen_desc(m).0.last().copied().unwrap_or(f64::INFINITY)
}

/// Orthogonal projector `B B^T` onto the span of orthonormal columns `B`.
pub fn projector(basis: &DMatrix<f64>) -> DMatrix<f64> {
    basis * basis.transpose()
}

/// Orthonormal basis of the orthogonal complement of the span of the
/// orthonormal columns `basis` in `R^n`.
pub fn complement(basis: &DMatrix<f64>, n: usize, rel_tol: f64) -> DMatrix<f64> {
    if basis.ncols() == 0 {
        return DMatrix::identity(n, n);
    }
    null_space(&basis.transpose(), rel_tol, Some(1.0))
}

/// Largest deviation of `B^T B` from the identity.
pub fn orthonormality_defect(basis: &DMatrix<f64>) -> f64 {
    let k = basis.ncols();
    if k == 0 {
        return 0.0;
    }
    (basis.transpose() * basis - DMatrix::<f64>::identity(k, k)).amax()
}
