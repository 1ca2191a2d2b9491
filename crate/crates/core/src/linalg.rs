//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Thin SVD with singular values sorted in decreasing order.
pub(crate) fn sorted_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let u = DMatrix::from_fn(u.nrows(), order.len(), |i, j| u[(i, order[j])]);
    let vt = DMatrix::from_fn(order.len(), vt.ncols(), |i, j| vt[(order[i], j)]);
    let s = DVector::from_iterator(order.len(), order.iter().map(|&j| s[j]));
    (u, s, vt)
}

fn default_tol(m: &DMatrix<f64>, smax: f64) -> f64 {
    (m.nrows().max(m.ncols()) as f64) * f64::EPSILON * smax
}

/// Moore-Penrose pseudoinverse with the usual `max(m, n) * eps * sigma_max` cutoff.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.is_empty() {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let (u, s, vt) = sorted_svd(m);
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let tol = default_tol(m, smax);
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for (j, &sv) in s.iter().enumerate() {
        if sv > tol && sv > 0.0 {
            out += (vt.row(j).transpose() / sv) * u.column(j).transpose();
        }
    }
    out
}

/// Orthonormal basis for the column space, keeping at most `max_rank`
/// leading directions (numerically zero directions are always dropped).
pub fn orthonormal_basis(m: &DMatrix<f64>, max_rank: Option<usize>) -> DMatrix<f64> {
    if m.is_empty() {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let (u, s, _) = sorted_svd(m);
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let tol = default_tol(m, smax).max(f64::MIN_POSITIVE);
    let mut rank = s.iter().filter(|&&v| v > tol).count();
    if let Some(r) = max_rank {
        rank = rank.min(r);
    }
    u.columns(0, rank).into_owned()
}

/// Leading `r` left singular vectors, via the eigendecomposition of the
/// smaller Gram matrix.
pub fn leading_left_subspace(m: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let r = r.min(m.nrows()).min(m.ncols());
    if r == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    if m.nrows() <= m.ncols() {
        let eig = SymmetricEigen::new(m * m.transpose());
        let order = descending(&eig.eigenvalues);
        DMatrix::from_fn(m.nrows(), r, |i, j| eig.eigenvectors[(i, order[j])])
    } else {
        let eig = SymmetricEigen::new(m.transpose() * m);
        let order = descending(&eig.eigenvalues);
        let v = DMatrix::from_fn(m.ncols(), r, |i, j| eig.eigenvectors[(i, order[j])]);
        orthonormal_basis(&(m * v), Some(r))
    }
}

fn descending(v: &DVector<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
    order
}

/// Inverse square root of a symmetric positive semidefinite matrix;
/// eigenvalues below `floor` are treated as `floor`.
pub(crate) fn sym_inv_sqrt(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let d = eig.eigenvalues.map(|v| 1.0 / v.max(floor).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}
