//! Small dense linear-algebra helpers shared by the estimators and bounds.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::C64;

/// Reciprocal condition number below which a matrix is treated as singular.
pub(crate) const RCOND_SINGULAR: f64 = 1e-12;

/// Relative singular-value cutoff used for rank decisions.
pub(crate) const RANK_TOL: f64 = 1e-10;

/// Orthonormal basis of the column space of `g` (rank-revealing SVD).
pub(crate) fn column_basis(g: &DMatrix<C64>) -> DMatrix<C64> {
    if g.ncols() == 0 {
        return DMatrix::zeros(g.nrows(), 0);
    }
    let svd = g.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.max();
    // nalgebra does not sort singular values; gather the significant columns.
    let cols: Vec<DVector<C64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| smax > 0.0 && s > RANK_TOL * smax)
        .map(|(j, _)| u.column(j).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(g.nrows(), 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// `(I - P_g) x` where `P_g` projects onto the column space of `g`.
pub(crate) fn project_out(g: &DMatrix<C64>, x: &DMatrix<C64>) -> DMatrix<C64> {
    let q = column_basis(g);
    if q.ncols() == 0 {
        return x.clone();
    }
    x - &q * q.ad_mul(x)
}

/// Reciprocal 2-norm condition number of a real matrix.
pub(crate) fn rcond(a: &DMatrix<f64>) -> f64 {
    let sv = a.singular_values();
    let max = sv.max();
    if max == 0.0 {
        0.0
    } else {
        sv.min() / max
    }
}

/// Inverse of a real symmetric matrix, or `None` when it is numerically singular.
pub(crate) fn inverse_if_regular(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if a.nrows() == 0 || rcond(a) < RCOND_SINGULAR {
        return None;
    }
    a.clone().try_inverse().map(|m| (&m + m.transpose()) * 0.5)
}

/// Hermitian eigen-decomposition with eigenvalues sorted ascending.
pub(crate) fn hermitian_eigen(a: &DMatrix<C64>) -> (DVector<f64>, DMatrix<C64>) {
    let herm = (a + a.adjoint()) * C64::from(0.5);
    let eig = SymmetricEigen::new(herm);
    let n = eig.eigenvalues.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = DVector::from_fn(n, |k, _| eig.eigenvalues[idx[k]]);
    let cols: Vec<DVector<C64>> = idx.iter().map(|&k| eig.eigenvectors.column(k).into_owned()).collect();
    (vals, DMatrix::from_columns(&cols))
}

/// Projection of a Hermitian matrix onto the PSD cone.
pub(crate) fn psd_projection(a: &DMatrix<C64>) -> DMatrix<C64> {
    let (vals, vecs) = hermitian_eigen(a);
    let n = a.nrows();
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        let lam = vals[k];
        if lam > 0.0 {
            let v = vecs.column(k);
            out += v * v.adjoint() * C64::from(lam);
        }
    }
    out
}

/// Moore–Penrose pseudo-inverse of a complex matrix.
pub(crate) fn pinv(a: &DMatrix<C64>) -> DMatrix<C64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = (RANK_TOL * smax).max(f64::MIN_POSITIVE);
    svd.pseudo_inverse(eps).expect("non-negative epsilon")
}
