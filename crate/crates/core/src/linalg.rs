//! Dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::operator::C64;

/// Eigenpairs of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(m: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    // symmetrize to remove rounding asymmetry before the solver sees it
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (new, &old) in order.iter().enumerate() {
        vecs.set_column(new, &eig.eigenvectors.column(old));
    }
    (vals, vecs)
}

/// `f(H) v` for Hermitian `H` through its eigendecomposition.
pub fn hermitian_function_apply(m: &DMatrix<C64>, v: &[C64], f: impl Fn(f64) -> C64) -> Vec<C64> {
    let (vals, vecs) = hermitian_eigen(m);
    let x = DVector::from_column_slice(v);
    let mut c = vecs.adjoint() * x;
    for (k, ev) in vals.iter().enumerate() {
        c[k] *= f(*ev);
    }
    (vecs * c).iter().copied().collect()
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<C64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().iter().copied().fold(0.0, f64::max)
}

/// Smallest singular value.
pub fn min_singular_value(m: &DMatrix<C64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    m.clone().singular_values().iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn to_dvector(v: &[C64]) -> DVector<C64> {
    DVector::from_column_slice(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_and_orthonormal() {
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[C64::new(2.0, 0.0), C64::new(0.0, 1.0), C64::new(0.0, -1.0), C64::new(-1.0, 0.0)],
        );
        let (vals, vecs) = hermitian_eigen(&m);
        assert!(vals[0] < vals[1]);
        let id = vecs.adjoint() * &vecs;
        assert!((id - DMatrix::identity(2, 2)).norm() < 1e-13);
        let back = &vecs * DMatrix::from_diagonal(&DVector::from_iterator(2, vals.iter().map(|&x| C64::new(x, 0.0)))) * vecs.adjoint();
        assert!((back - m).norm() < 1e-13);
    }
}
