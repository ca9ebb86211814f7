//! Small dense helpers on top of nalgebra used by the oracle and diagnostics.

use nalgebra::SymmetricEigen;

use crate::types::{Mat, Vector};

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
/// Eigenvectors are the columns of the returned matrix, in matching order.
pub fn sym_eigen_desc(a: &Mat) -> (Vector, Mat) {
    let eig = SymmetricEigen::new(symmetrize(a));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = Vector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Mat::zeros(a.nrows(), order.len());
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &Mat) -> Mat {
    (a + a.transpose()) * 0.5
}

/// Inverse square root of a symmetric positive definite matrix.
pub fn inv_sqrt_spd(a: &Mat) -> Option<Mat> {
    let (values, vectors) = sym_eigen_desc(a);
    if values.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
        return None;
    }
    let scale = Mat::from_diagonal(&values.map(|v| 1.0 / v.sqrt()));
    Some(&vectors * scale * vectors.transpose())
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn inv_spd(a: &Mat) -> Option<Mat> {
    a.clone().cholesky().map(|c| c.inverse())
}

/// Singular values in descending order.
pub fn singular_values_desc(a: &Mat) -> Vector {
    if a.is_empty() {
        return Vector::zeros(0);
    }
    let mut sv: Vec<f64> = a.singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    Vector::from_vec(sv)
}

pub fn all_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> bool {
    values.into_iter().all(|v| v.is_finite())
}

/// Orthogonal projector onto the row space of `rows` (assumed full row rank).
pub fn row_space_projector(rows: &Mat) -> Option<Mat> {
    let gram = rows * rows.transpose();
    let inv = gram.try_inverse()?;
    Some(rows.transpose() * inv * rows)
}
