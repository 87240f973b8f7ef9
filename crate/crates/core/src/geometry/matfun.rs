use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{symmetrized, SpdMatrix, SymMatrix};
use crate::error::{Error, Result};

fn reconstruct(vectors: &DMatrix<f64>, values: &DVector<f64>) -> DMatrix<f64> {
    let scaled = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |i, j| {
        vectors[(i, j)] * values[j]
    });
    symmetrized(&(scaled * vectors.transpose()))
}

/// Matrix logarithm `P log(Lambda) P^T`.
pub fn mat_log(y: &SpdMatrix) -> Result<SymMatrix> {
    if let Some(&bad) = y
        .eigenvalues()
        .iter()
        .find(|&&l| !(l > y.eig_floor()) || !l.is_finite())
    {
        return Err(Error::NotPositiveDefinite {
            eigenvalue: bad,
            tolerance: y.eig_floor(),
        });
    }
    let logs = y.eigenvalues().map(f64::ln);
    Ok(SymMatrix::from_symmetric_unchecked(reconstruct(
        y.eigenvectors(),
        &logs,
    )))
}

/// Matrix exponential of a symmetric matrix, through its eigendecomposition.
pub fn mat_exp(u: &SymMatrix) -> SpdMatrix {
    let eig = SymmetricEigen::new(u.as_matrix().clone());
    let values = eig.eigenvalues.map(f64::exp);
    SpdMatrix::from_eigen(values, eig.eigenvectors)
}

/// Log-Euclidean distance `||log S1 - log S2||_F`.
pub fn geodesic_dist(s1: &SpdMatrix, s2: &SpdMatrix) -> Result<f64> {
    if s1.dim() != s2.dim() {
        return Err(Error::DimensionMismatch {
            expected: s1.dim(),
            found: s2.dim(),
        });
    }
    Ok((&mat_log(s1)? - &mat_log(s2)?).frobenius_norm())
}
