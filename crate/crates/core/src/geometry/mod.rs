//! Log-Euclidean geometry of the SPD manifold.
//!
//! Symmetric matrices are identified with coefficient vectors through the
//! orthonormal basis in [`basis`]. Matrix log/exp go through a symmetric
//! eigendecomposition, and the differential of `exp` at `log S` is represented
//! as a `d x d` matrix built from its truncated power series. Its inverse
//! represents `log'_S`, which is what maps tangent noise at a mean onto the
//! log domain.

mod basis;
mod differential;
mod matfun;

use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub use basis::{sym_basis, sym_dim, unvec_sym, vec_sym, SymBasis};
pub use differential::{
    dexp_operator, dlog_operator, exp_map, log_map, ExpChart, LinOpMatrix, Truncation,
    MAX_CONDITION,
};
pub use matfun::{geodesic_dist, mat_exp, mat_log};

/// Eigenvalues must exceed this fraction of the largest eigenvalue.
pub const SPD_RELATIVE_TOL: f64 = 1e-10;

/// Relative asymmetry accepted (and then averaged away) on construction.
const SYMMETRY_TOL: f64 = 1e-9;

fn check_square(a: &DMatrix<f64>) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            found: a.ncols(),
        });
    }
    if a.nrows() == 0 {
        return Err(Error::InvalidDimension("empty matrix".into()));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(a.nrows())
}

fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let m = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..m {
        for j in 0..i {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

fn symmetrized(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Element of `Sym(m)`; entries are exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Accepts a matrix that is symmetric up to round-off, then averages the
    /// two triangles.
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        check_square(&a)?;
        let asym = max_asymmetry(&a);
        if asym > SYMMETRY_TOL * a.amax().max(1.0) {
            return Err(Error::NotSymmetric {
                max_asymmetry: asym,
            });
        }
        Ok(Self(symmetrized(&a)))
    }

    /// Projects any square matrix onto `Sym(m)` as `(A + A^T) / 2`.
    pub fn symmetrize(a: DMatrix<f64>) -> Result<Self> {
        check_square(&a)?;
        Ok(Self(symmetrized(&a)))
    }

    pub(crate) fn from_symmetric_unchecked(a: DMatrix<f64>) -> Self {
        debug_assert_eq!(max_asymmetry(&a), 0.0);
        Self(a)
    }

    pub fn zeros(m: usize) -> Self {
        Self(DMatrix::zeros(m, m))
    }

    pub fn identity(m: usize) -> Self {
        Self(DMatrix::identity(m, m))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &rhs.0)
    }
}

impl Mul<f64> for &SymMatrix {
    type Output = SymMatrix;
    fn mul(self, rhs: f64) -> SymMatrix {
        SymMatrix(&self.0 * rhs)
    }
}

/// Symmetric positive definite matrix, stored with its eigendecomposition.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    entries: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    eig_floor: f64,
}

impl SpdMatrix {
    /// Validates symmetry and `lambda_min > SPD_RELATIVE_TOL * lambda_max`.
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        let sym = SymMatrix::new(a)?;
        Self::from_sym(sym)
    }

    pub fn from_sym(sym: SymMatrix) -> Result<Self> {
        let entries = sym.into_matrix();
        let eig = SymmetricEigen::new(entries.clone());
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        let eig_floor = SPD_RELATIVE_TOL * max.max(0.0);
        if max <= 0.0 || min <= eig_floor {
            return Err(Error::NotPositiveDefinite {
                eigenvalue: min,
                tolerance: eig_floor,
            });
        }
        Ok(Self {
            entries,
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
            eig_floor,
        })
    }

    /// Built from a known eigendecomposition (e.g. the output of `exp`). Only
    /// strict positivity of the eigenvalues is required.
    pub(crate) fn from_eigen(eigenvalues: DVector<f64>, eigenvectors: DMatrix<f64>) -> Self {
        let scaled = DMatrix::from_fn(eigenvectors.nrows(), eigenvectors.ncols(), |i, j| {
            eigenvectors[(i, j)] * eigenvalues[j]
        });
        let entries = symmetrized(&(scaled * eigenvectors.transpose()));
        Self {
            entries,
            eigenvalues,
            eigenvectors,
            eig_floor: 0.0,
        }
    }

    pub fn identity(m: usize) -> Self {
        Self::scaled_identity(m, 1.0)
    }

    /// `c * I_m`; `c` must be positive.
    pub fn scaled_identity(m: usize, c: f64) -> Self {
        assert!(c > 0.0 && m > 0, "scaled_identity needs m > 0 and c > 0");
        Self {
            entries: DMatrix::identity(m, m) * c,
            eigenvalues: DVector::from_element(m, c),
            eigenvectors: DMatrix::identity(m, m),
            eig_floor: SPD_RELATIVE_TOL * c,
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn eig_floor(&self) -> f64 {
        self.eig_floor
    }
}

impl PartialEq for SpdMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

/// Coefficients of a symmetric matrix (or any embedded observation).
#[derive(Debug, Clone, PartialEq)]
pub struct CoefVector(DVector<f64>);

impl CoefVector {
    pub fn zeros(d: usize) -> Self {
        Self(DVector::zeros(d))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

impl From<DVector<f64>> for CoefVector {
    fn from(v: DVector<f64>) -> Self {
        Self(v)
    }
}

impl From<Vec<f64>> for CoefVector {
    fn from(v: Vec<f64>) -> Self {
        Self(DVector::from_vec(v))
    }
}

impl serde::Serialize for CoefVector {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(self.0.iter())
    }
}

impl std::ops::Index<usize> for CoefVector {
    type Output = f64;
    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sym_rejects_asymmetric() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.5, 3.0]);
        assert!(matches!(SymMatrix::new(a.clone()), Err(Error::NotSymmetric { .. })));
        let s = SymMatrix::symmetrize(a).unwrap();
        assert_eq!(s.as_matrix()[(0, 1)], s.as_matrix()[(1, 0)]);
    }

    #[test]
    fn spd_validation() {
        assert!(SpdMatrix::from_diagonal(&[1.0, 2.0]).is_ok());
        let err = SpdMatrix::from_diagonal(&[1.0, -2.0]).unwrap_err();
        match err {
            Error::NotPositiveDefinite { eigenvalue, .. } => assert_eq!(eigenvalue, -2.0),
            e => panic!("unexpected {e}"),
        }
        // relative floor: 1e-11 against 1 is below 1e-10 * 1
        assert!(SpdMatrix::from_diagonal(&[1.0, 1e-11]).is_err());
        // but a large-magnitude well-conditioned matrix is fine
        assert!(SpdMatrix::from_diagonal(&[1e12, 5e11]).is_ok());
        assert!(SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, f64::NAN, 1.0])).is_err());
        assert!(SpdMatrix::new(DMatrix::zeros(2, 3)).is_err());
    }
}
