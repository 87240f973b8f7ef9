use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{DMatrix, DVector};

use super::{CoefVector, SymMatrix};
use crate::error::{Error, Result};

/// Orthonormal basis of `Sym(m)` under the Frobenius inner product.
///
/// Element `k = i(i+1)/2 + j` (0-based, `j <= i`) is `B_ij`: a single 1 on the
/// diagonal when `i == j`, otherwise `1/sqrt(2)` at `(i, j)` and `(j, i)`.
#[derive(Debug, Clone)]
pub struct SymBasis {
    m: usize,
    phi: Vec<DMatrix<f64>>,
}

/// Builds the `B_ij` basis for `m x m` symmetric matrices.
pub fn sym_basis(m: usize) -> Result<SymBasis> {
    SymBasis::new(m)
}

/// Number of free coefficients of an `m x m` symmetric matrix.
pub const fn sym_dim(m: usize) -> usize {
    m * (m + 1) / 2
}

impl SymBasis {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidDimension("matrix dimension m must be >= 1".into()));
        }
        let mut phi = Vec::with_capacity(sym_dim(m));
        for i in 0..m {
            for j in 0..=i {
                let mut b = DMatrix::zeros(m, m);
                if i == j {
                    b[(i, i)] = 1.0;
                } else {
                    b[(i, j)] = FRAC_1_SQRT_2;
                    b[(j, i)] = FRAC_1_SQRT_2;
                }
                phi.push(b);
            }
        }
        Ok(Self { m, phi })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.phi.len()
    }

    pub fn elements(&self) -> &[DMatrix<f64>] {
        &self.phi
    }

    pub fn element(&self, k: usize) -> &DMatrix<f64> {
        &self.phi[k]
    }

    /// Position of `B_ij` in the basis (order of `i, j` does not matter).
    pub fn index(i: usize, j: usize) -> usize {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        hi * (hi + 1) / 2 + lo
    }

    /// Coefficients `<a, phi_k>` of a raw square matrix, read from both triangles.
    pub(crate) fn coefficients_of(&self, a: &DMatrix<f64>) -> DVector<f64> {
        let m = self.m;
        let mut c = DVector::zeros(self.d());
        let mut k = 0;
        for i in 0..m {
            for j in 0..=i {
                c[k] = if i == j {
                    a[(i, i)]
                } else {
                    (a[(i, j)] + a[(j, i)]) * FRAC_1_SQRT_2
                };
                k += 1;
            }
        }
        c
    }

    pub(crate) fn matrix_of(&self, c: &[f64]) -> DMatrix<f64> {
        let m = self.m;
        let mut a = DMatrix::zeros(m, m);
        let mut k = 0;
        for i in 0..m {
            for j in 0..=i {
                if i == j {
                    a[(i, i)] = c[k];
                } else {
                    let v = c[k] * FRAC_1_SQRT_2;
                    a[(i, j)] = v;
                    a[(j, i)] = v;
                }
                k += 1;
            }
        }
        a
    }
}

/// Coefficient vector of `a` in `basis`; an isometry onto `R^d`.
pub fn vec_sym(a: &SymMatrix, basis: &SymBasis) -> Result<CoefVector> {
    if a.dim() != basis.m() {
        return Err(Error::DimensionMismatch {
            expected: basis.m(),
            found: a.dim(),
        });
    }
    Ok(CoefVector::from(basis.coefficients_of(a.as_matrix())))
}

/// Inverse of [`vec_sym`]: `sum_k c_k phi_k`.
pub fn unvec_sym(c: &CoefVector, basis: &SymBasis) -> Result<SymMatrix> {
    if c.len() != basis.d() {
        return Err(Error::DimensionMismatch {
            expected: basis.d(),
            found: c.len(),
        });
    }
    Ok(SymMatrix::from_symmetric_unchecked(
        basis.matrix_of(c.as_slice()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::SQRT_2;

    fn frob_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        a.component_mul(b).sum()
    }

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(matches!(sym_basis(0), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn one_by_one_basis() {
        let b = sym_basis(1).unwrap();
        assert_eq!(b.d(), 1);
        assert_eq!(b.element(0), &DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn two_by_two_basis_order() {
        let b = sym_basis(2).unwrap();
        assert_eq!(b.d(), 3);
        let s = FRAC_1_SQRT_2;
        assert_eq!(b.element(0), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert_eq!(b.element(1), &DMatrix::from_row_slice(2, 2, &[0.0, s, s, 0.0]));
        assert_eq!(b.element(2), &DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]));
        assert_eq!(SymBasis::index(1, 0), 1);
        assert_eq!(SymBasis::index(0, 1), 1);
    }

    #[test]
    fn gram_matrix_is_identity() {
        for m in 1..=12 {
            let b = sym_basis(m).unwrap();
            assert_eq!(b.d(), m * (m + 1) / 2);
            for (p, x) in b.elements().iter().enumerate() {
                for (q, y) in b.elements().iter().enumerate() {
                    let expect = if p == q { 1.0 } else { 0.0 };
                    assert!((frob_inner(x, y) - expect).abs() < 1e-12, "m={m} ({p},{q})");
                }
            }
        }
    }

    #[test]
    fn vec_of_small_example() {
        let b = sym_basis(2).unwrap();
        let a = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0])).unwrap();
        let c = vec_sym(&a, &b).unwrap();
        let expect = [1.0, 2.0 * SQRT_2, 3.0];
        for (x, y) in c.as_slice().iter().zip(expect) {
            assert!((x - y).abs() < 1e-14);
        }
        let back = unvec_sym(&c, &b).unwrap();
        assert!((back.as_matrix() - a.as_matrix()).amax() < 1e-14);
    }

    #[test]
    fn vec_matches_inner_products() {
        let b = sym_basis(4).unwrap();
        let raw = DMatrix::from_fn(4, 4, |i, j| (i * 4 + j) as f64 * 0.37 - 1.1);
        let a = SymMatrix::symmetrize(raw).unwrap();
        let c = vec_sym(&a, &b).unwrap();
        for (k, phi) in b.elements().iter().enumerate() {
            assert!((c[k] - frob_inner(a.as_matrix(), phi)).abs() < 1e-13);
        }
    }

    #[test]
    fn unit_coefficient_is_first_basis_element() {
        let b = sym_basis(2).unwrap();
        let e1 = CoefVector::from(DVector::from_vec(vec![1.0, 0.0, 0.0]));
        let a = unvec_sym(&e1, &b).unwrap();
        assert_eq!(a.as_matrix(), b.element(0));
    }

    #[test]
    fn zero_matrix_maps_to_zero() {
        let b = sym_basis(3).unwrap();
        let c = vec_sym(&SymMatrix::zeros(3), &b).unwrap();
        assert!(c.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mismatched_dimensions() {
        let b = sym_basis(3).unwrap();
        assert!(vec_sym(&SymMatrix::zeros(2), &b).is_err());
        let c = CoefVector::from(DVector::zeros(5));
        assert!(unvec_sym(&c, &b).is_err());
    }
}
