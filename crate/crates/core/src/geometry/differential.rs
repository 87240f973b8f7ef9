use nalgebra::DMatrix;

use super::{mat_exp, mat_log, unvec_sym, vec_sym, CoefVector, SpdMatrix, SymBasis, SymMatrix};
use crate::error::{Error, Result};

/// Operators with a 1-norm condition number above this are refused.
pub const MAX_CONDITION: f64 = 1e12;

/// Truncation rule for the `exp'` power series.
///
/// Terms are summed until the newest term's Frobenius norm (over all basis
/// columns) drops below `rel_tol` times the accumulated sum, but never fewer
/// than `min_terms` nor more than `max_terms`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truncation {
    pub min_terms: usize,
    pub max_terms: usize,
    pub rel_tol: f64,
}

impl Truncation {
    pub const DEFAULT_REL_TOL: f64 = 1e-14;

    pub const fn adaptive() -> Self {
        Self {
            min_terms: 20,
            max_terms: 60,
            rel_tol: Self::DEFAULT_REL_TOL,
        }
    }

    /// Exactly `k` terms. Convergence is still reported.
    pub const fn fixed(k: usize) -> Self {
        Self {
            min_terms: k,
            max_terms: k,
            rel_tol: Self::DEFAULT_REL_TOL,
        }
    }
}

impl Default for Truncation {
    fn default() -> Self {
        Self::adaptive()
    }
}

/// Matrix of a linear operator on `Sym(m)` in basis coordinates.
#[derive(Debug, Clone)]
pub struct LinOpMatrix {
    values: DMatrix<f64>,
    base_point_log: SymMatrix,
    truncation_k: usize,
    converged: bool,
}

impl LinOpMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn d(&self) -> usize {
        self.values.nrows()
    }

    /// The point `X = log mu` at which the differential was taken.
    pub fn base_point_log(&self) -> &SymMatrix {
        &self.base_point_log
    }

    /// Number of series terms actually summed.
    pub fn truncation_k(&self) -> usize {
        self.truncation_k
    }

    /// False when the series was cut at `max_terms` before meeting the
    /// tolerance.
    pub fn converged(&self) -> bool {
        self.converged
    }

    pub fn apply(&self, c: &CoefVector) -> Result<CoefVector> {
        if c.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                found: c.len(),
            });
        }
        Ok(CoefVector::from(&self.values * c.as_vector()))
    }

    fn inverse(&self) -> Result<LinOpMatrix> {
        let d = self.d();
        if self.values == DMatrix::identity(d, d) {
            return Ok(self.clone());
        }
        let inv = self
            .values
            .clone()
            .lu()
            .try_inverse()
            .ok_or(Error::SingularOperator {
                condition: f64::INFINITY,
            })?;
        let condition = norm_1(&self.values) * norm_1(&inv);
        if !(condition <= MAX_CONDITION) {
            return Err(Error::SingularOperator { condition });
        }
        Ok(LinOpMatrix {
            values: inv,
            base_point_log: self.base_point_log.clone(),
            truncation_k: self.truncation_k,
            converged: self.converged,
        })
    }
}

fn norm_1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix representation of `exp'_X`.
///
/// Column `j` holds the coefficients of
/// `sum_{k>=1} 1/k! sum_{l=0}^{k-1} X^{k-l-1} phi_j X^l`. The inner sum obeys
/// `T_{k+1} = X T_k + phi_j X^k`, which is evaluated on the scaled terms
/// `T_k / k!` so nothing overflows.
pub fn dexp_operator(x: &SymMatrix, basis: &SymBasis, trunc: Truncation) -> Result<LinOpMatrix> {
    if x.dim() != basis.m() {
        return Err(Error::DimensionMismatch {
            expected: basis.m(),
            found: x.dim(),
        });
    }
    if trunc.max_terms == 0 || trunc.min_terms > trunc.max_terms {
        return Err(Error::InvalidArgument(format!(
            "invalid truncation {}..={} terms",
            trunc.min_terms, trunc.max_terms
        )));
    }
    let d = basis.d();
    let m = basis.m();
    if x.is_zero() {
        // every term past k = 1 vanishes
        return Ok(LinOpMatrix {
            values: DMatrix::identity(d, d),
            base_point_log: x.clone(),
            truncation_k: 1,
            converged: true,
        });
    }

    let xm = x.as_matrix();
    let phi = basis.elements();
    let mut terms: Vec<DMatrix<f64>> = phi.to_vec();
    let mut sums: Vec<DMatrix<f64>> = phi.to_vec();
    // X^k / k!
    let mut power = DMatrix::<f64>::identity(m, m);
    let mut used = 1;
    let mut last_ratio = 1.0;
    while used < trunc.max_terms {
        let k = used as f64;
        power = xm * &power / k;
        let mut term_sq = 0.0;
        let mut sum_sq = 0.0;
        for j in 0..d {
            let next = (xm * &terms[j] + &phi[j] * &power) / (k + 1.0);
            sums[j] += &next;
            term_sq += next.norm_squared();
            sum_sq += sums[j].norm_squared();
            terms[j] = next;
        }
        used += 1;
        last_ratio = (term_sq / sum_sq).sqrt();
        if used >= trunc.min_terms && last_ratio < trunc.rel_tol {
            break;
        }
    }
    let converged = last_ratio < trunc.rel_tol;
    if !converged {
        log::warn!(
            "exp' series not converged after {used} terms (last relative term {last_ratio:e})"
        );
    }

    let mut values = DMatrix::zeros(d, d);
    for (j, s) in sums.iter().enumerate() {
        values.set_column(j, &basis.coefficients_of(s));
    }
    Ok(LinOpMatrix {
        values,
        base_point_log: x.clone(),
        truncation_k: used,
        converged,
    })
}

/// Matrix representation of `log'_mu`, the inverse of `exp'_{log mu}`.
pub fn dlog_operator(mu: &SpdMatrix, basis: &SymBasis, trunc: Truncation) -> Result<LinOpMatrix> {
    dexp_operator(&mat_log(mu)?, basis, trunc)?.inverse()
}

/// Tangent-space chart at a base point `S`: caches `log S` together with both
/// differentials so repeated Exp/Log calls at one point stay cheap.
#[derive(Debug, Clone)]
pub struct ExpChart {
    log_base: SymMatrix,
    dexp: LinOpMatrix,
    dlog: LinOpMatrix,
    basis: SymBasis,
}

impl ExpChart {
    pub fn new(base: &SpdMatrix, basis: &SymBasis, trunc: Truncation) -> Result<Self> {
        let log_base = mat_log(base)?;
        let dexp = dexp_operator(&log_base, basis, trunc)?;
        let dlog = dexp.inverse()?;
        Ok(Self {
            log_base,
            dexp,
            dlog,
            basis: basis.clone(),
        })
    }

    pub fn log_base(&self) -> &SymMatrix {
        &self.log_base
    }

    pub fn dexp(&self) -> &LinOpMatrix {
        &self.dexp
    }

    pub fn dlog(&self) -> &LinOpMatrix {
        &self.dlog
    }

    /// `log'_S u`: a tangent vector at `S` carried to the log domain.
    pub fn push_to_log(&self, u: &SymMatrix) -> Result<SymMatrix> {
        let c = self.dlog.apply(&vec_sym(u, &self.basis)?)?;
        unvec_sym(&c, &self.basis)
    }

    /// `Exp_S u = exp(log S + log'_S u)`.
    pub fn exp(&self, u: &SymMatrix) -> Result<SpdMatrix> {
        let pushed = self.push_to_log(u)?;
        Ok(mat_exp(&(&self.log_base + &pushed)))
    }

    /// Inverse of [`ExpChart::exp`].
    pub fn log(&self, y: &SpdMatrix) -> Result<SymMatrix> {
        let diff = &mat_log(y)? - &self.log_base;
        let c = self.dexp.apply(&vec_sym(&diff, &self.basis)?)?;
        unvec_sym(&c, &self.basis)
    }
}

/// Riemannian exponential map at `s`.
pub fn exp_map(s: &SpdMatrix, u: &SymMatrix, basis: &SymBasis, trunc: Truncation) -> Result<SpdMatrix> {
    if u.dim() != s.dim() {
        return Err(Error::DimensionMismatch {
            expected: s.dim(),
            found: u.dim(),
        });
    }
    ExpChart::new(s, basis, trunc)?.exp(u)
}

/// Riemannian logarithm at `s`: the tangent vector `u` with `Exp_s u = y`.
pub fn log_map(s: &SpdMatrix, y: &SpdMatrix, basis: &SymBasis, trunc: Truncation) -> Result<SymMatrix> {
    if y.dim() != s.dim() {
        return Err(Error::DimensionMismatch {
            expected: s.dim(),
            found: y.dim(),
        });
    }
    ExpChart::new(s, basis, trunc)?.log(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{geodesic_dist, sym_basis};
    use nalgebra::DVector;
    use std::f64::consts::E;

    fn sym(m: usize, seed: u64, scale: f64) -> SymMatrix {
        // small deterministic LCG, enough for fixed fixtures
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let raw = DMatrix::from_fn(m, m, |_, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * scale
        });
        SymMatrix::symmetrize(raw).unwrap()
    }

    #[test]
    fn identity_at_origin_is_exact() {
        for m in 1..6 {
            let b = sym_basis(m).unwrap();
            let q = dexp_operator(&SymMatrix::zeros(m), &b, Truncation::default()).unwrap();
            assert_eq!(q.values(), &DMatrix::identity(b.d(), b.d()));
            let l = dlog_operator(&SpdMatrix::identity(m), &b, Truncation::default()).unwrap();
            assert_eq!(l.values(), &DMatrix::identity(b.d(), b.d()));
        }
    }

    #[test]
    fn commuting_base_point_scales_by_exp() {
        let b = sym_basis(2).unwrap();
        let q = dexp_operator(&SymMatrix::identity(2), &b, Truncation::default()).unwrap();
        assert!((q.values() - DMatrix::identity(3, 3) * E).amax() < 1e-13);
        assert!(q.converged());

        let l = dlog_operator(&SpdMatrix::scaled_identity(2, E), &b, Truncation::default()).unwrap();
        assert!((l.values() - DMatrix::identity(3, 3) / E).amax() < 1e-13);
    }

    #[test]
    fn short_fixed_truncation_is_flagged() {
        let b = sym_basis(2).unwrap();
        let x = &SymMatrix::identity(2) * 3.0;
        let q = dexp_operator(&x, &b, Truncation::fixed(3)).unwrap();
        assert!(!q.converged());
        assert_eq!(q.truncation_k(), 3);
        let q = dexp_operator(&x, &b, Truncation::default()).unwrap();
        assert!(q.converged());
        assert!(q.truncation_k() >= 20 && q.truncation_k() <= 60);
        assert!(dexp_operator(&x, &b, Truncation::fixed(0)).is_err());
    }

    #[test]
    fn matches_eigenbasis_divided_differences() {
        // exp'_X(V) = P (F o (P^T V P)) P^T, F_ij = (e^a - e^b)/(a - b)
        let m = 3;
        let b = sym_basis(m).unwrap();
        let x = sym(m, 11, 3.0);
        let q = dexp_operator(&x, &b, Truncation::default()).unwrap();
        let eig = nalgebra::SymmetricEigen::new(x.as_matrix().clone());
        let p = &eig.eigenvectors;
        let lam = &eig.eigenvalues;
        let f = DMatrix::from_fn(m, m, |i, j| {
            let (a, c) = (lam[i], lam[j]);
            if (a - c).abs() < 1e-12 {
                a.exp()
            } else {
                (a.exp() - c.exp()) / (a - c)
            }
        });
        for j in 0..b.d() {
            let v = b.element(j);
            let inner = (p.transpose() * v * p).component_mul(&f);
            let exact = p * inner * p.transpose();
            let exact = vec_sym(&SymMatrix::symmetrize(exact).unwrap(), &b).unwrap();
            let col: DVector<f64> = q.values().column(j).into();
            assert!((col - exact.as_vector()).amax() < 1e-12);
        }
    }

    #[test]
    fn dlog_inverts_dexp() {
        let b = sym_basis(3).unwrap();
        let mu = mat_exp(&sym(3, 5, 4.0));
        let dl = dlog_operator(&mu, &b, Truncation::default()).unwrap();
        let de = dexp_operator(&mat_log(&mu).unwrap(), &b, Truncation::default()).unwrap();
        let prod = dl.values() * de.values();
        assert!((prod - DMatrix::identity(6, 6)).amax() < 1e-8);
    }

    #[test]
    fn exp_and_log_maps() {
        let b = sym_basis(3).unwrap();
        let t = Truncation::default();
        let u = sym(3, 7, 1.0);
        let at_id = exp_map(&SpdMatrix::identity(3), &u, &b, t).unwrap();
        assert!((at_id.as_matrix() - mat_exp(&u).as_matrix()).amax() < 1e-13);
        let d = geodesic_dist(&SpdMatrix::identity(3), &at_id).unwrap();
        assert!((d - u.frobenius_norm()).abs() < 1e-12);

        let s = mat_exp(&sym(3, 9, 2.0));
        let same = exp_map(&s, &SymMatrix::zeros(3), &b, t).unwrap();
        assert!((same.as_matrix() - s.as_matrix()).amax() < 1e-12);
        assert!(log_map(&s, &s, &b, t).unwrap().frobenius_norm() < 1e-12);

        let y = mat_exp(&sym(3, 13, 2.0));
        let l = log_map(&SpdMatrix::identity(3), &y, &b, t).unwrap();
        assert!((l.as_matrix() - mat_log(&y).unwrap().as_matrix()).amax() < 1e-13);

        let back = exp_map(&s, &log_map(&s, &y, &b, t).unwrap(), &b, t).unwrap();
        assert!((back.as_matrix() - y.as_matrix()).norm() < 1e-8);
    }

    #[test]
    fn operator_dimension_checks() {
        let b = sym_basis(3).unwrap();
        assert!(dexp_operator(&SymMatrix::zeros(2), &b, Truncation::default()).is_err());
        assert!(exp_map(&SpdMatrix::identity(3), &SymMatrix::zeros(2), &b, Truncation::default()).is_err());
    }
}
