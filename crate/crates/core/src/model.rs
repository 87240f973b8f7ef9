//! Heterogeneous matrix-log mean model.
//!
//! Observations follow `log Y_i = log mu_i + log'_{mu_i} eps_i`, i.e.
//! `Y_i = Exp_{mu_i} eps_i`, with `mu_i` piecewise constant in `i` and
//! `eps_i` a mean-zero tangent vector at `mu_i`. The noise reaching the log
//! domain therefore depends on where the mean sits on the manifold.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    geodesic_dist, mat_exp, mat_log, unvec_sym, vec_sym, CoefVector, ExpChart, SpdMatrix,
    SymBasis, SymMatrix, Truncation,
};

/// Named mean designs used in the simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    /// Two changes: `I, 2I, 5I` on quarters `n/4, n/2, n/4`.
    J2,
    /// Four changes at multiples of `n/5` through five block-diagonal means.
    J4,
}

impl ScenarioId {
    pub fn num_changes(self) -> usize {
        match self {
            ScenarioId::J2 => 2,
            ScenarioId::J4 => 4,
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioId::J2 => f.write_str("J2"),
            ScenarioId::J4 => f.write_str("J4"),
        }
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "J2" => Ok(ScenarioId::J2),
            "J4" => Ok(ScenarioId::J4),
            other => Err(Error::Scenario(format!("unknown scenario '{other}' (expected J2 or J4)"))),
        }
    }
}

/// Piecewise-constant mean sequence.
///
/// Breakpoints are counts: `tau` means observations `1..=tau` (1-based) sit
/// left of the change, so segment `q` covers 0-based indices
/// `tau_{q-1} .. tau_q`.
#[derive(Debug, Clone)]
pub struct MeanSegments {
    n: usize,
    breakpoints: Vec<usize>,
    means: Vec<SpdMatrix>,
}

impl MeanSegments {
    pub fn new(n: usize, breakpoints: Vec<usize>, means: Vec<SpdMatrix>) -> Result<Self> {
        if means.len() != breakpoints.len() + 1 {
            return Err(Error::Scenario(format!(
                "{} breakpoints need {} means, got {}",
                breakpoints.len(),
                breakpoints.len() + 1,
                means.len()
            )));
        }
        let mut prev = 0;
        for &tau in &breakpoints {
            if tau <= prev || tau >= n {
                return Err(Error::Scenario(format!(
                    "breakpoints must be strictly increasing within 1..{}, got {breakpoints:?}",
                    n - 1
                )));
            }
            prev = tau;
        }
        let m = means[0].dim();
        if let Some(bad) = means.iter().find(|mu| mu.dim() != m) {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: bad.dim(),
            });
        }
        for (q, pair) in means.windows(2).enumerate() {
            if geodesic_dist(&pair[0], &pair[1])? <= 0.0 {
                return Err(Error::Scenario(format!(
                    "means on both sides of breakpoint {} coincide",
                    breakpoints[q]
                )));
            }
        }
        Ok(Self {
            n,
            breakpoints,
            means,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.means[0].dim()
    }

    pub fn breakpoints(&self) -> &[usize] {
        &self.breakpoints
    }

    pub fn means(&self) -> &[SpdMatrix] {
        &self.means
    }

    pub fn num_changes(&self) -> usize {
        self.breakpoints.len()
    }

    /// 0-based half-open index range of every segment.
    pub fn segment_ranges(&self) -> Vec<Range<usize>> {
        let mut edges = Vec::with_capacity(self.breakpoints.len() + 2);
        edges.push(0);
        edges.extend_from_slice(&self.breakpoints);
        edges.push(self.n);
        edges.windows(2).map(|w| w[0]..w[1]).collect()
    }

    /// Segment containing 0-based observation `i`.
    pub fn segment_of(&self, i: usize) -> usize {
        self.breakpoints.partition_point(|&tau| tau <= i)
    }

    pub fn mean_at(&self, i: usize) -> &SpdMatrix {
        &self.means[self.segment_of(i)]
    }

    /// Shortest segment length `L`, counting the first and last segments.
    pub fn min_gap(&self) -> usize {
        self.segment_ranges().iter().map(|r| r.len()).min().unwrap_or(self.n)
    }

    /// Jump vectors `vec(log mu_tau) - vec(log mu_{tau+1})` and their
    /// smallest norm.
    pub fn change_spec(&self, basis: &SymBasis, sigma: f64) -> Result<ChangeSpec> {
        let logs = self
            .means
            .iter()
            .map(|mu| vec_sym(&mat_log(mu)?, basis))
            .collect::<Result<Vec<_>>>()?;
        let delta_tau: Vec<CoefVector> = logs
            .windows(2)
            .map(|w| CoefVector::from(w[0].as_vector() - w[1].as_vector()))
            .collect();
        let delta = delta_tau
            .iter()
            .map(CoefVector::norm)
            .fold(f64::INFINITY, f64::min);
        Ok(ChangeSpec {
            delta_tau,
            delta,
            sigma,
        })
    }
}

/// Signal strength at the change points.
#[derive(Debug, Clone)]
pub struct ChangeSpec {
    pub delta_tau: Vec<CoefVector>,
    /// Smallest jump norm (infinite when there are no changes).
    pub delta: f64,
    pub sigma: f64,
}

/// Means for the named simulation designs.
pub fn scenario_means(id: ScenarioId, n: usize, m: usize) -> Result<MeanSegments> {
    if m == 0 {
        return Err(Error::InvalidDimension("m must be >= 1".into()));
    }
    match id {
        ScenarioId::J2 => {
            if n == 0 || n % 4 != 0 {
                return Err(Error::Scenario(format!("J2 needs n divisible by 4, got {n}")));
            }
            let means = [1.0, 2.0, 5.0]
                .into_iter()
                .map(|c| SpdMatrix::scaled_identity(m, c))
                .collect();
            MeanSegments::new(n, vec![n / 4, 3 * n / 4], means)
        }
        ScenarioId::J4 => {
            if n == 0 || n % 5 != 0 {
                return Err(Error::Scenario(format!("J4 needs n divisible by 5, got {n}")));
            }
            if m % 2 != 0 {
                return Err(Error::Scenario(format!("J4 needs even m, got {m}")));
            }
            let half = m / 2;
            let block = |a: f64, b: f64| -> Result<SpdMatrix> {
                let diag: Vec<f64> = (0..m).map(|i| if i < half { a } else { b }).collect();
                SpdMatrix::from_diagonal(&diag)
            };
            let means = vec![
                block(1.0, 1.0)?,
                block(1.0, 3.0)?,
                block(3.0, 3.0)?,
                block(3.0, 10.0)?,
                block(10.0, 10.0)?,
            ];
            let step = n / 5;
            MeanSegments::new(n, (1..5).map(|k| k * step).collect(), means)
        }
    }
}

/// Observed SPD sequence, optionally carrying the means that generated it.
#[derive(Debug, Clone)]
pub struct SpdSequence {
    m: usize,
    matrices: Vec<SpdMatrix>,
    truth: Option<MeanSegments>,
}

impl SpdSequence {
    pub fn new(matrices: Vec<SpdMatrix>) -> Result<Self> {
        let m = matrices
            .first()
            .map(SpdMatrix::dim)
            .ok_or_else(|| Error::InvalidArgument("empty SPD sequence".into()))?;
        if let Some(bad) = matrices.iter().find(|y| y.dim() != m) {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: bad.dim(),
            });
        }
        Ok(Self {
            m,
            matrices,
            truth: None,
        })
    }

    pub fn with_truth(mut self, truth: MeanSegments) -> Result<Self> {
        if truth.n() != self.len() || truth.m() != self.m {
            return Err(Error::InvalidArgument(format!(
                "truth describes {}x{} means over n={}, sequence is {}x{} with n={}",
                truth.m(),
                truth.m(),
                truth.n(),
                self.m,
                self.m,
                self.len()
            )));
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn matrices(&self) -> &[SpdMatrix] {
        &self.matrices
    }

    pub fn truth(&self) -> Option<&MeanSegments> {
        self.truth.as_ref()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `index` under a master seed. Pure function of its
/// inputs, so replications can run in any order.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

/// Generator for time index `index` of the sequence keyed by `seed`: one
/// ChaCha stream per index.
pub fn index_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Coefficient vector drawn from `N(0, sigma^2 I_d)`.
pub fn sample_coefficients<R: Rng + ?Sized>(d: usize, sigma: f64, rng: &mut R) -> CoefVector {
    CoefVector::from(DVector::from_fn(d, |_, _| {
        sigma * rng.sample::<f64, _>(StandardNormal)
    }))
}

/// Tangent noise `sum_k c_k phi_k` with `c ~ N(0, sigma^2 I_d)`.
pub fn sample_noise<R: Rng + ?Sized>(basis: &SymBasis, sigma: f64, rng: &mut R) -> SymMatrix {
    let c = sample_coefficients(basis.d(), sigma, rng);
    unvec_sym(&c, basis).expect("coefficient length matches basis")
}

/// Draws `Y_i = Exp_{mu_i} eps_i` with homogeneous coefficient noise `sigma`.
pub fn generate_sequence(
    means: &MeanSegments,
    sigma: f64,
    basis: &SymBasis,
    trunc: Truncation,
    seed: u64,
) -> Result<SpdSequence> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    generate_with(means, |_| sigma, basis, trunc, seed)
}

/// Like [`generate_sequence`] with one noise scale per time index.
pub fn generate_sequence_with_scales(
    means: &MeanSegments,
    sigmas: &[f64],
    basis: &SymBasis,
    trunc: Truncation,
    seed: u64,
) -> Result<SpdSequence> {
    if sigmas.len() != means.n() {
        return Err(Error::DimensionMismatch {
            expected: means.n(),
            found: sigmas.len(),
        });
    }
    if let Some(bad) = sigmas.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {bad}")));
    }
    generate_with(means, |i| sigmas[i], basis, trunc, seed)
}

fn generate_with(
    means: &MeanSegments,
    sigma_at: impl Fn(usize) -> f64,
    basis: &SymBasis,
    trunc: Truncation,
    seed: u64,
) -> Result<SpdSequence> {
    if basis.m() != means.m() {
        return Err(Error::DimensionMismatch {
            expected: means.m(),
            found: basis.m(),
        });
    }
    let mut out = Vec::with_capacity(means.n());
    for (q, range) in means.segment_ranges().into_iter().enumerate() {
        let mu = &means.means()[q];
        let mut chart: Option<ExpChart> = None;
        for i in range {
            let sigma = sigma_at(i);
            if sigma == 0.0 {
                out.push(mu.clone());
                continue;
            }
            if chart.is_none() {
                chart = Some(ExpChart::new(mu, basis, trunc)?);
            }
            let eps = sample_noise(basis, sigma, &mut index_rng(seed, i as u64));
            out.push(chart.as_ref().unwrap().exp(&eps)?);
        }
    }
    SpdSequence::new(out)?.with_truth(means.clone())
}

/// Log-Euclidean Fréchet mean of `seq[range]`: `exp` of the averaged logs.
pub fn frechet_mean(seq: &SpdSequence, range: Range<usize>) -> Result<SpdMatrix> {
    if range.is_empty() {
        return Err(Error::EmptyRange);
    }
    if range.end > seq.len() {
        return Err(Error::InvalidArgument(format!(
            "range {range:?} exceeds sequence length {}",
            seq.len()
        )));
    }
    let count = range.len() as f64;
    let mut acc = SymMatrix::zeros(seq.m());
    for y in &seq.matrices()[range] {
        acc = &acc + &mat_log(y)?;
    }
    Ok(mat_exp(&(&acc * (1.0 / count))))
}

/// Outcome of the detectability condition
/// `delta^2 L >= 16 sigma^2 (d + 2 sqrt(d) + 2 log n + 2 log log n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Detectability {
    pub satisfied: bool,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs - rhs`.
    pub margin: f64,
}

/// Right-hand side of the detectability condition.
pub fn detectability_rhs(sigma: f64, d: usize, n: usize) -> f64 {
    let d = d as f64;
    let ln_n = (n as f64).ln();
    16.0 * sigma * sigma * (d + 2.0 * d.sqrt() + 2.0 * ln_n + 2.0 * ln_n.ln())
}

/// Checks the signal/separation condition; `n` should be at least 3 so that
/// `log log n` is positive.
pub fn detectability_check(delta: f64, l: usize, sigma: f64, d: usize, n: usize) -> Detectability {
    debug_assert!(n >= 3, "log log n needs n >= 3");
    let lhs = delta * delta * l as f64;
    let rhs = detectability_rhs(sigma, d, n);
    Detectability {
        satisfied: lhs >= rhs,
        lhs,
        rhs,
        margin: lhs - rhs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{dlog_operator, sym_basis};
    use nalgebra::DMatrix;
    use std::f64::consts::E;

    #[test]
    fn j2_design() {
        let s = scenario_means(ScenarioId::J2, 100, 6).unwrap();
        assert_eq!(s.breakpoints(), &[25, 75]);
        for (mu, c) in s.means().iter().zip([1.0, 2.0, 5.0]) {
            assert_eq!(mu.as_matrix(), &(DMatrix::identity(6, 6) * c));
        }
        assert_eq!(s.min_gap(), 25);
        assert_eq!(s.segment_of(24), 0);
        assert_eq!(s.segment_of(25), 1);
        assert_eq!(s.segment_of(99), 2);
    }

    #[test]
    fn j4_design() {
        let s = scenario_means(ScenarioId::J4, 200, 6).unwrap();
        assert_eq!(s.breakpoints(), &[40, 80, 120, 160]);
        let diags: Vec<Vec<f64>> = s
            .means()
            .iter()
            .map(|mu| mu.as_matrix().diagonal().iter().copied().collect())
            .collect();
        assert_eq!(diags[0], vec![1.0; 6]);
        assert_eq!(diags[1], vec![1.0, 1.0, 1.0, 3.0, 3.0, 3.0]);
        assert_eq!(diags[2], vec![3.0; 6]);
        assert_eq!(diags[3], vec![3.0, 3.0, 3.0, 10.0, 10.0, 10.0]);
        assert_eq!(diags[4], vec![10.0; 6]);
    }

    #[test]
    fn scenario_preconditions() {
        assert!(matches!(scenario_means(ScenarioId::J2, 102, 6), Err(Error::Scenario(_))));
        assert!(scenario_means(ScenarioId::J4, 202, 6).is_err());
        assert!(scenario_means(ScenarioId::J4, 200, 5).is_err());
        assert_eq!("j4".parse::<ScenarioId>().unwrap(), ScenarioId::J4);
        assert!("J3".parse::<ScenarioId>().is_err());
    }

    #[test]
    fn segments_reject_bad_input() {
        let i = SpdMatrix::identity(2);
        let two = SpdMatrix::scaled_identity(2, 2.0);
        assert!(MeanSegments::new(10, vec![5], vec![i.clone(), i.clone()]).is_err());
        assert!(MeanSegments::new(10, vec![10], vec![i.clone(), two.clone()]).is_err());
        assert!(MeanSegments::new(10, vec![0], vec![i.clone(), two.clone()]).is_err());
        assert!(MeanSegments::new(10, vec![5], vec![i.clone()]).is_err());
        assert!(MeanSegments::new(10, vec![5], vec![i, two]).is_ok());
    }

    #[test]
    fn change_spec_of_j2() {
        let s = scenario_means(ScenarioId::J2, 100, 6).unwrap();
        let b = sym_basis(6).unwrap();
        let cs = s.change_spec(&b, 1.0).unwrap();
        let expect = 2f64.ln() * 6f64.sqrt();
        assert!((cs.delta - expect).abs() < 1e-12);
        assert!((cs.delta_tau[1].norm() - 2.5f64.ln() * 6f64.sqrt()).abs() < 1e-12);
        // log mu_tau - log mu_{tau+1} is negative for increasing means
        assert!(cs.delta_tau[0][0] < 0.0);
    }

    #[test]
    fn zero_sigma_noise_is_zero() {
        let b = sym_basis(3).unwrap();
        let mut rng = index_rng(1, 0);
        assert!(sample_noise(&b, 0.0, &mut rng).is_zero());
    }

    #[test]
    fn noise_coefficients_have_identity_covariance() {
        let b = sym_basis(3).unwrap();
        let d = b.d();
        let draws = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut cov = DMatrix::<f64>::zeros(d, d);
        let mut mean = DVector::<f64>::zeros(d);
        for _ in 0..draws {
            let e = sample_noise(&b, 1.0, &mut rng);
            assert_eq!(e.as_matrix(), &e.as_matrix().transpose());
            let c = vec_sym(&e, &b).unwrap().into_vector();
            cov += &c * c.transpose();
            mean += c;
        }
        mean /= draws as f64;
        cov = cov / draws as f64 - &mean * mean.transpose();
        assert!((cov - DMatrix::identity(d, d)).amax() < 0.02);
    }

    #[test]
    fn noiseless_generation_reproduces_means() {
        let s = scenario_means(ScenarioId::J4, 50, 4).unwrap();
        let b = sym_basis(4).unwrap();
        let seq = generate_sequence(&s, 0.0, &b, Truncation::default(), 3).unwrap();
        for (i, y) in seq.matrices().iter().enumerate() {
            assert_eq!(y, s.mean_at(i));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = scenario_means(ScenarioId::J2, 40, 3).unwrap();
        let b = sym_basis(3).unwrap();
        let a = generate_sequence(&s, 1.0, &b, Truncation::default(), 99).unwrap();
        let c = generate_sequence(&s, 1.0, &b, Truncation::default(), 99).unwrap();
        let other = generate_sequence(&s, 1.0, &b, Truncation::default(), 100).unwrap();
        for ((x, y), z) in a.matrices().iter().zip(c.matrices()).zip(other.matrices()) {
            assert_eq!(x.as_matrix(), y.as_matrix());
            assert_ne!(x.as_matrix(), z.as_matrix());
        }
    }

    #[test]
    fn identity_mean_log_is_raw_noise() {
        let n = 4000;
        let b = sym_basis(3).unwrap();
        let s = MeanSegments::new(n, vec![], vec![SpdMatrix::identity(3)]).unwrap();
        let seq = generate_sequence(&s, 1.0, &b, Truncation::default(), 5).unwrap();
        let mut avg = DVector::<f64>::zeros(b.d());
        for (i, y) in seq.matrices().iter().enumerate() {
            let v = vec_sym(&mat_log(y).unwrap(), &b).unwrap().into_vector();
            let eps = sample_noise(&b, 1.0, &mut index_rng(5, i as u64));
            let raw = vec_sym(&eps, &b).unwrap().into_vector();
            assert!((&v - raw).amax() < 1e-12);
            avg += v;
        }
        avg /= n as f64;
        // 4 standard errors of a mean of N(0,1)
        assert!(avg.amax() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn log_residual_is_pushforward_of_noise() {
        let b = sym_basis(3).unwrap();
        let mu = SpdMatrix::new(DMatrix::from_row_slice(
            3,
            3,
            &[4.0, 1.0, 0.5, 1.0, 2.0, 0.2, 0.5, 0.2, 0.7],
        ))
        .unwrap();
        let s = MeanSegments::new(20, vec![], vec![mu.clone()]).unwrap();
        let seq = generate_sequence(&s, 0.3, &b, Truncation::default(), 8).unwrap();
        let sigma_i = dlog_operator(&mu, &b, Truncation::default()).unwrap();
        let log_mu = vec_sym(&mat_log(&mu).unwrap(), &b).unwrap().into_vector();
        for (i, y) in seq.matrices().iter().enumerate() {
            let resid = vec_sym(&mat_log(y).unwrap(), &b).unwrap().into_vector() - &log_mu;
            let eps = sample_noise(&b, 0.3, &mut index_rng(8, i as u64));
            let pushed = sigma_i.values() * vec_sym(&eps, &b).unwrap().into_vector();
            assert!((resid - pushed).amax() < 1e-10);
        }
    }

    #[test]
    fn frechet_mean_examples() {
        let a = SpdMatrix::from_diagonal(&[E, E]).unwrap();
        let c = SpdMatrix::from_diagonal(&[E.powi(3), E.powi(3)]).unwrap();
        let seq = SpdSequence::new(vec![a.clone(), c]).unwrap();
        let mean = frechet_mean(&seq, 0..2).unwrap();
        assert!((mean.as_matrix() - DMatrix::identity(2, 2) * E * E).amax() < 1e-12);
        let single = frechet_mean(&seq, 0..1).unwrap();
        assert!((single.as_matrix() - a.as_matrix()).amax() < 1e-13);
        assert!(matches!(frechet_mean(&seq, 1..1), Err(Error::EmptyRange)));
        assert!(frechet_mean(&seq, 0..3).is_err());
    }

    #[test]
    fn frechet_mean_of_noiseless_segment() {
        let s = scenario_means(ScenarioId::J4, 50, 4).unwrap();
        let b = sym_basis(4).unwrap();
        let seq = generate_sequence(&s, 0.0, &b, Truncation::default(), 0).unwrap();
        for (q, r) in s.segment_ranges().into_iter().enumerate() {
            let mean = frechet_mean(&seq, r).unwrap();
            assert!(geodesic_dist(&mean, &s.means()[q]).unwrap() < 1e-12);
        }
    }

    #[test]
    fn detectability_arithmetic() {
        let rhs = detectability_rhs(1.0, 21, 100);
        assert!((rhs - 678.9).abs() < 0.1, "rhs = {rhs}");
        let ok = detectability_check(700f64.sqrt(), 1, 1.0, 21, 100);
        assert!(ok.satisfied);
        assert!((ok.margin - (700.0 - rhs)).abs() < 1e-9);
        assert!(!detectability_check(0.0, 50, 1.0, 21, 100).satisfied);
        let doubled = detectability_check(1.0, 10, 2.0, 21, 100);
        assert!((doubled.rhs - 4.0 * rhs).abs() < 1e-9);
        assert!((doubled.margin - (10.0 - 4.0 * rhs)).abs() < 1e-9);
    }
}
