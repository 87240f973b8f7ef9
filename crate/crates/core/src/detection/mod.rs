//! Local scan procedure for multiple change points.
//!
//! Observations are embedded as coefficient vectors, the scan statistic
//! `G(x, h)` (left window mean minus right window mean) is evaluated at every
//! position, and the `h`-local maximizers of `||G||_2` are the candidate
//! change points. The final set is picked either by a squared-norm threshold
//! or by K-fold cross-validation over the number of changes.

mod cv;
mod scan;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{mat_log, vec_sym, CoefVector, SymBasis, SymMatrix};
use crate::model::SpdSequence;

pub use cv::{cv_error, select_num_changes, CvTable, CV_TIE_TOL};
pub use scan::{
    local_maximizers, scan_profile, scan_statistic, threshold_select, Candidate, ScanProfile,
};

/// Default scan bandwidth.
pub const DEFAULT_H: usize = 20;
pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_K_MAX: usize = 10;

/// How observations are turned into vectors before scanning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// `vec(log Y)` in the orthonormal basis of `Sym(m)`.
    Proposed,
    /// Row-major flattening of `Y` (length `m^2`).
    Vector,
    /// Basis coefficients of `Y` itself (length `m(m+1)/2`).
    Symmetric,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Proposed, Method::Vector, Method::Symmetric];

    pub fn label(self) -> &'static str {
        match self {
            Method::Proposed => "Proposed",
            Method::Vector => "Vector",
            Method::Symmetric => "Symmetric",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "proposed" | "manifold" => Ok(Method::Proposed),
            "vector" => Ok(Method::Vector),
            "symmetric" => Ok(Method::Symmetric),
            other => Err(Error::InvalidArgument(format!(
                "unknown method '{other}' (expected proposed, vector or symmetric)"
            ))),
        }
    }
}

/// Embeds every observation. `log_baselines` makes the two baselines operate
/// on `log Y` instead of `Y`; it has no effect on [`Method::Proposed`].
pub fn embed(
    seq: &SpdSequence,
    method: Method,
    log_baselines: bool,
    basis: &SymBasis,
) -> Result<Vec<CoefVector>> {
    if basis.m() != seq.m() {
        return Err(Error::DimensionMismatch {
            expected: seq.m(),
            found: basis.m(),
        });
    }
    seq.matrices()
        .iter()
        .map(|y| {
            let source = if method == Method::Proposed || log_baselines {
                mat_log(y)?
            } else {
                SymMatrix::from_symmetric_unchecked(y.as_matrix().clone())
            };
            match method {
                Method::Proposed | Method::Symmetric => vec_sym(&source, basis),
                Method::Vector => {
                    let a = source.as_matrix();
                    let m = a.nrows();
                    Ok(CoefVector::from(
                        (0..m * m).map(|k| a[(k / m, k % m)]).collect::<Vec<_>>(),
                    ))
                }
            }
        })
        .collect()
}

/// How the final change-point set was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SelectionRule {
    Threshold { rho: f64 },
    CrossValidation { folds: usize, k_max: usize, seed: u64 },
}

/// Estimated change points, ordered by position.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionResult {
    pub j_hat: usize,
    pub tau_hat: Vec<usize>,
    /// `||G(tau, h)||_2` at each estimate.
    pub scan_values: Vec<f64>,
    pub rule: SelectionRule,
    pub h: usize,
}

impl DetectionResult {
    pub(crate) fn from_candidates(sorted: &[Candidate], h: usize, rule: SelectionRule) -> Self {
        Self {
            j_hat: sorted.len(),
            tau_hat: sorted.iter().map(|c| c.position).collect(),
            scan_values: sorted.iter().map(|c| c.norm).collect(),
            rule,
            h,
        }
    }
}

/// Parameters of one detection run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub h: usize,
    pub folds: usize,
    pub k_max: usize,
    /// Fixed squared-norm threshold; cross-validation is used when `None`.
    pub rho: Option<f64>,
    pub cv_seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            h: DEFAULT_H,
            folds: DEFAULT_FOLDS,
            k_max: DEFAULT_K_MAX,
            rho: None,
            cv_seed: 0,
        }
    }
}

/// Full output of [`detect`].
#[derive(Debug, Clone, Serialize)]
pub struct Detection {
    pub result: DetectionResult,
    pub profile: ScanProfile,
    pub cv: Option<CvTable>,
}

/// Scan, then select by threshold or cross-validation.
pub fn detect(embedded: &[CoefVector], config: &DetectorConfig) -> Result<Detection> {
    let profile = scan_profile(embedded, config.h)?;
    match config.rho {
        Some(rho) => {
            if !(rho > 0.0) {
                return Err(Error::InvalidArgument(format!("rho must be > 0, got {rho}")));
            }
            let result = threshold_select(&local_maximizers(&profile), rho, config.h);
            Ok(Detection {
                result,
                profile,
                cv: None,
            })
        }
        None => {
            let (result, table) = cv::select_from_profile(
                embedded,
                &profile,
                config.folds,
                config.k_max,
                config.cv_seed,
            )?;
            Ok(Detection {
                result,
                profile,
                cv: Some(table),
            })
        }
    }
}
