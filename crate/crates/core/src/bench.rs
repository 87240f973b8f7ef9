//! Monte Carlo harness for the simulation tables and the sure-coverage
//! experiment.
//!
//! Every replication derives its own seed from the master seed and its index,
//! so replications run in parallel and in any order without changing the
//! aggregate.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{
    detect, embed, local_maximizers, scan_profile, threshold_select, DetectorConfig, Method,
    DEFAULT_FOLDS, DEFAULT_H, DEFAULT_K_MAX,
};
use crate::error::{Error, Result};
use crate::geometry::{dlog_operator, sym_basis, SpdMatrix, SymBasis, Truncation};
use crate::model::{
    derive_seed, detectability_check, detectability_rhs, generate_sequence, scenario_means,
    Detectability, MeanSegments, ScenarioId,
};

/// Stream offset separating CV fold seeds from data seeds.
const CV_STREAM: u64 = 0xC5;

/// One cell of the simulation tables: a design, a method and a replication
/// budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: ScenarioId,
    pub n: usize,
    pub m: usize,
    pub sigma: f64,
    pub h: usize,
    pub folds: usize,
    pub k_max: usize,
    pub method: Method,
    pub log_baselines: bool,
    pub reps: usize,
    pub master_seed: u64,
}

impl Scenario {
    pub const DEFAULT_REPS: usize = 100;
    pub const DEFAULT_SEED: u64 = 20_240_601;

    pub fn new(id: ScenarioId, n: usize, m: usize, method: Method) -> Self {
        Self {
            id,
            n,
            m,
            sigma: 1.0,
            h: DEFAULT_H,
            folds: DEFAULT_FOLDS,
            k_max: DEFAULT_K_MAX,
            method,
            log_baselines: false,
            reps: Self::DEFAULT_REPS,
            master_seed: Self::DEFAULT_SEED,
        }
    }

    pub fn num_changes(&self) -> usize {
        self.id.num_changes()
    }

    pub fn detector(&self, cv_seed: u64) -> DetectorConfig {
        DetectorConfig {
            h: self.h,
            folds: self.folds,
            k_max: self.k_max,
            rho: None,
            cv_seed,
        }
    }
}

/// Greedy one-to-one matching of true points to estimates.
///
/// True points are visited in order; each takes the nearest estimate not yet
/// used and is covered when that estimate lies strictly within `h`. A covering
/// estimate is consumed.
pub fn scp_match(true_points: &[usize], est_points: &[usize], h: usize) -> Vec<bool> {
    let mut used = vec![false; est_points.len()];
    true_points
        .iter()
        .map(|&tau| {
            let nearest = est_points
                .iter()
                .enumerate()
                .filter(|(k, _)| !used[*k])
                .min_by_key(|(_, &e)| e.abs_diff(tau));
            match nearest {
                Some((k, &e)) if e.abs_diff(tau) < h => {
                    used[k] = true;
                    true
                }
                _ => false,
            }
        })
        .collect()
}

/// Outcome of one replication; `error` is set when it failed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationRecord {
    pub index: usize,
    pub seed: u64,
    pub j_hat: Option<usize>,
    pub tau_hat: Vec<usize>,
    pub covered: Vec<bool>,
    pub error: Option<String>,
}

/// Aggregate over replications, in the layout of the simulation tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub scenario: Scenario,
    pub completed: usize,
    pub failed: usize,
    pub freq_under: f64,
    pub freq_exact: f64,
    pub freq_over: f64,
    pub mean_jhat: f64,
    pub se_jhat: f64,
    /// Per true change point, the fraction of replications covering it.
    pub scp: Vec<f64>,
    pub records: Vec<ReplicationRecord>,
}

impl BenchReport {
    /// Folds records (sorted by index) into frequencies. Failed replications
    /// are kept in `records` and counted in `failed` but excluded from the
    /// rates.
    pub fn from_records(scenario: Scenario, mut records: Vec<ReplicationRecord>) -> Self {
        records.sort_by_key(|r| r.index);
        let j = scenario.num_changes();
        let ok: Vec<&ReplicationRecord> = records.iter().filter(|r| r.j_hat.is_some()).collect();
        let completed = ok.len();
        let failed = records.len() - completed;
        let r = completed as f64;
        let frac = |pred: &dyn Fn(usize) -> bool| {
            if completed == 0 {
                0.0
            } else {
                ok.iter().filter(|rec| pred(rec.j_hat.unwrap())).count() as f64 / r
            }
        };
        let freq_under = frac(&|k| k < j);
        let freq_exact = frac(&|k| k == j);
        let freq_over = frac(&|k| k > j);
        let jhats: Vec<f64> = ok.iter().map(|rec| rec.j_hat.unwrap() as f64).collect();
        let mean_jhat = if completed == 0 { 0.0 } else { jhats.iter().sum::<f64>() / r };
        let se_jhat = if completed < 2 {
            0.0
        } else {
            let var = jhats.iter().map(|x| (x - mean_jhat).powi(2)).sum::<f64>() / (r - 1.0);
            var.sqrt() / r.sqrt()
        };
        let scp = (0..j)
            .map(|q| {
                if completed == 0 {
                    0.0
                } else {
                    ok.iter().filter(|rec| rec.covered[q]).count() as f64 / r
                }
            })
            .collect();
        Self {
            scenario,
            completed,
            failed,
            freq_under,
            freq_exact,
            freq_over,
            mean_jhat,
            se_jhat,
            scp,
            records,
        }
    }
}

fn run_replication(
    scenario: &Scenario,
    means: &MeanSegments,
    basis: &SymBasis,
    index: usize,
) -> ReplicationRecord {
    let seed = derive_seed(scenario.master_seed, index as u64);
    let outcome = (|| -> Result<Vec<usize>> {
        let seq = generate_sequence(means, scenario.sigma, basis, Truncation::default(), seed)?;
        let embedded = embed(&seq, scenario.method, scenario.log_baselines, basis)?;
        let det = detect(&embedded, &scenario.detector(derive_seed(seed, CV_STREAM)))?;
        Ok(det.result.tau_hat)
    })();
    match outcome {
        Ok(tau_hat) => ReplicationRecord {
            index,
            seed,
            j_hat: Some(tau_hat.len()),
            covered: scp_match(means.breakpoints(), &tau_hat, scenario.h),
            tau_hat,
            error: None,
        },
        Err(e) => ReplicationRecord {
            index,
            seed,
            j_hat: None,
            tau_hat: Vec::new(),
            covered: vec![false; means.num_changes()],
            error: Some(e.to_string()),
        },
    }
}

/// Runs all replications of `scenario` on the current rayon pool.
pub fn run_monte_carlo(scenario: &Scenario) -> Result<BenchReport> {
    if scenario.reps == 0 {
        return Err(Error::InvalidArgument("reps must be >= 1".into()));
    }
    if !(scenario.sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {}", scenario.sigma)));
    }
    let means = scenario_means(scenario.id, scenario.n, scenario.m)?;
    let basis = sym_basis(scenario.m)?;
    let records: Vec<ReplicationRecord> = (0..scenario.reps)
        .into_par_iter()
        .map(|i| run_replication(scenario, &means, &basis, i))
        .collect();
    Ok(BenchReport::from_records(scenario.clone(), records))
}

fn fmt_rate(x: f64) -> String {
    let s = format!("{x:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() { "0".to_string() } else { s.to_string() }
}

/// Aligned text table with columns `Ĵ<J, Ĵ=J, Ĵ>J, Mean(s.e.), SCP 1..4`.
pub fn format_table(reports: &[BenchReport]) -> String {
    let scp_cols = reports
        .iter()
        .map(|r| r.scp.len())
        .max()
        .unwrap_or(0)
        .max(4);
    let mut header = vec![
        "(n,m,J)".to_string(),
        "Method".into(),
        "Ĵ<J".into(),
        "Ĵ=J".into(),
        "Ĵ>J".into(),
        "Mean(s.e.)".into(),
    ];
    header.extend((1..=scp_cols).map(|k| format!("SCP {k}")));

    let mut rows = vec![header];
    let mut last_design = None;
    for r in reports {
        let s = &r.scenario;
        let design = (s.n, s.m, s.num_changes());
        let label = if last_design == Some(design) {
            String::new()
        } else {
            format!("({}, {}, {})", s.n, s.m, s.num_changes())
        };
        last_design = Some(design);
        let mut row = vec![
            label,
            s.method.label().to_string(),
            fmt_rate(r.freq_under),
            fmt_rate(r.freq_exact),
            fmt_rate(r.freq_over),
            format!("{}({})", fmt_rate(r.mean_jhat), fmt_rate(r.se_jhat)),
        ];
        row.extend((0..scp_cols).map(|k| r.scp.get(k).map_or("NA".to_string(), |&v| fmt_rate(v))));
        rows.push(row);
    }

    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, &w)| format!("{cell:<w$}"))
            .collect();
        writeln!(out, "{}", line.join("  ").trim_end()).unwrap();
    }
    let failed: usize = reports.iter().map(|r| r.failed).sum();
    if failed > 0 {
        writeln!(out, "({failed} replications failed; see records)").unwrap();
    }
    out
}

/// Machine-readable counterpart of [`format_table`]; missing SCP columns are
/// written as `NA`.
pub fn to_csv(reports: &[BenchReport]) -> String {
    let scp_cols = reports
        .iter()
        .map(|r| r.scp.len())
        .max()
        .unwrap_or(0)
        .max(4);
    let mut out = String::from(
        "n,m,J,method,reps,completed,failed,freq_under,freq_exact,freq_over,mean_jhat,se_jhat",
    );
    for k in 1..=scp_cols {
        write!(out, ",scp{k}").unwrap();
    }
    out.push('\n');
    for r in reports {
        let s = &r.scenario;
        write!(
            out,
            "{},{},{},{},{},{},{},{:?},{:?},{:?},{:?},{:?}",
            s.n,
            s.m,
            s.num_changes(),
            s.method.label(),
            s.reps,
            r.completed,
            r.failed,
            r.freq_under,
            r.freq_exact,
            r.freq_over,
            r.mean_jhat,
            r.se_jhat
        )
        .unwrap();
        for k in 0..scp_cols {
            match r.scp.get(k) {
                Some(v) => write!(out, ",{v:?}").unwrap(),
                None => out.push_str(",NA"),
            }
        }
        out.push('\n');
    }
    out
}

/// Means alternating between `I_m` and `c I_m` over `segments` equal blocks,
/// with `c > 1` chosen so that `delta^2 L = factor * RHS` of the
/// detectability condition at noise scale `sigma`.
///
/// Since `log'_{cI} = I / c`, the largest pushed-forward noise scale is the
/// one at `I`, i.e. `sigma` itself.
pub fn alternating_design(
    n: usize,
    m: usize,
    segments: usize,
    sigma: f64,
    factor: f64,
) -> Result<MeanSegments> {
    if segments < 2 || n % segments != 0 {
        return Err(Error::Scenario(format!(
            "need >= 2 segments dividing n = {n}, got {segments}"
        )));
    }
    if !(factor > 0.0) || !(sigma > 0.0) {
        return Err(Error::InvalidArgument("factor and sigma must be positive".into()));
    }
    let l = n / segments;
    let d = m * (m + 1) / 2;
    let delta = (factor * detectability_rhs(sigma, d, n) / l as f64).sqrt();
    let c = (delta / (m as f64).sqrt()).exp();
    let means = (0..segments)
        .map(|q| {
            if q % 2 == 0 {
                SpdMatrix::identity(m)
            } else {
                SpdMatrix::scaled_identity(m, c)
            }
        })
        .collect();
    MeanSegments::new(n, (1..segments).map(|q| q * l).collect(), means)
}

/// Result of the empirical sure-coverage experiment.
#[derive(Debug, Clone, Serialize)]
pub struct CoverageReport {
    pub n: usize,
    pub d: usize,
    pub delta: f64,
    pub min_gap: usize,
    pub h: usize,
    pub rho: f64,
    /// Largest noise scale after pushing through `log'_{mu}`.
    pub sigma_effective: f64,
    pub detectability: Detectability,
    pub reps: usize,
    pub successes: usize,
    pub rate: f64,
    /// `1 - 2 / log n`.
    pub bound: f64,
}

/// Largest `sigma * ||log'_{mu_q}||_2` over the segment means.
pub fn effective_sigma(means: &MeanSegments, sigma: f64, basis: &SymBasis) -> Result<f64> {
    let mut worst = 0.0_f64;
    for mu in means.means() {
        let op = dlog_operator(mu, basis, Truncation::default())?;
        let norm = op.values().clone().singular_values().max();
        worst = worst.max(norm);
    }
    Ok(sigma * worst)
}

/// Threshold detection with `rho = delta^2 / 4` and `h = L / 2`; counts the
/// replications where `Ĵ = J` and every `tau_j` lies strictly within `h` of
/// the `j`-th estimate.
pub fn coverage_experiment(
    means: &MeanSegments,
    sigma: f64,
    reps: usize,
    master_seed: u64,
) -> Result<CoverageReport> {
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be >= 1".into()));
    }
    let n = means.n();
    let basis = sym_basis(means.m())?;
    let d = basis.d();
    let spec = means.change_spec(&basis, sigma)?;
    let l = means.min_gap();
    let h = l / 2;
    if h == 0 {
        return Err(Error::Scenario("minimum segment length must be >= 2".into()));
    }
    let sigma_effective = effective_sigma(means, sigma, &basis)?;
    let detectability = detectability_check(spec.delta, l, sigma_effective, d, n);
    if !detectability.satisfied {
        return Err(Error::NotDetectable {
            margin: detectability.margin,
        });
    }
    let rho = spec.delta * spec.delta / 4.0;
    let truth = means.breakpoints();

    let hits: Vec<bool> = (0..reps)
        .into_par_iter()
        .map(|i| -> Result<bool> {
            let seed = derive_seed(master_seed, i as u64);
            let seq = generate_sequence(means, sigma, &basis, Truncation::default(), seed)?;
            let embedded = embed(&seq, Method::Proposed, false, &basis)?;
            let profile = scan_profile(&embedded, h)?;
            let found = threshold_select(&local_maximizers(&profile), rho, h);
            Ok(found.tau_hat.len() == truth.len()
                && found
                    .tau_hat
                    .iter()
                    .zip(truth)
                    .all(|(&est, &tau)| est.abs_diff(tau) < h))
        })
        .collect::<Result<_>>()?;
    let successes = hits.iter().filter(|&&b| b).count();
    Ok(CoverageReport {
        n,
        d,
        delta: spec.delta,
        min_gap: l,
        h,
        rho,
        sigma_effective,
        detectability,
        reps,
        successes,
        rate: successes as f64 / reps as f64,
        bound: 1.0 - 2.0 / (n as f64).ln(),
    })
}
