//! Time series and SPD sequence files, and sliding-window covariance
//! sequences for fMRI-style data.
//!
//! File formats are plain CSV with a one-line `#` header:
//!
//! ```text
//! # timeseries m=<m> T=<T>      followed by T rows of m values
//! # spdseq m=<m> n=<n>          followed by n rows of m*m row-major values
//! ```
//!
//! Floats are written in Rust's shortest round-trip form, so save/load is
//! bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, RowDVector};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{SpdMatrix, SymMatrix, SPD_RELATIVE_TOL};
use crate::model::{index_rng, SpdSequence};

/// Relative size of the ridge added to near-singular covariance windows.
pub const RIDGE_SCALE: f64 = 1e-8;

/// `T x m` multivariate time series, one row per time point.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: DMatrix<f64>,
    /// Seconds between samples, if known.
    pub period: Option<f64>,
}

impl TimeSeries {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidDimension(format!(
                "time series must be non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            values,
            period: None,
        })
    }

    pub fn with_period(mut self, seconds: f64) -> Self {
        self.period = Some(seconds);
        self
    }

    /// Number of time points.
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    /// Number of channels.
    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// A window whose covariance needed a ridge to become SPD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RidgeEvent {
    pub index: usize,
    pub min_eigenvalue: f64,
    pub epsilon: f64,
}

/// Output of [`sliding_covariance`].
#[derive(Debug, Clone)]
pub struct CovarianceSequence {
    pub sequence: SpdSequence,
    pub window: usize,
    pub ridge_events: Vec<RidgeEvent>,
}

/// Makes a symmetric matrix SPD, adding `RIDGE_SCALE * trace / m * I` when
/// its smallest eigenvalue is at or below the SPD tolerance.
pub fn regularize(c: SymMatrix, index: usize) -> Result<(SpdMatrix, Option<RidgeEvent>)> {
    let m = c.dim();
    let eig = c.as_matrix().clone().symmetric_eigenvalues();
    let (min, max) = (eig.min(), eig.max());
    if max > 0.0 && min > SPD_RELATIVE_TOL * max {
        return Ok((SpdMatrix::from_sym(c)?, None));
    }
    let trace = c.as_matrix().trace();
    let epsilon = if trace > 0.0 {
        RIDGE_SCALE * trace / m as f64
    } else {
        RIDGE_SCALE
    };
    log::warn!("window {index}: min eigenvalue {min:e}, adding ridge {epsilon:e}");
    let ridged = &c + &(&SymMatrix::identity(m) * epsilon);
    let spd = SpdMatrix::from_sym(ridged)?;
    Ok((
        spd,
        Some(RidgeEvent {
            index,
            min_eigenvalue: min,
            epsilon,
        }),
    ))
}

/// Mean-centred sample covariance (divisor `W - 1`) of rows `t .. t + W`.
pub fn window_covariance(ts: &TimeSeries, start: usize, window: usize) -> Result<SymMatrix> {
    if window < 2 || start + window > ts.len() {
        return Err(Error::InvalidArgument(format!(
            "window {start}..{} invalid for T = {}",
            start + window,
            ts.len()
        )));
    }
    let rows = ts.values.rows(start, window);
    let mean = rows.row_mean();
    let mut centred = rows.clone_owned();
    for mut r in centred.row_iter_mut() {
        r -= &mean;
    }
    SymMatrix::symmetrize(centred.transpose() * &centred / (window - 1) as f64)
}

/// Covariances of all `T - W + 1` windows of length `W`, updated in `O(m^2)`
/// per step by removing the oldest row and adding the newest.
pub fn sliding_covariance(ts: &TimeSeries, window: usize) -> Result<CovarianceSequence> {
    let t = ts.len();
    if window < 2 {
        return Err(Error::InvalidArgument(format!("window must be >= 2, got {window}")));
    }
    if window > t {
        return Err(Error::InvalidArgument(format!(
            "window {window} exceeds series length {t}"
        )));
    }
    let m = ts.channels();
    let row = |i: usize| -> DVector<f64> { ts.values.row(i).transpose() };

    let mut count = 0usize;
    let mut mean = DVector::<f64>::zeros(m);
    let mut scatter = DMatrix::<f64>::zeros(m, m);
    let add = |x: &DVector<f64>, count: &mut usize, mean: &mut DVector<f64>, scatter: &mut DMatrix<f64>| {
        *count += 1;
        let delta = x - &*mean;
        *mean += &delta / *count as f64;
        scatter.ger(1.0, &delta, &(x - &*mean), 1.0);
    };
    for i in 0..window {
        add(&row(i), &mut count, &mut mean, &mut scatter);
    }

    let mut matrices = Vec::with_capacity(t - window + 1);
    let mut ridge_events = Vec::new();
    for k in 0..=t - window {
        if k > 0 {
            let old = row(k - 1);
            let delta = &old - &mean;
            count -= 1;
            mean -= &delta / count as f64;
            scatter.ger(-1.0, &delta, &(&old - &mean), 1.0);
            add(&row(k + window - 1), &mut count, &mut mean, &mut scatter);
        }
        let c = SymMatrix::symmetrize(&scatter / (window - 1) as f64)?;
        let (spd, event) = regularize(c, k)?;
        ridge_events.extend(event);
        matrices.push(spd);
    }
    Ok(CovarianceSequence {
        sequence: SpdSequence::new(matrices)?,
        window,
        ridge_events,
    })
}

/// Window index at which a regime starting at raw row `row` first appears.
pub fn windowed_location(row: usize, window: usize) -> Option<usize> {
    (row + 1).checked_sub(window)
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses `# <kind> key=value ...`, requiring exactly the keys in `keys`.
fn parse_header(path: &Path, line: &str, kind: &str, keys: &[&str]) -> Result<Vec<usize>> {
    let mut tokens = line.split_whitespace();
    if tokens.next() != Some("#") || tokens.next() != Some(kind) {
        return Err(parse_err(path, 1, format!("expected header '# {kind} ...', got '{line}'")));
    }
    let mut found = vec![None; keys.len()];
    for tok in tokens {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| parse_err(path, 1, format!("malformed header field '{tok}'")))?;
        let slot = keys
            .iter()
            .position(|&k| k == key)
            .ok_or_else(|| parse_err(path, 1, format!("unknown header field '{key}'")))?;
        let v = value
            .parse::<usize>()
            .map_err(|_| parse_err(path, 1, format!("header field {key} is not an integer")))?;
        found[slot] = Some(v);
    }
    found
        .into_iter()
        .zip(keys)
        .map(|(v, k)| v.ok_or_else(|| parse_err(path, 1, format!("header missing {k}="))))
        .collect()
}

/// Numeric rows after the header, each checked for width. Blank trailing
/// lines are ignored.
fn parse_rows(path: &Path, body: &str, expected_rows: usize, width: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(expected_rows * width);
    let mut rows = 0;
    for (k, line) in body.lines().enumerate() {
        let lineno = k + 2;
        if line.trim().is_empty() {
            continue;
        }
        if rows == expected_rows {
            return Err(parse_err(path, lineno, format!("more than {expected_rows} data rows")));
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != width {
            return Err(parse_err(
                path,
                lineno,
                format!("ragged row: expected {width} values, found {}", cells.len()),
            ));
        }
        for cell in cells {
            let v = cell
                .trim()
                .parse::<f64>()
                .map_err(|_| parse_err(path, lineno, format!("non-numeric cell '{}'", cell.trim())))?;
            if !v.is_finite() {
                return Err(parse_err(path, lineno, format!("non-finite value '{}'", cell.trim())));
            }
            out.push(v);
        }
        rows += 1;
    }
    if rows != expected_rows {
        return Err(parse_err(
            path,
            body.lines().count() + 2,
            format!("expected {expected_rows} data rows, found {rows}"),
        ));
    }
    Ok(out)
}

fn split_header(path: &Path, text: &str) -> Result<(String, String)> {
    let mut parts = text.splitn(2, '\n');
    let header = parts
        .next()
        .filter(|h| !h.trim().is_empty())
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    Ok((header.trim_end_matches('\r').to_string(), parts.next().unwrap_or("").to_string()))
}

fn push_row<'a>(out: &mut String, values: impl Iterator<Item = &'a f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(',');
        }
        first = false;
        write!(out, "{v:?}").unwrap();
    }
    out.push('\n');
}

pub fn load_timeseries(path: impl AsRef<Path>) -> Result<TimeSeries> {
    let path = path.as_ref();
    let text = read(path)?;
    let (header, body) = split_header(path, &text)?;
    let hv = parse_header(path, &header, "timeseries", &["m", "T"])?;
    let (m, t) = (hv[0], hv[1]);
    if m == 0 || t == 0 {
        return Err(parse_err(path, 1, "m and T must be positive"));
    }
    let data = parse_rows(path, &body, t, m)?;
    TimeSeries::new(DMatrix::from_row_slice(t, m, &data))
}

pub fn save_timeseries(ts: &TimeSeries, path: impl AsRef<Path>) -> Result<()> {
    let mut out = format!("# timeseries m={} T={}\n", ts.channels(), ts.len());
    for r in ts.values.row_iter() {
        let r: RowDVector<f64> = r.into_owned();
        push_row(&mut out, r.iter());
    }
    write(path.as_ref(), &out)
}

/// Loads an SPD sequence. Matrices failing SPD validation are an error unless
/// `regularize` is set, in which case they get the same ridge as covariance
/// windows and the events are returned.
pub fn load_sequence(
    path: impl AsRef<Path>,
    regularize_windows: bool,
) -> Result<(SpdSequence, Vec<RidgeEvent>)> {
    let path = path.as_ref();
    let text = read(path)?;
    let (header, body) = split_header(path, &text)?;
    let hv = parse_header(path, &header, "spdseq", &["m", "n"])?;
    let (m, n) = (hv[0], hv[1]);
    if m == 0 || n == 0 {
        return Err(parse_err(path, 1, "m and n must be positive"));
    }
    let data = parse_rows(path, &body, n, m * m)?;
    let mut matrices = Vec::with_capacity(n);
    let mut events = Vec::new();
    for (k, chunk) in data.chunks(m * m).enumerate() {
        let a = DMatrix::from_row_slice(m, m, chunk);
        let located = |e: Error| Error::InvalidEntry {
            path: path.to_path_buf(),
            line: k + 2,
            source: Box::new(e),
        };
        let spd = if regularize_windows {
            let (spd, event) = regularize(SymMatrix::new(a).map_err(located)?, k).map_err(located)?;
            events.extend(event);
            spd
        } else {
            SpdMatrix::new(a).map_err(located)?
        };
        matrices.push(spd);
    }
    Ok((SpdSequence::new(matrices)?, events))
}

pub fn save_sequence(seq: &SpdSequence, path: impl AsRef<Path>) -> Result<()> {
    let m = seq.m();
    let mut out = format!("# spdseq m={m} n={}\n", seq.len());
    for y in seq.matrices() {
        let a = y.as_matrix();
        let row_major: Vec<f64> = (0..m * m).map(|k| a[(k / m, k % m)]).collect();
        push_row(&mut out, row_major.iter());
    }
    write(path.as_ref(), &out)
}

/// Gaussian rows with covariance `covariances[q]` from row `change_rows[q-1]`
/// on (zero mean). Row `i` draws from its own RNG stream.
pub fn piecewise_gaussian_series(
    t: usize,
    change_rows: &[usize],
    covariances: &[SpdMatrix],
    seed: u64,
) -> Result<TimeSeries> {
    if covariances.len() != change_rows.len() + 1 {
        return Err(Error::Scenario(format!(
            "{} change rows need {} covariances, got {}",
            change_rows.len(),
            change_rows.len() + 1,
            covariances.len()
        )));
    }
    if change_rows.windows(2).any(|w| w[0] >= w[1]) || change_rows.iter().any(|&r| r == 0 || r >= t) {
        return Err(Error::Scenario(format!("change rows {change_rows:?} must increase within 1..{t}")));
    }
    let m = covariances[0].dim();
    let factors = covariances
        .iter()
        .map(|c| {
            if c.dim() != m {
                return Err(Error::DimensionMismatch { expected: m, found: c.dim() });
            }
            c.as_matrix()
                .clone()
                .cholesky()
                .map(|ch| ch.l())
                .ok_or(Error::NotPositiveDefinite {
                    eigenvalue: c.eigenvalues().min(),
                    tolerance: 0.0,
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut values = DMatrix::zeros(t, m);
    for i in 0..t {
        let q = change_rows.partition_point(|&r| r <= i);
        let mut rng = index_rng(seed, i as u64);
        let z = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
        values.set_row(i, &(&factors[q] * z).transpose());
    }
    TimeSeries::new(values)
}

/// Synthetic stand-in for a block-design fMRI run.
///
/// Channels start quiet (unit variance). At each block change one more pair of
/// channels becomes loud, with variance `loud_variance` and within-pair
/// correlation 1/2, and stays loud. A change meant to appear at window index
/// `c` starts at raw row `c + W - 1`, the last row of window `c`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockDesign {
    pub t: usize,
    pub channels: usize,
    pub window: usize,
    pub window_changes: Vec<usize>,
    pub loud_variance: f64,
}

impl BlockDesign {
    /// 274 samples of 8 channels, windows of 100, blocks switching at
    /// windows 35, 70, 105 and 140.
    pub fn fmri_like() -> Self {
        Self {
            t: 274,
            channels: 8,
            window: 100,
            window_changes: vec![35, 70, 105, 140],
            loud_variance: 400.0,
        }
    }

    pub fn change_rows(&self) -> Vec<usize> {
        self.window_changes.iter().map(|c| c + self.window - 1).collect()
    }

    pub fn covariances(&self) -> Result<Vec<SpdMatrix>> {
        let m = self.channels;
        if 2 * self.window_changes.len() > m {
            return Err(Error::Scenario(format!(
                "{} changes need {} channels, have {m}",
                self.window_changes.len(),
                2 * self.window_changes.len()
            )));
        }
        let b = self.loud_variance;
        (0..=self.window_changes.len())
            .map(|q| {
                let mut c = DMatrix::<f64>::identity(m, m);
                for p in 0..q {
                    let (i, j) = (2 * p, 2 * p + 1);
                    c[(i, i)] = b;
                    c[(j, j)] = b;
                    c[(i, j)] = 0.5 * b;
                    c[(j, i)] = 0.5 * b;
                }
                SpdMatrix::new(c)
            })
            .collect()
    }

    pub fn generate(&self, seed: u64) -> Result<TimeSeries> {
        piecewise_gaussian_series(self.t, &self.change_rows(), &self.covariances()?, seed)
    }
}
