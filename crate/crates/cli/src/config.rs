//! Flag resolution: built-in defaults, then the `--config` file, then flags.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spdcp::bench::Scenario;
use spdcp::detection::{DetectorConfig, Method, DEFAULT_FOLDS, DEFAULT_H, DEFAULT_K_MAX};
use spdcp::model::ScenarioId;
use spdcp::ErrorKind;

use crate::args::{BenchArgs, CovseqArgs, DetectArgs, DetectFlags, Shared, SimulateArgs};

pub const DEFAULT_SEED: u64 = Scenario::DEFAULT_SEED;
pub const DEFAULT_WINDOW: usize = 100;

#[derive(Debug)]
pub enum CliError {
    Core(spdcp::Error),
    Config(String),
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Config(_) => ErrorKind::Config,
            CliError::Io { .. } => ErrorKind::Io,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Config(msg) => write!(f, "invalid configuration: {msg}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

impl From<spdcp::Error> for CliError {
    fn from(e: spdcp::Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Contents of a `--config` JSON file. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub h: Option<usize>,
    pub k_folds: Option<usize>,
    pub k_max: Option<usize>,
    pub rho: Option<f64>,
    pub method: Option<Method>,
    pub log_baselines: Option<bool>,
    pub scenario: Option<ScenarioId>,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub sigma: Option<f64>,
    pub input: Option<PathBuf>,
    pub regularize: Option<bool>,
    pub designs: Option<Vec<String>>,
    pub methods: Option<Vec<Method>>,
    pub reps: Option<usize>,
    pub jobs: Option<usize>,
    pub window: Option<usize>,
    pub synthetic: Option<bool>,
    pub detect: Option<bool>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn pick_bool(flag: bool, file: Option<bool>) -> bool {
    flag || file.unwrap_or(false)
}

fn check(cond: bool, msg: impl Into<String>) -> CliResult<()> {
    if cond {
        Ok(())
    } else {
        Err(CliError::Config(msg.into()))
    }
}

fn sigma_ok(sigma: f64) -> CliResult<()> {
    check(sigma.is_finite() && sigma >= 0.0, format!("--sigma must be finite and >= 0, got {sigma}"))
}

fn out_dir(shared: &Shared, file: &ConfigFile) -> PathBuf {
    pick(shared.out.clone(), file.out.clone(), PathBuf::from("out"))
}

/// Resolved detection parameters.
#[derive(Debug, Clone, Serialize)]
pub struct DetectParams {
    pub method: Method,
    pub log_baselines: bool,
    pub h: usize,
    pub k_folds: usize,
    pub k_max: usize,
    pub rho: Option<f64>,
}

impl DetectParams {
    fn resolve(flags: &DetectFlags, file: &ConfigFile) -> CliResult<Self> {
        let p = Self {
            method: pick(flags.method, file.method, Method::Proposed),
            log_baselines: pick_bool(flags.log_baselines, file.log_baselines),
            h: pick(flags.h, file.h, DEFAULT_H),
            k_folds: pick(flags.k_folds, file.k_folds, DEFAULT_FOLDS),
            k_max: pick(flags.k_max, file.k_max, DEFAULT_K_MAX),
            rho: flags.rho.or(file.rho),
        };
        check(p.h >= 1, "--h must be >= 1")?;
        check(p.k_folds >= 2, format!("--k-folds must be >= 2, got {}", p.k_folds))?;
        if let Some(rho) = p.rho {
            check(rho.is_finite() && rho > 0.0, format!("--rho must be > 0, got {rho}"))?;
        }
        Ok(p)
    }

    pub fn detector(&self, seed: u64) -> DetectorConfig {
        DetectorConfig {
            h: self.h,
            folds: self.k_folds,
            k_max: self.k_max,
            rho: self.rho,
            cv_seed: seed,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateConfig {
    pub scenario: ScenarioId,
    pub n: usize,
    pub m: usize,
    pub sigma: f64,
    pub seed: u64,
    pub out: PathBuf,
}

impl SimulateConfig {
    pub fn resolve(a: &SimulateArgs) -> CliResult<Self> {
        let f = ConfigFile::load(a.shared.config.as_deref())?;
        let c = Self {
            scenario: pick(a.scenario, f.scenario, ScenarioId::J2),
            n: pick(a.n, f.n, 100),
            m: pick(a.m, f.m, 6),
            sigma: pick(a.sigma, f.sigma, 1.0),
            seed: pick(a.shared.seed, f.seed, DEFAULT_SEED),
            out: out_dir(&a.shared, &f),
        };
        sigma_ok(c.sigma)?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DetectConfig {
    pub input: PathBuf,
    pub regularize: bool,
    #[serde(flatten)]
    pub params: DetectParams,
    pub seed: u64,
    pub out: PathBuf,
}

impl DetectConfig {
    pub fn resolve(a: &DetectArgs) -> CliResult<Self> {
        let f = ConfigFile::load(a.shared.config.as_deref())?;
        let input = a
            .input
            .clone()
            .or(f.input.clone())
            .ok_or_else(|| CliError::Config("detect needs --input <sequence.csv>".into()))?;
        Ok(Self {
            input,
            regularize: pick_bool(a.regularize, f.regularize),
            params: DetectParams::resolve(&a.detect, &f)?,
            seed: pick(a.shared.seed, f.seed, DEFAULT_SEED),
            out: out_dir(&a.shared, &f),
        })
    }
}

/// One `(scenario, n, m)` design of the simulation tables.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Design {
    pub scenario: ScenarioId,
    pub n: usize,
    pub m: usize,
}

impl std::str::FromStr for Design {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = || CliError::Config(format!("design '{s}' should look like J2:100:6"));
        if parts.len() != 3 {
            return Err(bad());
        }
        Ok(Self {
            scenario: parts[0].parse().map_err(|_| bad())?,
            n: parts[1].parse().map_err(|_| bad())?,
            m: parts[2].parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchConfig {
    pub designs: Vec<Design>,
    pub methods: Vec<Method>,
    pub reps: usize,
    pub jobs: Option<usize>,
    pub sigma: f64,
    #[serde(flatten)]
    pub params: DetectParams,
    pub seed: u64,
    pub out: PathBuf,
}

impl BenchConfig {
    pub fn resolve(a: &BenchArgs) -> CliResult<Self> {
        let f = ConfigFile::load(a.shared.config.as_deref())?;
        let designs = match a.designs.clone().or(f.designs.clone()) {
            Some(list) => list.iter().map(|s| s.parse()).collect::<CliResult<Vec<Design>>>()?,
            None => vec![
                Design { scenario: ScenarioId::J2, n: 100, m: 6 },
                Design { scenario: ScenarioId::J2, n: 200, m: 6 },
                Design { scenario: ScenarioId::J4, n: 200, m: 6 },
                Design { scenario: ScenarioId::J4, n: 400, m: 6 },
            ],
        };
        let params = DetectParams::resolve(&a.detect, &f)?;
        check(params.rho.is_none(), "bench always selects by cross-validation; drop --rho")?;
        let c = Self {
            designs,
            methods: pick(a.methods.clone(), f.methods.clone(), Method::ALL.to_vec()),
            reps: pick(a.reps, f.reps, Scenario::DEFAULT_REPS),
            jobs: a.jobs.or(f.jobs),
            sigma: pick(a.sigma, f.sigma, 1.0),
            params,
            seed: pick(a.shared.seed, f.seed, DEFAULT_SEED),
            out: out_dir(&a.shared, &f),
        };
        check(!c.designs.is_empty() && !c.methods.is_empty(), "need at least one design and method")?;
        check(c.reps >= 1, "--reps must be >= 1")?;
        check(c.jobs != Some(0), "--jobs must be >= 1")?;
        sigma_ok(c.sigma)?;
        Ok(c)
    }

    pub fn scenario(&self, d: &Design, method: Method) -> Scenario {
        Scenario {
            id: d.scenario,
            n: d.n,
            m: d.m,
            sigma: self.sigma,
            h: self.params.h,
            folds: self.params.k_folds,
            k_max: self.params.k_max,
            method,
            log_baselines: self.params.log_baselines,
            reps: self.reps,
            master_seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CovseqConfig {
    pub input: Option<PathBuf>,
    pub synthetic: bool,
    pub window: usize,
    pub detect: bool,
    #[serde(flatten)]
    pub params: DetectParams,
    pub seed: u64,
    pub out: PathBuf,
}

impl CovseqConfig {
    pub fn resolve(a: &CovseqArgs) -> CliResult<Self> {
        let f = ConfigFile::load(a.shared.config.as_deref())?;
        let synthetic = pick_bool(a.synthetic, f.synthetic);
        let input = a.input.clone().or(f.input.clone());
        check(
            synthetic != input.is_some(),
            "covseq needs exactly one of --input <timeseries.csv> or --synthetic",
        )?;
        let c = Self {
            input,
            synthetic,
            window: pick(a.window, f.window, DEFAULT_WINDOW),
            detect: pick_bool(a.run_detection, f.detect),
            params: DetectParams::resolve(&a.detect, &f)?,
            seed: pick(a.shared.seed, f.seed, DEFAULT_SEED),
            out: out_dir(&a.shared, &f),
        };
        check(c.window >= 2, "--window must be >= 2")?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let file = ConfigFile {
            h: Some(15),
            k_max: Some(3),
            method: Some(Method::Vector),
            ..Default::default()
        };
        let flags = DetectFlags {
            h: Some(10),
            ..Default::default()
        };
        let p = DetectParams::resolve(&flags, &file).unwrap();
        assert_eq!(p.h, 10);
        assert_eq!(p.k_max, 3);
        assert_eq!(p.method, Method::Vector);
        assert_eq!(p.k_folds, DEFAULT_FOLDS);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let file = ConfigFile::default();
        for flags in [
            DetectFlags { h: Some(0), ..Default::default() },
            DetectFlags { k_folds: Some(1), ..Default::default() },
            DetectFlags { rho: Some(-1.0), ..Default::default() },
        ] {
            let e = DetectParams::resolve(&flags, &file).unwrap_err();
            assert_eq!(e.kind(), ErrorKind::Config);
        }
    }

    #[test]
    fn design_parsing() {
        let d: Design = "J4:400:10".parse().unwrap();
        assert_eq!((d.scenario, d.n, d.m), (ScenarioId::J4, 400, 10));
        assert!("J4:400".parse::<Design>().is_err());
        assert!("J9:400:6".parse::<Design>().is_err());
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let e = serde_json::from_str::<ConfigFile>(r#"{"bandwidth": 3}"#);
        assert!(e.is_err());
        let ok: ConfigFile = serde_json::from_str(r#"{"h": 3, "method": "symmetric"}"#).unwrap();
        assert_eq!(ok.method, Some(Method::Symmetric));
    }
}
