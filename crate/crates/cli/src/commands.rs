use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use spdcp::bench::{format_table, run_monte_carlo, to_csv, BenchReport};
use spdcp::detection::{detect, embed, Detection, Method, SelectionRule};
use spdcp::geometry::{sym_basis, SpdMatrix, Truncation};
use spdcp::ingest::{
    load_sequence, load_timeseries, save_sequence, save_timeseries, sliding_covariance,
    BlockDesign,
};
use spdcp::model::{generate_sequence, scenario_means, SpdSequence};

use crate::config::{
    BenchConfig, CliError, CliResult, CovseqConfig, DetectConfig, DetectParams, SimulateConfig,
};

#[derive(Serialize)]
struct Provenance<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config: &'a C,
}

fn provenance<'a, C: Serialize>(command: &'a str, seed: u64, config: &'a C) -> Provenance<'a, C> {
    Provenance {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed,
        config,
    }
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_text(path: PathBuf, text: &str) -> CliResult<PathBuf> {
    fs::write(&path, text).map_err(|source| CliError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

fn write_json(path: PathBuf, value: &impl Serialize) -> CliResult<PathBuf> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Config(format!("cannot serialize output: {e}")))?;
    write_text(path, &(text + "\n"))
}

fn row_major(mu: &SpdMatrix) -> Vec<f64> {
    let a = mu.as_matrix();
    let k = a.ncols();
    (0..a.len()).map(|i| a[(i / k, i % k)]).collect()
}

pub fn simulate(cfg: &SimulateConfig) -> CliResult<String> {
    let means = scenario_means(cfg.scenario, cfg.n, cfg.m)?;
    let basis = sym_basis(cfg.m)?;
    let seq = generate_sequence(&means, cfg.sigma, &basis, Truncation::default(), cfg.seed)?;
    ensure_dir(&cfg.out)?;
    let seq_path = cfg.out.join("sequence.csv");
    save_sequence(&seq, &seq_path)?;
    let truth = json!({
        "provenance": provenance("simulate", cfg.seed, cfg),
        "scenario": cfg.scenario,
        "n": cfg.n,
        "m": cfg.m,
        "sigma": cfg.sigma,
        "seed": cfg.seed,
        "breakpoints": means.breakpoints(),
        "means": means.means().iter().map(row_major).collect::<Vec<_>>(),
    });
    let truth_path = write_json(cfg.out.join("truth.json"), &truth)?;
    Ok(format!(
        "simulated {} n={} m={} sigma={} seed={}\nbreakpoints: {:?}\nwrote {}\nwrote {}\n",
        cfg.scenario,
        cfg.n,
        cfg.m,
        cfg.sigma,
        cfg.seed,
        means.breakpoints(),
        seq_path.display(),
        truth_path.display()
    ))
}

fn run_detection(seq: &SpdSequence, params: &DetectParams, seed: u64) -> CliResult<Detection> {
    let basis = sym_basis(seq.m())?;
    let embedded = embed(seq, params.method, params.log_baselines, &basis)?;
    Ok(detect(&embedded, &params.detector(seed))?)
}

fn detection_json(det: &Detection, method: Method) -> serde_json::Value {
    json!({
        "method": method,
        "result": det.result,
        "scan": { "positions": det.profile.positions, "norms": det.profile.norms },
        "cv": det.cv,
    })
}

fn detection_table(det: &Detection, method: Method) -> String {
    let r = &det.result;
    let mut out = String::new();
    let rule = match r.rule {
        SelectionRule::Threshold { rho } => format!("threshold rho = {rho}"),
        SelectionRule::CrossValidation { folds, k_max, seed } => {
            format!("cross-validation K = {folds}, k_max = {k_max}, seed = {seed}")
        }
    };
    writeln!(out, "method: {method}  h: {}  selection: {rule}", r.h).unwrap();
    writeln!(out, "J_hat = {}", r.j_hat).unwrap();
    if r.j_hat > 0 {
        writeln!(out, "{:>4}  {:>8}  {:>12}", "#", "tau_hat", "||G||").unwrap();
        for (k, (tau, g)) in r.tau_hat.iter().zip(&r.scan_values).enumerate() {
            writeln!(out, "{:>4}  {:>8}  {:>12.6}", k + 1, tau, g).unwrap();
        }
    }
    if let Some(cv) = &det.cv {
        writeln!(out, "{:>4}  {:>14}", "k", "CV(k)").unwrap();
        for (k, e) in cv.k_values.iter().zip(&cv.cv_errors) {
            writeln!(out, "{k:>4}  {e:>14.6}").unwrap();
        }
        if let Some(why) = &cv.truncated {
            writeln!(out, "(k range truncated: {why})").unwrap();
        }
    }
    out
}

pub fn detect_cmd(cfg: &DetectConfig) -> CliResult<String> {
    let (seq, ridge) = load_sequence(&cfg.input, cfg.regularize)?;
    let det = run_detection(&seq, &cfg.params, cfg.seed)?;
    ensure_dir(&cfg.out)?;
    let mut report = detection_json(&det, cfg.params.method);
    report["provenance"] = serde_json::to_value(provenance("detect", cfg.seed, cfg)).unwrap();
    report["input"] = json!({ "path": cfg.input, "n": seq.len(), "m": seq.m(), "ridge_events": ridge });
    let path = write_json(cfg.out.join("detection.json"), &report)?;
    Ok(format!(
        "{}: n={} m={}\n{}wrote {}\n",
        cfg.input.display(),
        seq.len(),
        seq.m(),
        detection_table(&det, cfg.params.method),
        path.display()
    ))
}

pub fn bench(cfg: &BenchConfig) -> CliResult<String> {
    let run = || -> CliResult<Vec<BenchReport>> {
        let mut reports = Vec::new();
        for d in &cfg.designs {
            for &method in &cfg.methods {
                reports.push(run_monte_carlo(&cfg.scenario(d, method))?);
            }
        }
        Ok(reports)
    };
    let reports = match cfg.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| CliError::Config(format!("cannot start {jobs} workers: {e}")))?
            .install(run)?,
        None => run()?,
    };
    ensure_dir(&cfg.out)?;
    let table = format_table(&reports);
    let csv = write_text(cfg.out.join("bench.csv"), &to_csv(&reports))?;
    let txt = write_text(cfg.out.join("bench.txt"), &table)?;
    let js = write_json(
        cfg.out.join("bench.json"),
        &json!({ "provenance": provenance("bench", cfg.seed, cfg), "reports": reports }),
    )?;
    Ok(format!(
        "{table}wrote {}\nwrote {}\nwrote {}\n",
        csv.display(),
        txt.display(),
        js.display()
    ))
}

pub fn covseq(cfg: &CovseqConfig) -> CliResult<String> {
    ensure_dir(&cfg.out)?;
    let mut out = String::new();
    let mut report = json!({ "provenance": provenance("covseq", cfg.seed, cfg) });
    let ts = if let Some(input) = &cfg.input {
        load_timeseries(input)?
    } else {
        let design = BlockDesign {
            window: cfg.window,
            ..BlockDesign::fmri_like()
        };
        let ts = design.generate(cfg.seed)?;
        let path = cfg.out.join("timeseries.csv");
        save_timeseries(&ts, &path)?;
        writeln!(out, "wrote {}", path.display()).unwrap();
        writeln!(
            out,
            "synthetic block design: changes at rows {:?}, windows {:?}",
            design.change_rows(),
            design.window_changes
        )
        .unwrap();
        report["design"] = serde_json::to_value(&design).unwrap();
        ts
    };
    let cov = sliding_covariance(&ts, cfg.window)?;
    let seq_path = cfg.out.join("covariances.csv");
    save_sequence(&cov.sequence, &seq_path)?;
    writeln!(
        out,
        "T={} m={} window={} -> {} covariance matrices ({} ridge-regularized)",
        ts.len(),
        ts.channels(),
        cfg.window,
        cov.sequence.len(),
        cov.ridge_events.len()
    )
    .unwrap();
    writeln!(out, "wrote {}", seq_path.display()).unwrap();
    report["T"] = json!(ts.len());
    report["m"] = json!(ts.channels());
    report["window"] = json!(cfg.window);
    report["n_windows"] = json!(cov.sequence.len());
    report["ridge_events"] = json!(cov.ridge_events);
    if cfg.detect {
        let det = run_detection(&cov.sequence, &cfg.params, cfg.seed)?;
        out.push_str(&detection_table(&det, cfg.params.method));
        report["detection"] = detection_json(&det, cfg.params.method);
    }
    let path = write_json(cfg.out.join("covseq.json"), &report)?;
    writeln!(out, "wrote {}", path.display()).unwrap();
    Ok(out)
}
