mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;
use spdcp::ErrorKind;

use args::{Cli, Command};
use config::{BenchConfig, CliResult, CovseqConfig, DetectConfig, SimulateConfig};

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Io => 3,
        ErrorKind::Numerical => 4,
    }
}

fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Simulate(a) => commands::simulate(&SimulateConfig::resolve(&a)?),
        Command::Detect(a) => commands::detect_cmd(&DetectConfig::resolve(&a)?),
        Command::Bench(a) => commands::bench(&BenchConfig::resolve(&a)?),
        Command::Covseq(a) => commands::covseq(&CovseqConfig::resolve(&a)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
