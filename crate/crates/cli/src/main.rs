//! `multitime run <scenario.toml>`: solve, certify, scan or synthesize, and
//! export plot-ready CSV and JSON.
//!
//! Exit status is 0 when the run passes, 2 when a solver fails to converge
//! or a check fails, and 1 for usage, input and I/O errors. The log level is
//! read from `MULTITIME_LOG` (default `warn`).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod artifacts;
mod run;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::artifacts::Artifacts;
use crate::scenario::Overrides;

#[derive(Debug, Parser)]
#[command(name = "multitime", version, about = "Multitime optimal control laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario file and write its exports.
    Run {
        scenario: PathBuf,
        /// Output directory (overrides `output`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Tolerance (overrides `tolerance`).
        #[arg(long)]
        tol: Option<f64>,
        /// Grid resolution per axis, comma separated (overrides
        /// `grid.resolution`, or the chart of an isoperimetric scan).
        #[arg(long, value_delimiter = ',')]
        resolution: Option<Vec<usize>>,
    },
}

fn execute(command: Command) -> Result<Vec<String>> {
    let Command::Run {
        scenario,
        out,
        tol,
        resolution,
    } = command;
    let overrides = Overrides {
        out,
        tolerance: tol,
        resolution,
    };
    let s = scenario::load(&scenario, &overrides)?;
    log::info!("{} scenario {}", s.kind.name(), s.name);
    let mut art = Artifacts::create(&s.output)?;
    let failures = run::run(&s, &mut art)?;
    let dir = art.dir().to_path_buf();
    let count = art.entries().len();
    art.finish(&s.name, s.kind.name(), failures.is_empty())?;
    println!(
        "{}: {} ({} artifacts in {})",
        s.name,
        if failures.is_empty() { "pass" } else { "FAIL" },
        count,
        dir.display()
    );
    Ok(failures)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MULTITIME_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(failures) if failures.is_empty() => ExitCode::SUCCESS,
        Ok(failures) => {
            for f in failures {
                eprintln!("failed: {f}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
