//! Command-line front end for the coopreg pipeline.
//!
//! Exit codes: 0 success, 2 data not informative, 3 numerical failure,
//! 4 invalid input or any other error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use coopreg::graph::{bound_report, GraphSpec, DEFAULT_SAFETY};
use coopreg::harness::io::collect_file;
use coopreg::harness::{run_pipeline, run_simulate, run_synthesize, run_verify, DataSet, Mode, RunOptions, Scenario};
use coopreg::linalg::from_rows;
use coopreg::synthesis::{GainSet, SynthesisOptions};
use coopreg::Error;
use nalgebra::DMatrix;
use serde::Serialize;

const EXIT_INVALID: u8 = 4;

#[derive(Parser)]
#[command(name = "coopreg", version, about = "Data-driven cooperative output regulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage of a scenario and write the report.
    Pipeline {
        #[arg(long)]
        scenario: PathBuf,
        /// Report path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for trajectory CSVs, the encoded data set and the gains.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Lower bounds on the follower block spectrum and the coupling gain.
    Bounds {
        #[arg(long)]
        graph: PathBuf,
        /// Largest real part of the exosystem spectrum.
        #[arg(long, default_value_t = 0.0)]
        max_re_s: f64,
        #[arg(long, default_value_t = DEFAULT_SAFETY)]
        safety: f64,
        /// Also report the eigensolver value for comparison.
        #[arg(long)]
        oracle: bool,
    },
    /// Run the data experiment of a scenario and write CSV plus encoded data.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Fit a trajectory CSV in the Chebyshev basis.
    Collect {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value_t = coopreg::opb::DEFAULT_DEGREE)]
        degree: usize,
        #[arg(long, num_args = 2, allow_negative_numbers = true, value_names = ["T0", "T1"])]
        window: Vec<f64>,
        /// Coefficient CSV path; defaults to `<input>.coeffs.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize gains from an encoded data set.
    Synthesize {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Exact)]
        mode: ModeArg,
        /// JSON list with one K1 matrix (or null) per agent.
        #[arg(long)]
        inject_k1: Option<PathBuf>,
        /// JSON file with synthesis options.
        #[arg(long)]
        options: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Where to write the gain set for a later `verify`.
        #[arg(long)]
        gains_out: Option<PathBuf>,
    },
    /// Close the loop of a scenario with gains from a file.
    Verify {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        gains: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exact,
    Noisy,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Exact => Mode::Exact,
            ModeArg::Noisy => Mode::Noisy,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Error>().map_or(EXIT_INVALID, |e| e.exit_code() as u8);
            ExitCode::from(code)
        }
    }
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn report_failure(stage: &str, message: &str) {
    eprintln!("failed at {stage}: {message}");
}

fn run(command: Command) -> anyhow::Result<u8> {
    match command {
        Command::Pipeline { scenario, out, csv } => {
            let s = Scenario::load(&scenario)?;
            let report = run_pipeline(&s, &RunOptions { csv_dir: csv });
            emit(&report, out.as_deref())?;
            if let Some(f) = &report.failure {
                report_failure(&f.stage, &f.message);
            }
            Ok(report.exit_code() as u8)
        }
        Command::Bounds { graph, max_re_s, safety, oracle } => {
            let text = std::fs::read_to_string(&graph).with_context(|| format!("reading {}", graph.display()))?;
            let g: GraphSpec = serde_json::from_str(&text).map_err(Error::from)?;
            emit(&bound_report(&g, max_re_s, safety, oracle)?, None)?;
            Ok(0)
        }
        Command::Simulate { scenario, csv } => {
            let s = Scenario::load(&scenario)?;
            for path in run_simulate(&s, &csv)? {
                println!("{}", path.display());
            }
            Ok(0)
        }
        Command::Collect { csv, degree, window, out } => {
            let out = out.unwrap_or_else(|| csv.with_extension("coeffs.csv"));
            let sidecar = out.with_extension("json");
            let side = collect_file(&csv, degree, (window[0], window[1]), &out, &sidecar)?;
            emit(&side, None)?;
            Ok(0)
        }
        Command::Synthesize { data, mode, inject_k1, options, out, gains_out } => {
            let d = DataSet::load(&data)?;
            let opts: SynthesisOptions = match options {
                Some(path) => serde_json::from_str(&std::fs::read_to_string(&path)?).map_err(Error::from)?,
                None => SynthesisOptions::default(),
            };
            let overrides = match inject_k1 {
                Some(path) => load_k1_overrides(&path)?,
                None => Vec::new(),
            };
            let report = run_synthesize(&d, mode.into(), &opts, &overrides);
            emit(&report, out.as_deref())?;
            if let (Some(path), Some(gains)) = (gains_out, &report.gains) {
                emit(gains, Some(&path))?;
            }
            if let Some(f) = &report.failure {
                report_failure(&f.stage, &f.message);
            }
            Ok(report.exit_code() as u8)
        }
        Command::Verify { scenario, gains, out, csv } => {
            let s = Scenario::load(&scenario)?;
            let text = std::fs::read_to_string(&gains).with_context(|| format!("reading {}", gains.display()))?;
            let g: GainSet = serde_json::from_str(&text).map_err(Error::from)?;
            let report = run_verify(&s, &g, &RunOptions { csv_dir: csv });
            emit(&report, out.as_deref())?;
            if let Some(f) = &report.failure {
                report_failure(&f.stage, &f.message);
            }
            Ok(report.exit_code() as u8)
        }
    }
}

/// Reads a JSON list holding one row-major K1 matrix or `null` per agent.
fn load_k1_overrides(path: &Path) -> anyhow::Result<Vec<Option<DMatrix<f64>>>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let rows: Vec<Option<Vec<Vec<f64>>>> = serde_json::from_str(&text).map_err(Error::from)?;
    let matrices = rows.iter().map(|r| r.as_deref().map(from_rows).transpose()).collect::<Result<_, _>>()?;
    Ok(matrices)
}
