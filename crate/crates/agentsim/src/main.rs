//! Command-line front end: run scenarios, recompute metrics from stored
//! traces, compare runs, validate scenario files, sweep seeds.
//!
//! Exit codes: 0 success, 1 file I/O, 2 usage, 3 scenario syntax,
//! 4 scenario validation, 5 malformed trace, 6 simulation failure.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use agentsim::engine::EngineError;
use agentsim::metrics::{compare_runs, compute_metrics, MetricsError, MetricsReport};
use agentsim::scenario::{load_scenario, ScenarioError, ValidatedScenario};
use agentsim::trace::{RunTrace, TraceError};

#[derive(Parser)]
#[command(
    name = "agentsim",
    version,
    about = "Deterministic multi-host mobile-agent platform simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and print its metrics report.
    Run {
        /// Scenario file (TOML).
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the full trace (JSON lines) here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Recompute the metrics report of a stored trace.
    Metrics {
        /// Trace file (JSON lines).
        trace: PathBuf,
    },
    /// Compare the metrics of two stored traces.
    Compare {
        left: PathBuf,
        right: PathBuf,
    },
    /// Parse and validate a scenario without running it.
    Validate { scenario: PathBuf },
    /// Run one scenario under consecutive seeds and summarize.
    Sweep {
        scenario: PathBuf,
        /// Number of runs.
        #[arg(long, default_value_t = 8)]
        runs: u32,
        /// Seed of the first run; run `i` uses `base_seed + i`.
        #[arg(long, default_value_t = 0)]
        base_seed: u64,
    },
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

fn scenario_failure(path: &Path, err: ScenarioError) -> Failure {
    let message = format!("{}: {err}", path.display());
    match err {
        ScenarioError::Io(_) => Failure::new(1, message),
        ScenarioError::Parse(_) => Failure::new(3, message),
        _ => Failure::new(4, message),
    }
}

fn trace_failure(path: &Path, err: TraceError) -> Failure {
    let message = format!("{}: {err}", path.display());
    match err {
        TraceError::Io(_) => Failure::new(1, message),
        TraceError::Parse { .. } => Failure::new(5, message),
    }
}

fn io_failure(path: &Path, err: std::io::Error) -> Failure {
    Failure::new(1, format!("{}: {err}", path.display()))
}

/// Relative output paths land under `AGENTSIM_OUT_DIR` when it is set.
fn resolve_out(path: PathBuf) -> PathBuf {
    if path.is_absolute() {
        return path;
    }
    match std::env::var_os("AGENTSIM_OUT_DIR") {
        Some(dir) => PathBuf::from(dir).join(path),
        None => path,
    }
}

fn load(path: &Path) -> Result<ValidatedScenario, Failure> {
    load_scenario(path).map_err(|e| scenario_failure(path, e))
}

fn read_trace(path: &Path) -> Result<RunTrace, Failure> {
    let file = File::open(path).map_err(|e| io_failure(path, e))?;
    RunTrace::read_jsonl(BufReader::new(file)).map_err(|e| trace_failure(path, e))
}

fn report_of(trace: &RunTrace, origin: &Path) -> Result<MetricsReport, Failure> {
    compute_metrics(&trace.records).map_err(|e: MetricsError| {
        Failure::new(5, format!("{}: {e}", origin.display()))
    })
}

fn print_json(value: &impl Serialize) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("reports always serialize")
    );
}

fn run_command(
    scenario_path: PathBuf,
    seed: Option<u64>,
    out: Option<PathBuf>,
    report_path: Option<PathBuf>,
) -> Result<(), Failure> {
    let scenario = load(&scenario_path)?;
    let seed = seed.unwrap_or(scenario.seed);
    let trace = agentsim::run(&scenario, seed).map_err(|e: EngineError| {
        Failure::new(6, format!("{}: {e}", scenario_path.display()))
    })?;
    if let Some(out) = out {
        let out = resolve_out(out);
        let file = File::create(&out).map_err(|e| io_failure(&out, e))?;
        let mut writer = BufWriter::new(file);
        trace
            .write_jsonl(&mut writer)
            .map_err(|e| trace_failure(&out, e))?;
        writer.flush().map_err(|e| io_failure(&out, e))?;
    }
    let report = report_of(&trace, &scenario_path)?;
    match report_path {
        Some(path) => {
            let path = resolve_out(path);
            let json =
                serde_json::to_string_pretty(&report).expect("reports always serialize");
            std::fs::write(&path, json + "\n").map_err(|e| io_failure(&path, e))?;
        }
        None => print_json(&report),
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepSummary {
    runs: u32,
    base_seed: u64,
    mean: BTreeMap<String, f64>,
    reports: Vec<MetricsReport>,
}

fn sweep_command(scenario_path: PathBuf, runs: u32, base_seed: u64) -> Result<(), Failure> {
    let scenario = load(&scenario_path)?;
    let seeds: Vec<u64> = (0..u64::from(runs)).map(|i| base_seed + i).collect();
    let mut reports = Vec::with_capacity(seeds.len());
    for (i, result) in agentsim::run_reports(&scenario, &seeds).into_iter().enumerate() {
        let report = result.map_err(|e| {
            Failure::new(
                6,
                format!("{} (seed {}): {e}", scenario_path.display(), seeds[i]),
            )
        })?;
        reports.push(report);
    }
    let mut mean = BTreeMap::new();
    if !reports.is_empty() {
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        mean.insert("sends".to_string(), avg(|r| r.sends as f64));
        mean.insert("delivered".to_string(), avg(|r| r.delivered as f64));
        mean.insert("lost".to_string(), avg(|r| r.lost as f64));
        mean.insert(
            "inter_host_transmissions".to_string(),
            avg(|r| r.inter_host_transmissions as f64),
        );
        mean.insert("network_load".to_string(), avg(|r| r.network_load as f64));
        mean.insert("migrations".to_string(), avg(|r| r.migrations as f64));
    }
    print_json(&SweepSummary {
        runs,
        base_seed,
        mean,
        reports,
    });
    Ok(())
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run {
            scenario,
            seed,
            out,
            report,
        } => run_command(scenario, seed, out, report),
        Command::Metrics { trace } => {
            let records = read_trace(&trace)?;
            print_json(&report_of(&records, &trace)?);
            Ok(())
        }
        Command::Compare { left, right } => {
            let left_report = report_of(&read_trace(&left)?, &left)?;
            let right_report = report_of(&read_trace(&right)?, &right)?;
            print_json(&compare_runs(&left_report, &right_report));
            Ok(())
        }
        Command::Validate { scenario } => {
            let validated = load(&scenario)?;
            println!(
                "OK: {} hosts, {} agents, horizon {}",
                validated.hosts.len(),
                validated.agents.len(),
                validated.horizon
            );
            Ok(())
        }
        Command::Sweep {
            scenario,
            runs,
            base_seed,
        } => sweep_command(scenario, runs, base_seed),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(failure) = dispatch(cli.command) {
        eprintln!("error: {}", failure.message);
        std::process::exit(failure.code);
    }
}
