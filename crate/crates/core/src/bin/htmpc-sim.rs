use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use htmpc_core::scenario::{
    aggregate, compute_metrics, run_batch, write_aggregate_csv, write_metrics_csv, BatchGrid, EndReason, RunLog, RunOutcome, ScenarioConfig,
};
use htmpc_core::mapping::write_field;
use htmpc_core::Error;

/// Closed-loop simulator for perceptive hierarchical-task MPC.
#[derive(Parser)]
#[command(name = "htmpc-sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its log and metrics.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the final distance field to `map.edf`.
        #[arg(long)]
        export_map: bool,
    },
    /// Run a template over a seed range and parameter grid.
    Batch {
        template: PathBuf,
        /// Half-open seed range `a..b`.
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write every trial's run log.
        #[arg(long)]
        logs: bool,
    },
    /// Read a run log back.
    Replay {
        runlog: PathBuf,
        /// Recompute the metrics row and print it as CSV.
        #[arg(long)]
        metrics: bool,
    },
}

const EXIT_INCOMPLETE: u8 = 1;
const EXIT_COLLISION: u8 = 2;
const EXIT_CONFIG: u8 = 3;

fn parse_seeds(s: &str) -> Result<std::ops::Range<u64>, Error> {
    let (a, b) = s.split_once("..").ok_or_else(|| Error::Config(format!("seed range `{s}` is not of the form a..b")))?;
    let parse = |v: &str| v.trim().parse::<u64>().map_err(|e| Error::Config(format!("seed range `{s}`: {e}")));
    let (a, b) = (parse(a)?, parse(b)?);
    if b <= a {
        return Err(Error::Config(format!("seed range `{s}` is empty")));
    }
    Ok(a..b)
}

fn write_outcome(dir: &Path, stem: &str, outcome: &RunOutcome) -> Result<(), Error> {
    let mut w = BufWriter::new(File::create(dir.join(format!("{stem}.jsonl")))?);
    outcome.log.write_jsonl(&mut w)?;
    w.flush()?;
    Ok(())
}

fn run(scenario: &Path, seed: Option<u64>, out: &Path, export_map: bool) -> Result<EndReason, Error> {
    let cfg = ScenarioConfig::load(scenario)?;
    let seed = seed.unwrap_or(cfg.seed);
    let outcome = htmpc_core::scenario::run_scenario(&cfg, seed)?;
    fs::create_dir_all(out)?;
    write_outcome(out, "run", &outcome)?;
    write_metrics_csv(File::create(out.join("metrics.csv"))?, std::slice::from_ref(&outcome.metrics))?;
    let mut t = BufWriter::new(File::create(out.join("timing.csv"))?);
    writeln!(t, "cycle,solve_seconds")?;
    for (i, s) in outcome.solve_times.iter().enumerate() {
        writeln!(t, "{i},{s}")?;
    }
    t.flush()?;
    if export_map {
        let mut w = BufWriter::new(File::create(out.join("map.edf"))?);
        write_field(&mut w, outcome.map.version, outcome.map.time, &outcome.map.edf)?;
        w.flush()?;
    }
    let m = &outcome.metrics;
    println!(
        "{}: {:?} at {:.1} s, subtasks {}/{}, min clearance {:.3} m, path {:.2} m",
        m.trial_id, m.end_reason, m.end_time, m.subtasks_completed, m.subtasks_total, m.min_clearance, m.path_length
    );
    Ok(outcome.end)
}

fn batch(template: &Path, seeds: &str, grid: Option<&Path>, out: &Path, logs: bool) -> Result<(), Error> {
    let cfg = ScenarioConfig::load(template)?;
    let seeds = parse_seeds(seeds)?;
    let grid = grid.map(BatchGrid::load).transpose()?.unwrap_or_default();
    fs::create_dir_all(out)?;
    if logs {
        fs::create_dir_all(out.join("logs"))?;
    }
    let results = run_batch(&cfg, seeds, &grid, |res, outcome| {
        match (&res.error, &res.row) {
            (Some(e), _) => eprintln!("{}: failed: {e}", res.name),
            (None, Some(r)) => eprintln!("{}: {:?}, clearance {:.3} m", res.name, r.end_reason, r.min_clearance),
            _ => {}
        }
        if let (true, Some(o)) = (logs, outcome) {
            if let Err(e) = write_outcome(&out.join("logs"), &res.name, o) {
                eprintln!("{}: could not write log: {e}", res.name);
            }
        }
    });
    let rows: Vec<_> = results.iter().filter_map(|r| r.row.clone()).collect();
    write_metrics_csv(File::create(out.join("metrics.csv"))?, &rows)?;
    write_aggregate_csv(File::create(out.join("aggregate.csv"))?, &aggregate(&results))?;
    let failed = results.iter().filter(|r| r.error.is_some()).count();
    println!("{} trials, {} failed; tables in {}", results.len(), failed, out.display());
    Ok(())
}

fn replay(path: &Path, metrics: bool) -> Result<(), Error> {
    let log = RunLog::read_jsonl(BufReader::new(File::open(path)?))?;
    if !log.timestamps_monotone() {
        return Err(Error::Format("timestamps decrease within a channel".into()));
    }
    let (cfg, seed) = log.meta()?;
    let (t, reason) = log.end().ok_or_else(|| Error::Format("run log has no end record".into()))?;
    println!("{} (seed {seed}): {} records, ended {reason:?} at {t:.2} s", cfg.name, log.records.len());
    if metrics {
        let row = compute_metrics(&log)?;
        write_metrics_csv(std::io::stdout().lock(), &[row])?;
    }
    Ok(())
}

fn exit_for(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::Config(_) => ExitCode::from(EXIT_CONFIG),
        _ => ExitCode::from(EXIT_INCOMPLETE),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { scenario, seed, out, export_map } => match run(&scenario, seed, &out, export_map) {
            Ok(EndReason::Completed) => ExitCode::SUCCESS,
            Ok(EndReason::Collision) => ExitCode::from(EXIT_COLLISION),
            Ok(_) => ExitCode::from(EXIT_INCOMPLETE),
            Err(e) => exit_for(&e),
        },
        Command::Batch { template, seeds, grid, out, logs } => match batch(&template, &seeds, grid.as_deref(), &out, logs) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => exit_for(&e),
        },
        Command::Replay { runlog, metrics } => match replay(&runlog, metrics) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => exit_for(&e),
        },
    }
}
