use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

mod config;
mod report;
mod scenarios;

use config::Scenario;
use report::{Manifest, Summary, FORMAT_VERSION};
use scenarios::Outcome;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("report error: {0}")]
    Report(String),
    #[error("numerical failure: {0}")]
    Numerical(#[from] backstep_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Report(_) => 2,
            _ => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "backstep", version, about = "Backstepping stabilization scenarios on a growing film")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the environment and the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Halve h and dt this many times.
    #[arg(long, default_value_t = 0)]
    refine: u32,
}

#[derive(Subcommand)]
enum Command {
    /// Forward and inverse kernels with their checks.
    Kernel(RunArgs),
    /// Damped target problem and its energy ledger.
    SimulateTarget(RunArgs),
    /// Exponential stabilization with a fixed gain.
    SimulateClosedLoop(RunArgs),
    /// Switched gains along a finite-time schedule.
    SimulateFiniteTime(RunArgs),
    /// Nonlinear open-loop run under the target fluxes.
    SimulateNonlinear(RunArgs),
    /// Certificates of a switching schedule.
    ScheduleCheck(RunArgs),
    /// Aggregate manifests into one table.
    Report {
        manifests: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Manifest whose error metrics serve as the baseline.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
}

type Runner = fn(&Scenario, u32) -> Result<Outcome, CliError>;

fn run_scenario(kind: &str, runner: Runner, args: &RunArgs) -> Result<bool, CliError> {
    let scenario = Scenario::load(&args.config)?;
    let out_dir = scenario.out_dir(args.out.as_deref());
    let start = Instant::now();
    let outcome = runner(&scenario, args.refine)?;
    let wall = start.elapsed().as_secs_f64();
    std::fs::create_dir_all(&out_dir)?;
    let mut outputs = Vec::new();
    for t in &outcome.tables {
        let cols: Vec<&[f64]> = t.columns.iter().map(|c| c.as_slice()).collect();
        let header: Vec<&str> = t.header.iter().map(|s| s.as_str()).collect();
        backstep_core::io::write_columns(&out_dir.join(&t.file), &header, &cols)?;
        outputs.push(t.file.clone());
    }
    for (name, doc) in &outcome.documents {
        backstep_core::io::write_json(&out_dir.join(name), doc)?;
        outputs.push(name.clone());
    }
    let summary = Summary {
        format_version: FORMAT_VERSION,
        kind: kind.into(),
        refine: args.refine,
        grid: outcome.grid,
        metrics: outcome.metrics,
        errors: outcome.errors,
        checks: outcome.checks,
    };
    backstep_core::io::write_json(&out_dir.join("summary.json"), &summary)?;
    outputs.push("summary.json".into());
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        kind: kind.into(),
        refine: args.refine,
        seed: scenario.seed,
        config: serde_json::to_value(&scenario)?,
        wall_time_s: wall,
        outputs,
        summary: summary.clone(),
    };
    backstep_core::io::write_json(&out_dir.join("manifest.json"), &manifest)?;
    print_summary(&summary, &out_dir);
    Ok(summary.checks.iter().all(|c| c.passed))
}

fn print_summary(s: &Summary, dir: &Path) {
    println!("{} (refine {}) -> {}", s.kind, s.refine, dir.display());
    for (k, v) in &s.metrics {
        println!("  {k} = {v:.6e}");
    }
    for (k, v) in &s.errors {
        println!("  error {k} = {v:.6e}");
    }
    for c in &s.checks {
        let tag = if c.passed { "ok  " } else { "FAIL" };
        println!("  {tag} {}: {:.4e} (limit {:.4e})", c.name, c.value, c.limit);
        if let Some(d) = &c.detail {
            println!("       {d}");
        }
    }
}

fn run_report(manifests: &[PathBuf], out: Option<&Path>, baseline: Option<&Path>) -> Result<bool, CliError> {
    let r = report::build(manifests, baseline)?;
    print!("{}", r.text);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let mut csv = r.header.join(",");
        csv.push('\n');
        for row in &r.rows {
            csv.push_str(&row.join(","));
            csv.push('\n');
        }
        std::fs::write(dir.join("report.csv"), csv)?;
        std::fs::write(dir.join("report.txt"), &r.text)?;
    }
    Ok(r.regressions.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Kernel(a) => run_scenario("kernel", scenarios::kernel, a),
        Command::SimulateTarget(a) => run_scenario("target", scenarios::target, a),
        Command::SimulateClosedLoop(a) => run_scenario("closed-loop", scenarios::closed_loop, a),
        Command::SimulateFiniteTime(a) => run_scenario("finite-time", scenarios::finite_time, a),
        Command::SimulateNonlinear(a) => run_scenario("nonlinear", scenarios::nonlinear, a),
        Command::ScheduleCheck(a) => run_scenario("schedule-check", scenarios::schedule_check, a),
        Command::Report {
            manifests,
            out,
            baseline,
        } => run_report(manifests, out.as_deref(), baseline.as_deref()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
