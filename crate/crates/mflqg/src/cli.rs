//! Command line: `mflqg <solve|simulate|verify|al-example> [options]`.
//!
//! Exit codes: 0 success, 1 invalid scenario or gate violation, 2 numerical
//! failure (Riccati blow-up, non-finite state), 3 verification failure,
//! 64 usage error, 74 output error.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, ValueEnum};
use mflqg_core::cost::analytic_cost;
use mflqg_core::simulate::{ClosedLoopPlan, FilterMode};
use mflqg_core::validate::{special_case_gate, validate};
use mflqg_core::{synthesize, Error, MFLQProblem, Synthesis};
use serde::Serialize;

use crate::ensemble::{innovation_diagnostics, run_ensemble, workers, EnsembleConfig, InnovationComponent, NoProbe};
use crate::errata;
use crate::output::{self, Cell, Format, OutputDir, OutputError};
use crate::scenario::{Scenario, ScenarioError};
use crate::verify::{self, ComparisonRow, CostReport, FilterRow, Suite, VerifyOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_IO: i32 = 74;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Validate, synthesize, write the Riccati bundle, law and cost.
    Solve,
    /// Solve, then simulate the closed loop.
    Simulate,
    /// Solve, then run the verification suite.
    Verify,
    /// The embedded asset-liability example through every stage.
    AlExample,
}

#[derive(Debug, Parser)]
#[command(name = "mflqg", version, about = "Optimal feedback for partially observed mean-field LQ control")]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Scenario file (TOML). Not used by al-example.
    #[arg(long, value_name = "FILE")]
    scenario: Option<PathBuf>,
    /// Override the time step; must divide the horizon.
    #[arg(long, value_name = "REAL")]
    dt: Option<f64>,
    /// Monte Carlo paths (default from the scenario, else 20000).
    #[arg(long, value_name = "INT")]
    paths: Option<usize>,
    /// Seed of the noise streams (default from the scenario, else 42).
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR", default_value = "results")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Paths written to the paths table (default from the scenario, else 100).
    #[arg(long, value_name = "INT")]
    record: Option<usize>,
    /// Gzip the paths table.
    #[arg(long)]
    gzip: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub scenario_path: Option<PathBuf>,
    pub dt_override: Option<f64>,
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub format: Format,
    pub record: Option<usize>,
    pub gzip: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum UsageError {
    #[error("{0}")]
    Clap(#[from] clap::Error),
    #[error("{0}")]
    Invalid(String),
}

/// Parses the full argument list including the program name.
pub fn parse_args<I, T>(argv: I) -> Result<RunConfig, UsageError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let a = Args::try_parse_from(argv)?;
    if a.command != Command::AlExample && a.scenario.is_none() {
        return Err(UsageError::Invalid(format!(
            "`{}` needs --scenario FILE",
            a.command.to_possible_value().expect("named").get_name()
        )));
    }
    if let Some(dt) = a.dt {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(UsageError::Invalid(format!("--dt must be a positive number, got {dt}")));
        }
    }
    if a.paths == Some(0) {
        return Err(UsageError::Invalid("--paths must be at least 1".into()));
    }
    Ok(RunConfig {
        command: a.command,
        scenario_path: a.scenario,
        dt_override: a.dt,
        paths: a.paths,
        seed: a.seed,
        out_dir: a.out,
        format: a.format,
        record: a.record,
        gzip: a.gzip,
    })
}

#[derive(Debug, thiserror::Error)]
enum Failure {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Model(#[from] Error),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl Failure {
    fn code(&self) -> i32 {
        let numerical = |e: &Error| matches!(e, Error::BlowUp { .. } | Error::NonFiniteState { .. } | Error::Eigen { .. });
        match self {
            Failure::Model(e) | Failure::Scenario(ScenarioError::Model(e)) if numerical(e) => EXIT_NUMERICAL,
            Failure::Scenario(ScenarioError::Io { .. }) => EXIT_IO,
            Failure::Scenario(_) | Failure::Model(_) => EXIT_INVALID,
            Failure::Output(_) => EXIT_IO,
            Failure::Verification(_) => EXIT_VERIFY,
        }
    }
}

/// Runs the command; diagnostics go to stderr, progress to stdout.
pub fn execute(config: &RunConfig) -> i32 {
    match run(config) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("mflqg: {f}");
            f.code()
        }
    }
}

/// Parses `argv` and executes it.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match parse_args(argv) {
        Ok(c) => execute(&c),
        Err(UsageError::Clap(e)) if e.kind() == clap::error::ErrorKind::DisplayHelp || e.kind() == clap::error::ErrorKind::DisplayVersion => {
            let _ = e.print();
            EXIT_OK
        }
        Err(UsageError::Clap(e)) => {
            let _ = e.print();
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("mflqg: {e}");
            EXIT_USAGE
        }
    }
}

fn load(config: &RunConfig) -> Result<Scenario, Failure> {
    let mut s = match (&config.command, &config.scenario_path) {
        (Command::AlExample, _) => Scenario::asset_liability(),
        (_, Some(path)) => Scenario::load(path)?,
        (_, None) => return Err(ScenarioError::Invalid("no scenario given".into()).into()),
    };
    if let Some(dt) = config.dt_override {
        s = s.with_dt(dt)?;
    }
    if let Some(p) = config.paths {
        s.sim.paths = p;
    }
    if let Some(seed) = config.seed {
        s.sim.seed = seed;
    }
    if let Some(r) = config.record {
        s.sim.record = r;
    }
    Ok(s)
}

fn check_problem(p: &MFLQProblem) -> Result<(), Failure> {
    let report = validate(p)?;
    for m in &report.messages {
        eprintln!("note: {m}");
    }
    special_case_gate(p).into_result()?;
    Ok(())
}

#[derive(Serialize)]
struct Summary {
    paths: usize,
    seed: u64,
    dt: f64,
    steps: usize,
    j_mc: f64,
    stderr: f64,
    j_analytic: f64,
    kappa: f64,
    filter: Vec<FilterRow>,
    innovation: Vec<InnovationComponent>,
    tower_z: f64,
}

fn solve_stage(s: &Scenario, out: &mut OutputDir, is_al: bool) -> Result<Synthesis, Failure> {
    let p = &s.problem;
    check_problem(p)?;
    let t0 = Instant::now();
    let syn = synthesize(p)?;
    for w in &syn.bundle.warnings {
        eprintln!("warning: {w}");
    }
    let cost = analytic_cost(p, &syn.reduced, &syn.bundle, s.sim.kappa, s.sim.quadrature);
    output::write_riccati(out, &syn.bundle)?;
    output::write_law(out, &p.grid, &syn.law)?;
    output::write_cost(out, &cost)?;
    if is_al {
        out.write_file("errata.md", errata::render(&errata::entries(p, &syn, None)).as_bytes())?;
    }
    println!("solve: {} steps, J_analytic = {:.12e} ({:.2?})", p.grid.steps(), cost.total, t0.elapsed());
    Ok(syn)
}

fn simulate_stage(s: &Scenario, syn: &Synthesis, out: &mut OutputDir, gzip: bool) -> Result<(), Failure> {
    let p = &s.problem;
    let t0 = Instant::now();
    let plan = ClosedLoopPlan::new(p, &syn.reduced, &syn.bundle.sigma, &syn.law)?;
    let cfg = EnsembleConfig { paths: s.sim.paths, seed: s.sim.seed, mode: FilterMode::Observation, record: s.sim.record };
    let e = run_ensemble(&plan, &cfg, &NoProbe)?;
    let (j_mc, stderr) = e.cost(syn.reduced.j0);
    let j_analytic = analytic_cost(p, &syn.reduced, &syn.bundle, s.sim.kappa, s.sim.quadrature).total;
    let filter = verify::filter_report_from(p, syn, &e)?;
    let summary = Summary {
        paths: e.paths,
        seed: e.seed,
        dt: p.grid.step(),
        steps: p.grid.steps(),
        j_mc,
        stderr,
        j_analytic,
        kappa: s.sim.kappa.value(),
        filter: filter.rows.clone(),
        innovation: innovation_diagnostics(&e)?,
        tower_z: filter.tower_z,
    };
    out.write_json("summary.json", &summary)?;
    output::write_paths(out, &p.grid, &e.recorded, gzip)?;
    println!(
        "simulate: {} paths on {} worker(s), J_mc = {:.12e} ± {:.3e} ({:.2?})",
        e.paths,
        workers(),
        j_mc,
        stderr,
        t0.elapsed()
    );
    Ok(())
}

fn verify_stage(s: &Scenario, out: &mut OutputDir, is_al: bool) -> Result<verify::VerifyReport, Failure> {
    let opts = VerifyOptions { paths: s.sim.paths, seed: s.sim.seed, ..VerifyOptions::default() };
    let t0 = Instant::now();
    let report = verify::run_suite(&s.problem, is_al, &opts, Suite::Full, |c| {
        println!("{} {}: {}", c.status(), c.name, c.detail);
    })?;
    out.write_json("verify_report.json", &report)?;
    println!(
        "verify: {}/{} checks passed ({:.2?})",
        report.checks.iter().filter(|c| c.passed).count(),
        report.checks.len(),
        t0.elapsed()
    );
    Ok(report)
}

fn write_comparison(out: &mut OutputDir, rows: &[ComparisonRow]) -> Result<(), Failure> {
    let names = ["t", "Ex", "Ex_ref", "Ep", "Ep_ref", "Gamma", "Gamma_ref", "Sigma", "Sigma_ref", "u0", "u0_ref"];
    let columns: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    let cells = rows.iter().map(|r| {
        [r.t, r.ex, r.ex_ref, r.ep, r.ep_ref, r.gamma, r.gamma_ref, r.sigma, r.sigma_ref, r.offset, r.offset_ref]
            .into_iter()
            .map(Cell::Num)
            .collect()
    });
    out.write_table("al_comparison", &columns, cells, false)?;
    println!("\n{:>5} {:>14} {:>14} {:>14} {:>14} {:>14}", "t", "Ex", "Ep", "Gamma", "Sigma", "u0");
    for r in rows {
        println!(
            "{:>5.2} {:>14.10} {:>14.10} {:>14.10} {:>14.8e} {:>14.10}",
            r.t, r.ex, r.ep, r.gamma, r.sigma, r.offset
        );
    }
    let err = |f: fn(&ComparisonRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    println!(
        "max |num − ref| on these knots: Ex {:.2e}, Ep {:.2e}, Gamma {:.2e}, Sigma {:.2e}, u0 {:.2e}\n",
        err(|r| (r.ex - r.ex_ref).abs()),
        err(|r| (r.ep - r.ep_ref).abs()),
        err(|r| (r.gamma - r.gamma_ref).abs()),
        err(|r| (r.sigma - r.sigma_ref).abs()),
        err(|r| (r.offset - r.offset_ref).abs())
    );
    Ok(())
}

fn run(config: &RunConfig) -> Result<(), Failure> {
    let s = load(config)?;
    let is_al = s.is_asset_liability();
    let mut out = OutputDir::create(&config.out_dir, config.format)?;
    let syn = solve_stage(&s, &mut out, is_al)?;
    let mut verdict = Ok(());
    match config.command {
        Command::Solve => {}
        Command::Simulate => simulate_stage(&s, &syn, &mut out, config.gzip)?,
        Command::Verify | Command::AlExample => {
            if config.command == Command::AlExample {
                simulate_stage(&s, &syn, &mut out, config.gzip)?;
            }
            let report = verify_stage(&s, &mut out, is_al)?;
            if is_al {
                let cost: Option<&CostReport> = report.cost.as_ref();
                let text = errata::render(&errata::entries(&s.problem, &syn, cost));
                out.write_file("errata.md", text.as_bytes())?;
            }
            if let Some(rows) = &report.comparison {
                write_comparison(&mut out, rows)?;
            }
            if !report.passed {
                let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
                verdict = Err(Failure::Verification(failed.join(", ")));
            }
        }
    }
    out.write_manifest()?;
    println!("wrote {}", out.path().display());
    verdict
}
