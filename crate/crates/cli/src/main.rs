//! `emob`: run the scheduling models, compare them on the four issues and
//! chart the results.
//!
//! Exit codes: 0 success, 1 invalid input, 2 no feasible schedule.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use emob_core::chart::{self, ChartView};
use emob_core::experiments::{self, ExperimentConfig, ModelKind, ISSUES};
use emob_core::report::{self, OutputSet, RunManifest};
use emob_core::{BoundaryPolicy, Error, Scenario};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "emob",
    version,
    about = "EV-based versus station-based smart charging"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Schedule, deliver and settle one configuration.
    Run(RunArgs),
    /// Compare configurations on the station-based issues.
    Compare(CompareArgs),
    /// Render an SVG chart of a run directory.
    Chart(ChartArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum OnOff {
    On,
    Off,
}

#[derive(Args, Serialize)]
struct RunArgs {
    /// Scenario JSON file, or `builtin`.
    #[arg(long, default_value = "builtin")]
    scenario: String,
    #[arg(long, default_value = "evba")]
    model: ModelKind,
    #[arg(long, default_value = "naive")]
    boundary: BoundaryPolicy,
    /// Whether stations plan with the vehicles' on-board charger limits.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    obc_known: bool,
    /// Apply the scenario's forecast error model.
    #[arg(long, value_enum, default_value = "off")]
    noise: OnOff,
    /// Defaults to the scenario's `rng_seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct CompareArgs {
    #[arg(long, default_value = "builtin")]
    scenario: String,
    /// Comma-separated issue ids.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    issues: Vec<u8>,
    /// Seeds for the forecast-error runs.
    #[arg(long, default_value_t = experiments::DEFAULT_NUM_SEEDS)]
    seeds: usize,
    /// First seed; defaults to the scenario's `rng_seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ChartArgs {
    /// Run directory holding `schedule.csv` and `manifest.json`.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "aggregate")]
    view: ChartView,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: if e.is_infeasible() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

fn load(spec: &str) -> Result<Scenario, Failure> {
    if spec == "builtin" {
        Ok(emob_core::builtin_illustrative())
    } else {
        emob_core::load_scenario(spec).map_err(|e| Error::from(e).into())
    }
}

fn command_line() -> Vec<String> {
    std::env::args().collect()
}

fn write(outputs: &OutputSet, dir: &Path) -> Result<(), Failure> {
    outputs.write(dir).map_err(|e| Error::from(e).into())
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let scenario = load(&args.scenario)?;
    let seed = args.seed.unwrap_or(scenario.rng_seed);
    let config = ExperimentConfig {
        model: args.model,
        boundary_policy: args.boundary,
        obc_known: args.obc_known,
        forecast_error: matches!(args.noise, OnOff::On),
        num_seeds: 1,
        base_seed: seed,
        ..ExperimentConfig::default()
    };
    let sim = experiments::simulate(&scenario, &config, seed).map_err(Error::from)?;
    let manifest = RunManifest::new(command_line(), &scenario, &config, seed);
    write(&report::run_outputs(&sim, &manifest), &args.out)?;
    let c = &sim.metrics.costs;
    eprintln!(
        "{}: system cost {:.4}, ev-perspective cost {:.4}, imbalance {:.4} kWh",
        args.model, c.total_system_cost, c.total_ev_perspective_cost, sim.metrics.imbalance_kwh
    );
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> Result<(), Failure> {
    if let Some(k) = args.issues.iter().find(|k| !ISSUES.contains(k)) {
        return Err(Failure::input(format!("unknown issue id {k}")));
    }
    if args.seeds == 0 {
        return Err(Failure::input("--seeds must be at least 1"));
    }
    let scenario = load(&args.scenario)?;
    let base_seed = args.seed.unwrap_or(scenario.rng_seed);
    let mut reports = Vec::new();
    for &k in &args.issues {
        let rep =
            experiments::issue_report(k, &scenario, args.seeds, base_seed).map_err(Error::from)?;
        reports.push((k, rep));
    }
    let mut outputs = OutputSet::default();
    for (k, rep) in &reports {
        outputs.add(report::issue_file(*k), report::issue_csv(*k, rep));
    }
    outputs.add(report::COMPARISON_FILE, report::comparison_csv(&reports));
    let manifest = RunManifest::new(command_line(), &scenario, args, base_seed);
    outputs.add(report::MANIFEST_FILE, manifest.to_json());
    write(&outputs, &args.out)
}

fn cmd_chart(args: &ChartArgs) -> Result<(), Failure> {
    let schedule = args.input.join(report::SCHEDULE_FILE);
    if !schedule.is_file() {
        return Err(Failure::input(format!(
            "{}: no such file",
            schedule.display()
        )));
    }
    let manifest = RunManifest::load(&args.input).map_err(Error::from)?;
    let rows = report::read_schedule(&schedule).map_err(Error::from)?;
    let svg = chart::render(args.view, &manifest.scenario, &rows);
    let mut outputs = OutputSet::default();
    outputs.add(args.view.file_name(), svg);
    write(&outputs, &args.input)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Chart(a) => cmd_chart(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            log::debug!("exit code {}", f.code);
            ExitCode::from(f.code)
        }
    }
}
