//! `enckf`: describe the benchmark scenarios, run Monte Carlo campaigns of
//! the EnKF and EnCKF, and compare their results.
//!
//! Exit codes: 0 success, 1 runtime or campaign failure, 2 usage or
//! configuration error.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use enckf::filters::FilterMode;
use enckf::harness::run_campaign_with_workers;
use enckf::scenarios::{
    ParamOverrides, Scenario, ScenarioKind, ScenarioSpec, SPACECRAFT_A, SPACECRAFT_B, SPACECRAFT_G,
    SPACECRAFT_H,
};
use serde_json::json;

mod config;
mod output;

use config::{CliConfig, FileConfig};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            CliError::Runtime(_) => ExitCode::from(1),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Runtime(msg) => f.write_str(msg),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "enckf",
    version,
    about = "Ensemble consider Kalman filter Monte Carlo harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the constants and default campaign of a scenario as JSON
    Describe {
        /// spacecraft or ungm
        #[arg(value_parser = parse_scenario)]
        scenario: ScenarioKind,
        /// Parameter override, e.g. `--set qb=0` (repeatable)
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run a Monte Carlo campaign and write CSV/JSON results
    Run(RunArgs),
    /// Summarize a results directory written by `run`
    Compare { dir: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Args)]
struct RunArgs {
    /// spacecraft or ungm
    #[arg(long, value_parser = parse_scenario)]
    scenario: Option<ScenarioKind>,
    /// Monte Carlo runs
    #[arg(long)]
    runs: Option<usize>,
    /// Epochs per run
    #[arg(long)]
    steps: Option<usize>,
    /// Ensemble sizes, comma separated
    #[arg(long, value_delimiter = ',')]
    ensemble: Option<Vec<usize>>,
    /// Master seed
    #[arg(long, env = "ENCKF_SEED")]
    seed: Option<u64>,
    /// Filter modes, comma separated (enkf, enckf)
    #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
    modes: Option<Vec<FilterMode>>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: available parallelism)
    #[arg(long)]
    workers: Option<usize>,
    /// TOML or JSON file with defaults for any of these options
    #[arg(long)]
    config: Option<PathBuf>,
    /// Recenter resampled ensembles on the posterior mean
    #[arg(long, value_enum)]
    recenter: Option<OnOff>,
    /// Scenario parameter override, e.g. `--set qb=0` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn parse_scenario(s: &str) -> Result<ScenarioKind, String> {
    s.parse().map_err(|e: enckf::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<FilterMode, String> {
    s.parse().map_err(|e: enckf::Error| e.to_string())
}

fn parse_overrides(pairs: &[String]) -> Result<ParamOverrides, CliError> {
    let mut overrides = ParamOverrides::default();
    for pair in pairs {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{pair}`")))?;
        overrides
            .set(key, value)
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(overrides)
}

fn describe(kind: ScenarioKind, set: &[String]) -> Result<(), CliError> {
    let overrides = parse_overrides(set)?;
    let scenario = Scenario::with_overrides(kind, &overrides);
    let spec = ScenarioSpec::standard(kind);
    let mut doc = json!({
        "scenario": kind,
        "params": scenario.params,
        "campaign": {
            "steps": spec.steps,
            "runs": spec.mc_runs,
            "ensemble_sizes": spec.ensemble_sizes,
            "seed": spec.seed,
        },
    });
    if kind == ScenarioKind::Spacecraft {
        doc["matrices"] = json!({
            "A": SPACECRAFT_A,
            "B": SPACECRAFT_B,
            "G": SPACECRAFT_G,
            "H": SPACECRAFT_H,
        });
    }
    let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Runtime(e.to_string()))?;
    emit(&(text + "\n"))
}

fn run(args: RunArgs) -> Result<(), CliError> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let flags = FileConfig {
        scenario: args.scenario,
        runs: args.runs,
        steps: args.steps,
        ensemble: args.ensemble,
        seed: args.seed,
        modes: args.modes,
        out: args.out,
        workers: args.workers,
        recenter: args.recenter.map(|r| matches!(r, OnOff::On)),
        overrides: parse_overrides(&args.set)?,
    };
    let cfg = CliConfig::resolve(file.merged(flags))?;
    let params = cfg.spec.scenario().params;

    let report = match run_campaign_with_workers(&cfg.spec, &cfg.modes, cfg.workers) {
        Ok(report) => report,
        Err(e) => {
            let msg = e.to_string();
            let marker = output::write_failure(&cfg, &params, &msg)?;
            return Err(CliError::Runtime(format!(
                "{msg} (partial result in {})",
                marker.display()
            )));
        }
    };
    output::write_report(&cfg, &params, &report)?;

    let mut text = format!(
        "{} runs x {} steps, seed {}, {:.2}s -> {}\n",
        cfg.spec.mc_runs,
        cfg.spec.steps,
        cfg.spec.seed,
        report.metadata.wall_clock_secs,
        cfg.out.display()
    );
    text += &format!(
        "{:>6}  {:>5}  {:>10}  {:>8}\n",
        "mode", "m", "mean_rmse", "repairs"
    );
    for s in &report.series {
        text += &format!(
            "{:>6}  {:>5}  {:>10.4}  {:>8}\n",
            s.mode.as_str(),
            s.ensemble_size,
            s.mean_rmse,
            s.diagnostics.covariance_repairs
        );
    }
    if cfg.modes.len() == 2 {
        text += &output::comparison_table(&report)?;
    }
    emit(&text)
}

fn compare(dir: &std::path::Path) -> Result<(), CliError> {
    let report = output::read_report(dir)?;
    emit(&output::comparison_table(&report)?)
}

/// Writes to stdout; a closed pipe (`enckf describe ungm | head`) is not an error.
fn emit(text: &str) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
            Err(CliError::Runtime(format!("stdout: {e}")))
        }
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Describe { scenario, set } => describe(scenario, &set),
        Command::Run(args) => run(args),
        Command::Compare { dir } => compare(&dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
