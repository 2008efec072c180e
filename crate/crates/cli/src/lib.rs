//! Command-line front end: configuration, acceptance suite and reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod suite;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use mohardy::fixtures::{FixtureKind, FixtureParams};
use serde_json::json;

use crate::commands::Outcome;
use crate::config::{ExperimentConfig, Scale};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "mohardy", version, about = "Hardy-space experiments on closed forms")]
pub struct Cli {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for report.json, timings.json and artifacts.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Grid as `n,N,L`.
    #[arg(long, global = true)]
    pub grid: Option<String>,
    /// `theta`, `power:p` or `power_weight:p:alpha`.
    #[arg(long, global = true)]
    pub growth: Option<String>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Luxembourg, Hardy and BMO norms of a field.
    Norm { input: Option<PathBuf> },
    /// Closed atomic decomposition of a field.
    Decompose { input: Option<PathBuf> },
    /// Weak factorization of a closed field into closed pairs.
    Factorize {
        input: Option<PathBuf>,
        #[arg(long)]
        l: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        /// Factor a top-degree field into scalar products.
        #[arg(long)]
        scalar: bool,
    },
    /// Div-curl ratio sweep over random closed pairs.
    Divcurl {
        #[arg(long)]
        pairs: Option<usize>,
        #[arg(long)]
        spot_checks: Option<usize>,
    },
    /// Acceptance criteria.
    Suite {
        /// Reduced sample counts.
        #[arg(long)]
        quick: bool,
        /// Comma-separated criterion numbers.
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<u8>,
    },
    /// Writes a reproducible fixture.
    GenerateFixture {
        /// atom, closed_field, bmo_field, tent_atom or simple_function.
        #[arg(long)]
        kind: Option<String>,
        /// JSON object with degree, count and case.
        #[arg(long)]
        params: Option<String>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Norm { .. } => "norm",
            Command::Decompose { .. } => "decompose",
            Command::Factorize { .. } => "factorize",
            Command::Divcurl { .. } => "divcurl",
            Command::Suite { .. } => "suite",
            Command::GenerateFixture { .. } => "generate_fixture",
        }
    }
}

fn config_error(field: &str, message: impl Into<String>) -> CliError {
    CliError::Config { field: field.into(), message: message.into() }
}

/// Loads the configuration file and applies command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(grid) = &cli.grid {
        cfg.set_grid(grid)?;
    }
    if let Some(growth) = &cli.growth {
        cfg.growth = growth.clone();
    }
    match &cli.command {
        Command::Norm { input } | Command::Decompose { input } => {
            if input.is_some() {
                cfg.input = input.clone();
            }
        }
        Command::Factorize { input, l, m, scalar } => {
            if input.is_some() {
                cfg.input = input.clone();
            }
            cfg.factorize.l = l.unwrap_or(cfg.factorize.l);
            cfg.factorize.m = m.unwrap_or(cfg.factorize.m);
            cfg.factorize.scalar |= scalar;
        }
        Command::Divcurl { pairs, spot_checks } => {
            cfg.divcurl.pairs = pairs.unwrap_or(cfg.divcurl.pairs);
            cfg.divcurl.spot_checks = spot_checks.unwrap_or(cfg.divcurl.spot_checks);
        }
        Command::Suite { quick, criteria } => {
            if *quick {
                cfg.suite.scale = Scale::Quick;
            }
            if !criteria.is_empty() {
                cfg.suite.criteria = criteria.clone();
            }
        }
        Command::GenerateFixture { .. } => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fixture_overrides(
    kind: &Option<String>,
    params: &Option<String>,
) -> Result<(Option<FixtureKind>, Option<FixtureParams>), CliError> {
    let kind = kind
        .as_ref()
        .map(|k| serde_json::from_value(json!(k)).map_err(|e| config_error("kind", e.to_string())))
        .transpose()?;
    let params = params
        .as_ref()
        .map(|p| serde_json::from_str(p).map_err(|e| config_error("params", e.to_string())))
        .transpose()?;
    Ok((kind, params))
}

fn execute(cli: &Cli, cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let out = cli.out.as_path();
    match &cli.command {
        Command::Norm { .. } => commands::norm(cfg),
        Command::Decompose { .. } => commands::decompose(cfg, out),
        Command::Factorize { .. } => commands::factorize(cfg, out),
        Command::Divcurl { .. } => commands::divcurl(cfg),
        Command::Suite { .. } => commands::suite(cfg),
        Command::GenerateFixture { kind, params } => {
            let (kind, params) = fixture_overrides(kind, params)?;
            commands::generate(cfg, out, kind, params)
        }
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Runs one command and returns the process exit code: 0 on success, 1 on
/// an acceptance failure, 2 on a configuration error, 3 on a numeric error.
pub fn run(cli: Cli) -> i32 {
    match try_run(&cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn try_run(cli: &Cli) -> Result<bool, CliError> {
    let cfg = resolve_config(cli)?;
    let jobs = match cli.jobs {
        Some(0) => return Err(config_error("jobs", "must be at least 1")),
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| config_error("jobs", e.to_string()))?;
    std::fs::create_dir_all(&cli.out)?;
    let start = Instant::now();
    let outcome = pool.install(|| execute(cli, &cfg))?;
    let total = start.elapsed().as_secs_f64();

    let name = cli.command.name();
    let report = json!({
        "command": name,
        "config": cfg,
        "passed": outcome.passed,
        "result": outcome.report,
    });
    write_json(&cli.out.join("report.json"), &report)?;
    let steps: serde_json::Map<String, serde_json::Value> =
        outcome.timings.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
    write_json(
        &cli.out.join("timings.json"),
        &json!({ "command": name, "jobs": jobs, "total_seconds": total, "steps": steps }),
    )?;
    println!("{name}: {} ({})", if outcome.passed { "pass" } else { "fail" }, cli.out.join("report.json").display());
    Ok(outcome.passed)
}
