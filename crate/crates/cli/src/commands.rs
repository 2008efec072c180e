//! Subcommands. Each returns a deterministic report body plus named timings.

use std::path::Path;
use std::time::Instant;

use mohardy::atoms::{d_residual, AtomTolerances};
use mohardy::bmo::{bmo_report, dyadic_balls};
use mohardy::decompose::{closed_atomic_decompose, DecomposeOptions};
use mohardy::factorize::{scalar_weak_factorize, weak_factorize, FactorizeOptions};
use mohardy::fixtures::{generate_fixture, FixtureKind, FixtureParams};
use mohardy::forms::load_dff;
use mohardy::growth::luxembourg_norm_form;
use mohardy::maximal::{h1_norm, hardy_norm_with, hlog_norm, LevelGrid};
use mohardy::Form;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Scale};
use crate::error::CliError;
use crate::suite::{divcurl_sweep, run_suite, SuiteContext};

pub struct Outcome {
    pub report: Value,
    pub passed: bool,
    pub timings: Vec<(String, f64)>,
}

struct Clock(Instant, Vec<(String, f64)>);

impl Clock {
    fn start() -> Self {
        Clock(Instant::now(), vec![])
    }

    fn lap(&mut self, name: &str) {
        let now = Instant::now();
        self.1.push((name.into(), (now - self.0).as_secs_f64()));
        self.0 = now;
    }
}

fn input_form(cfg: &ExperimentConfig) -> Result<Form, CliError> {
    let path = cfg.input.as_ref().ok_or_else(|| CliError::Config {
        field: "input".into(),
        message: "this command needs an input .dff file".into(),
    })?;
    load_dff(path).map_err(|e| CliError::Config { field: "input".into(), message: format!("{}: {e}", path.display()) })
}

fn atom_tolerances(cfg: &ExperimentConfig) -> AtomTolerances {
    let t = &cfg.tolerances;
    AtomTolerances { leak: t.leak, closed: t.closed, levels: t.levels, ..AtomTolerances::default() }
}

fn decompose_options(cfg: &ExperimentConfig) -> DecomposeOptions {
    DecomposeOptions {
        atoms: atom_tolerances(cfg),
        input_closed_tol: cfg.tolerances.closed,
        ..DecomposeOptions::default()
    }
}

/// Luxembourg, Hardy and BMO norms of the input field.
pub fn norm(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let f = input_form(cfg)?;
    let grid = *f.grid();
    let gf = cfg.build_growth()?;
    let mollifier = cfg.build_mollifier()?;
    let tol = cfg.tolerances.norm;
    let mut clock = Clock::start();
    let levels = LevelGrid::dyadic(&grid);
    let luxembourg = luxembourg_norm_form(&gf, &f, tol)?;
    let hardy = hardy_norm_with(&gf, &f, mollifier, &levels, tol)?;
    let hlog = hlog_norm(&f, tol)?;
    let h1 = h1_norm(&f, tol)?;
    clock.lap("hardy");
    let balls = dyadic_balls(&grid);
    let bmo = bmo_report(&f, &gf, 2.0, &balls)?;
    clock.lap("bmo");
    let report = json!({
        "grid": grid,
        "degree": f.degree(),
        "growth": gf.name(),
        "luxembourg": luxembourg,
        "hardy": hardy,
        "hardy_log": hlog,
        "h1": h1,
        "bmo": bmo,
        "d_residual": d_residual(&f)?,
    });
    Ok(Outcome { report, passed: true, timings: clock.1 })
}

/// Closed atomic decomposition of the input, saved under `out/decomposition`.
pub fn decompose(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let f = input_form(cfg)?;
    let gf = cfg.build_growth()?;
    let mut clock = Clock::start();
    let dec = closed_atomic_decompose(&f, &gf, &decompose_options(cfg))?;
    clock.lap("decompose");
    dec.save(&out.join("decomposition"))?;
    let passed = dec.reconstruction_error <= crate::suite::DECOMPOSITION_TOL
        && dec.atoms.iter().all(|a| a.validation.as_ref().is_none_or(|v| v.passed));
    let report = json!({
        "grid": f.grid(),
        "degree": f.degree(),
        "growth": gf.name(),
        "atoms": dec.atoms.len(),
        "nq": dec.nq_value,
        "reconstruction_error": dec.reconstruction_error,
        "diagnostics": dec.diagnostics,
    });
    Ok(Outcome { report, passed, timings: clock.1 })
}

/// Weak factorization of the input, saved under `out/factorization`.
pub fn factorize(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let f = input_form(cfg)?;
    let grid = *f.grid();
    let (l, m) = (cfg.factorize.l, cfg.factorize.m);
    let opts = FactorizeOptions {
        atoms: atom_tolerances(cfg),
        decompose: decompose_options(cfg),
        norm_tol: cfg.tolerances.norm.max(1e-8),
        ..FactorizeOptions::default()
    };
    let mut clock = Clock::start();
    let dir = out.join("factorization");
    let mut report = json!({ "grid": grid, "degree": f.degree(), "l": l, "m": m });
    let certificate = if cfg.factorize.scalar {
        if f.degree() != grid.dim() || l + m != grid.dim() {
            return Err(CliError::Config {
                field: "factorize.scalar".into(),
                message: "scalar factorization needs a top-degree input and ℓ + m = n".into(),
            });
        }
        let sf = scalar_weak_factorize(&grid, &f.components()[0], &opts)?;
        sf.factorization.save(&dir)?;
        let worst =
            |key: fn(&mohardy::factorize::VectorPair) -> f64| sf.vector_pairs.iter().map(key).fold(0.0, f64::max);
        report["scalar"] = json!({
            "pairs": sf.scalar_pairs.len(),
            "reconstruction_error": sf.reconstruction_error,
            "max_divergence_residual": worst(|p| p.divergence_residual),
            "max_curl_residual": worst(|p| p.curl_residual),
        });
        sf.factorization.certificate
    } else {
        let wf = weak_factorize(&f, l, m, &opts)?;
        wf.save(&dir)?;
        wf.certificate
    };
    clock.lap("factorize");
    let passed = certificate.reconstruction_error <= crate::suite::WEAK_FACTOR_TOL
        && certificate.max_closed_residual <= crate::suite::CLOSED_TOL;
    report["certificate"] = serde_json::to_value(&certificate)?;
    Ok(Outcome { report, passed, timings: clock.1 })
}

/// Div-curl ratio sweep over random closed pairs.
pub fn divcurl(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let ctx = SuiteContext { grid: cfg.build_grid()?, seed: cfg.seed, scale: cfg.suite.scale };
    let mut clock = Clock::start();
    let rep = divcurl_sweep(&ctx, cfg.divcurl.pairs, cfg.divcurl.spot_checks)?;
    clock.lap("divcurl");
    let passed = rep.passed;
    Ok(Outcome { report: serde_json::to_value(rep)?, passed, timings: clock.1 })
}

/// Acceptance criteria; runtimes go to the timings file only.
pub fn suite(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let ctx = SuiteContext { grid: cfg.build_grid()?, seed: cfg.seed, scale: cfg.suite.scale };
    let outcome = run_suite(&ctx, &cfg.suite.criteria)?;
    let report = json!({ "passed": outcome.passed(), "criteria": outcome.criteria });
    let passed = outcome.passed() && (cfg.suite.scale == Scale::Quick || outcome.within_budget());
    let mut timings = Vec::new();
    for t in &outcome.timings {
        timings.push((format!("criterion_{}", t.id), t.seconds));
        timings.push((format!("criterion_{}_budget", t.id), t.budget));
    }
    Ok(Outcome { report, passed, timings })
}

/// Writes a fixture and its manifest under `out/fixture`.
pub fn generate(
    cfg: &ExperimentConfig,
    out: &Path,
    kind: Option<FixtureKind>,
    params: Option<FixtureParams>,
) -> Result<Outcome, CliError> {
    let grid = cfg.build_grid()?;
    let kind = kind.unwrap_or(cfg.fixture.kind);
    let params = params.unwrap_or_else(|| cfg.fixture.params.clone());
    let mut clock = Clock::start();
    let manifest = generate_fixture(&grid, kind, &params, cfg.seed, &out.join("fixture"))?;
    clock.lap("generate");
    Ok(Outcome { report: serde_json::to_value(manifest)?, passed: true, timings: clock.1 })
}
