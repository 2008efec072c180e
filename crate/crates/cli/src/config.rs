//! Experiment configuration: JSON file, command-line overrides and
//! validation with field paths.

use std::path::{Path, PathBuf};

use mohardy::fixtures::{FixtureKind, FixtureParams};
use mohardy::maximal::Mollifier;
use mohardy::{Grid, GrowthFunction};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub dim: usize,
    pub points: usize,
    pub half_len: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { dim: 2, points: 64, half_len: 4.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Bisection tolerance of Luxembourg and Hardy norms.
    pub norm: f64,
    /// Largest accepted `‖df‖₂ h / ‖f‖₂` of closed inputs.
    pub closed: f64,
    /// Relative L² mass allowed outside an atom's ball.
    pub leak: f64,
    /// Dyadic range `2^{-K}..2^K` of the L^q_℘ supremum.
    pub levels: i32,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { norm: 1e-10, closed: 1e-10, leak: 1e-10, levels: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FactorizeConfig {
    pub l: usize,
    pub m: usize,
    /// Factor a top-degree input as scalar `Σ u v` pairs.
    pub scalar: bool,
}

impl Default for FactorizeConfig {
    fn default() -> Self {
        Self { l: 1, m: 1, scalar: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DivCurlConfig {
    pub pairs: usize,
    /// Pairs with the largest ratios re-rendered at twice the resolution.
    pub spot_checks: usize,
}

impl Default for DivCurlConfig {
    fn default() -> Self {
        Self { pairs: 100, spot_checks: 10 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Quick,
    #[default]
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub scale: Scale,
    /// Criteria to run; empty means all.
    pub criteria: Vec<u8>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self { scale: Scale::Full, criteria: vec![] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixtureConfig {
    pub kind: FixtureKind,
    pub params: FixtureParams,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self { kind: FixtureKind::ClosedField, params: FixtureParams::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub grid: GridConfig,
    pub growth: String,
    pub mollifier: String,
    pub tolerances: Tolerances,
    /// Input `.dff` file of `norm`, `decompose` and `factorize`.
    pub input: Option<PathBuf>,
    pub factorize: FactorizeConfig,
    pub divcurl: DivCurlConfig,
    pub suite: SuiteConfig,
    pub fixture: FixtureConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            grid: GridConfig::default(),
            growth: "theta".into(),
            mollifier: "bump".into(),
            tolerances: Tolerances::default(),
            input: None,
            factorize: FactorizeConfig::default(),
            divcurl: DivCurlConfig::default(),
            suite: SuiteConfig::default(),
            fixture: FixtureConfig::default(),
        }
    }
}

fn invalid(field: &str, message: impl Into<String>) -> CliError {
    CliError::Config { field: field.into(), message: message.into() }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            invalid(if path == "." { "<root>" } else { &path }, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid("<file>", format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Parses `n,N,L` into the grid section.
    pub fn set_grid(&mut self, spec: &str) -> Result<(), CliError> {
        let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
        let [n, points, l] = parts.as_slice() else {
            return Err(invalid("grid", format!("expected n,N,L, got '{spec}'")));
        };
        self.grid.dim = n.parse().map_err(|_| invalid("grid.dim", format!("bad integer '{n}'")))?;
        self.grid.points = points.parse().map_err(|_| invalid("grid.points", format!("bad integer '{points}'")))?;
        self.grid.half_len = l.parse().map_err(|_| invalid("grid.half_len", format!("bad number '{l}'")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.build_grid()?;
        self.build_growth()?;
        self.build_mollifier()?;
        let t = &self.tolerances;
        for (name, v) in [("norm", t.norm), ("closed", t.closed), ("leak", t.leak)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(&format!("tolerances.{name}"), format!("must be positive, got {v}")));
            }
        }
        if !(1..=60).contains(&t.levels) {
            return Err(invalid("tolerances.levels", format!("must lie in 1..=60, got {}", t.levels)));
        }
        let f = &self.factorize;
        if f.l == 0 || f.m == 0 || f.l + f.m > self.grid.dim {
            return Err(invalid("factorize", format!("need ℓ, m ≥ 1 and ℓ + m ≤ n, got ℓ={} m={}", f.l, f.m)));
        }
        if self.divcurl.pairs == 0 {
            return Err(invalid("divcurl.pairs", "must be at least 1"));
        }
        if self.divcurl.spot_checks > self.divcurl.pairs {
            return Err(invalid("divcurl.spot_checks", "cannot exceed divcurl.pairs"));
        }
        if let Some(&c) = self.suite.criteria.iter().find(|c| !(1..=9).contains(*c)) {
            return Err(invalid("suite.criteria", format!("unknown criterion {c}")));
        }
        let p = &self.fixture.params;
        if p.degree == 0 || p.degree > self.grid.dim || p.count == 0 {
            return Err(invalid("fixture.params", format!("bad degree {} or count {}", p.degree, p.count)));
        }
        Ok(())
    }

    pub fn build_grid(&self) -> Result<Grid, CliError> {
        let g = &self.grid;
        if !(2..=3).contains(&g.dim) {
            return Err(invalid("grid.dim", format!("must be 2 or 3, got {}", g.dim)));
        }
        if g.points < 4 || g.points % 2 != 0 {
            return Err(invalid("grid.points", format!("must be even and at least 4, got {}", g.points)));
        }
        if !(g.half_len > 0.0 && g.half_len.is_finite()) {
            return Err(invalid("grid.half_len", format!("must be positive, got {}", g.half_len)));
        }
        Grid::new(g.dim, g.points, g.half_len).map_err(|e| invalid("grid", e.to_string()))
    }

    pub fn build_growth(&self) -> Result<GrowthFunction, CliError> {
        GrowthFunction::parse(&self.growth).map_err(|e| invalid("growth", e.to_string()))
    }

    pub fn build_mollifier(&self) -> Result<Mollifier, CliError> {
        Mollifier::parse(&self.mollifier).map_err(|e| invalid("mollifier", e.to_string()))
    }
}
