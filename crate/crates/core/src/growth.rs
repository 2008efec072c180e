//! Growth functions and the Musielak-Orlicz functionals built on them.

use std::collections::HashMap;
use std::f64::consts::E;
use std::fmt;
use std::sync::{Arc, RwLock};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::forms::Form;
use crate::grid::{ordered_sum, Ball, Grid, Point};

type CustomFn = dyn Fn(&[f64], f64) -> f64 + Send + Sync;

#[derive(Clone)]
pub enum GrowthKind {
    /// `t / (log(e+|x|) + log(e+t))`.
    Theta,
    /// `t^p`.
    Power {
        p: f64,
    },
    /// `|x|^alpha t^p`.
    PowerWeight {
        p: f64,
        alpha: f64,
    },
    Custom(Arc<CustomFn>),
}

impl fmt::Debug for GrowthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GrowthKind::Theta => write!(f, "Theta"),
            GrowthKind::Power { p } => write!(f, "Power({p})"),
            GrowthKind::PowerWeight { p, alpha } => write!(f, "PowerWeight({p}, {alpha})"),
            GrowthKind::Custom(_) => write!(f, "Custom"),
        }
    }
}

type BallKey = (String, [u64; 3], u64, u64, [u64; 3]);

/// A growth function `℘(x, t)` with its declared class parameters.
#[derive(Clone, Debug)]
pub struct GrowthFunction {
    name: String,
    kind: GrowthKind,
    lower_type: f64,
    muckenhoupt_q: f64,
    cache: Arc<RwLock<HashMap<BallKey, f64>>>,
}

impl GrowthFunction {
    fn build(name: String, kind: GrowthKind, lower_type: f64, muckenhoupt_q: f64) -> Self {
        Self { name, kind, lower_type, muckenhoupt_q, cache: Arc::default() }
    }

    pub fn theta() -> Self {
        Self::build("theta".into(), GrowthKind::Theta, 1.0, 1.0)
    }

    /// `t^p`, `0 < p <= 1`.
    pub fn power(p: f64) -> Result<Self> {
        check_exponent(p)?;
        Ok(Self::build(format!("power:{p}"), GrowthKind::Power { p }, p, 1.0))
    }

    /// `|x|^alpha t^p`; requires `alpha > -n` to be locally integrable, which
    /// is checked when evaluated on a grid.
    pub fn power_weight(p: f64, alpha: f64) -> Result<Self> {
        check_exponent(p)?;
        if !alpha.is_finite() {
            return Err(Error::Input(format!("weight exponent must be finite, got {alpha}")));
        }
        Ok(Self::build(format!("power_weight:{p}:{alpha}"), GrowthKind::PowerWeight { p, alpha }, p, f64::NAN))
    }

    /// A user-supplied growth function. `name` keys the ball-norm cache and
    /// must be unique per function.
    pub fn custom(
        name: &str,
        lower_type: f64,
        muckenhoupt_q: f64,
        f: impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        check_exponent(lower_type)?;
        if !(muckenhoupt_q >= 1.0) {
            return Err(Error::Input(format!("Muckenhoupt index must be >= 1, got {muckenhoupt_q}")));
        }
        Ok(Self::build(format!("custom:{name}"), GrowthKind::Custom(Arc::new(f)), lower_type, muckenhoupt_q))
    }

    /// Parses `theta`, `power:p` or `power_weight:p:alpha`.
    pub fn parse(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.split(':').collect();
        let num = |s: &str| {
            s.parse::<f64>().map_err(|_| Error::Input(format!("bad number '{s}' in growth function '{spec}'")))
        };
        match parts.as_slice() {
            ["theta"] => Ok(Self::theta()),
            ["power", p] => Self::power(num(p)?),
            ["power_weight", p, a] => Self::power_weight(num(p)?, num(a)?),
            _ => Err(Error::Input(format!(
                "unknown growth function '{spec}' (expected theta, power:p, power_weight:p:alpha)"
            ))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &GrowthKind {
        &self.kind
    }

    pub fn lower_type(&self) -> f64 {
        self.lower_type
    }

    pub fn upper_type(&self) -> f64 {
        1.0
    }

    /// Declared uniform Muckenhoupt index in dimension `dim`.
    pub fn muckenhoupt_q(&self, dim: usize) -> f64 {
        match self.kind {
            GrowthKind::PowerWeight { alpha, .. } => (1.0 + alpha / dim as f64).max(1.0),
            _ => self.muckenhoupt_q,
        }
    }

    /// Largest moment order forced by the class parameters,
    /// `ceil(n (q/i - 1))`, clamped at zero.
    pub fn critical_moment(&self, dim: usize) -> usize {
        let ratio = self.muckenhoupt_q(dim) / self.lower_type;
        let v = dim as f64 * (ratio - 1.0);
        (v - 1e-12).ceil().max(0.0) as usize
    }

    /// `℘(x, t)`; only the first `x.len()` coordinates are used.
    pub fn eval(&self, x: &[f64], t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("growth function level must be >= 0, got {t}")));
        }
        Ok(self.eval_unchecked(x, t))
    }

    pub fn eval_unchecked(&self, x: &[f64], t: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        match &self.kind {
            GrowthKind::Theta => t / ((E + norm(x)).ln() + (E + t).ln()),
            GrowthKind::Power { p } => t.powf(*p),
            GrowthKind::PowerWeight { p, alpha } => norm(x).powf(*alpha) * t.powf(*p),
            GrowthKind::Custom(f) => f(x, t),
        }
    }

    /// `∫ ℘(x, |f(x)|/λ) dx` by midpoint quadrature.
    pub fn modular(&self, grid: &Grid, magnitude: &[f64], lambda: f64) -> f64 {
        let vol = grid.cell_volume();
        let dim = grid.dim();
        vol * ordered_sum(magnitude.iter().enumerate().map(|(i, &v)| {
            if v == 0.0 {
                0.0
            } else {
                self.eval_unchecked(&grid.point(i)[..dim], v.abs() / lambda)
            }
        }))
    }

    fn cache_key(&self, grid: &Grid, ball: &Ball, tol: f64) -> BallKey {
        (
            self.name.clone(),
            [grid.dim() as u64, grid.points() as u64, grid.half_len().to_bits()],
            ball.radius.to_bits(),
            tol.to_bits(),
            ball.center.map(f64::to_bits),
        )
    }
}

fn check_exponent(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Input(format!("lower type must lie in (0, 1], got {p}")));
    }
    Ok(())
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Growth function together with the integrability exponent and the moment
/// order of the atoms it governs.
#[derive(Clone, Debug)]
pub struct AdmissibleTriple {
    pub growth: GrowthFunction,
    pub q: f64,
    pub moments: usize,
}

impl AdmissibleTriple {
    pub fn new(growth: GrowthFunction, q: f64, moments: usize, dim: usize) -> Result<Self> {
        let q_min = growth.muckenhoupt_q(dim);
        if !(q > q_min) || !q.is_finite() {
            return Err(Error::Input(format!("exponent q={q} must exceed the Muckenhoupt index {q_min}")));
        }
        let s_min = growth.critical_moment(dim);
        if moments < s_min {
            return Err(Error::Input(format!("moment order {moments} below the required {s_min}")));
        }
        Ok(Self { growth, q, moments })
    }
}

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_LEVEL_RANGE: i32 = 20;
pub const DEFAULT_LEAK_TOL: f64 = 1e-10;

/// Smallest `λ` with `∫℘(x, |f|/λ) ≤ 1`, to relative width `tol`.
/// `magnitude` holds `|f|` per grid cell (signs are ignored).
pub fn luxembourg_norm(gf: &GrowthFunction, grid: &Grid, magnitude: &[f64], tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::Input(format!("tolerance must be positive, got {tol}")));
    }
    if magnitude.len() != grid.len() {
        return Err(Error::GridMismatch("field length does not match grid".into()));
    }
    if magnitude.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite sample in field".into()));
    }
    let peak = magnitude.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Ok(0.0);
    }
    let within = |lambda: f64| gf.modular(grid, magnitude, lambda) <= 1.0;
    gauge(peak, within, tol)
}

/// Luxembourg norm of a form, using the pointwise Euclidean norm.
pub fn luxembourg_norm_form(gf: &GrowthFunction, f: &Form, tol: f64) -> Result<f64> {
    luxembourg_norm(gf, f.grid(), &f.pointwise_norm(), tol)
}

/// Bisection for the infimum of `{λ > 0 : within(λ)}` where `within` is
/// monotone (false below, true above). `start` seeds the doubling bracket.
pub fn gauge(start: f64, within: impl Fn(f64) -> bool, tol: f64) -> Result<f64> {
    let mut hi = start.max(f64::MIN_POSITIVE);
    let mut steps = 0;
    while !within(hi) {
        hi *= 2.0;
        steps += 1;
        if steps > 2100 || !hi.is_finite() {
            return Err(Error::Solver("gauge bracket did not close from above".into()));
        }
    }
    let mut lo = hi / 2.0;
    steps = 0;
    while within(lo) {
        hi = lo;
        lo /= 2.0;
        steps += 1;
        if steps > 2100 || lo == 0.0 {
            return Ok(0.0);
        }
    }
    while (hi - lo) > tol * hi {
        let mid = 0.5 * (lo + hi);
        if within(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `℘(B, t) = ∫_B ℘(x, t) dx`.
pub fn wp_ball_mass(gf: &GrowthFunction, grid: &Grid, ball: &Ball, t: f64) -> Result<f64> {
    ball.ensure_fits(grid)?;
    let cells = ball.cells(grid);
    ball_mass_on(gf, grid, &cells, t)
}

fn ball_mass_on(gf: &GrowthFunction, grid: &Grid, cells: &[usize], t: f64) -> Result<f64> {
    if cells.is_empty() {
        return Err(Error::Geometry("ball contains no grid cells".into()));
    }
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("level must be >= 0, got {t}")));
    }
    let dim = grid.dim();
    Ok(grid.cell_volume() * ordered_sum(cells.iter().map(|&i| gf.eval_unchecked(&grid.point(i)[..dim], t))))
}

/// `sup_t (℘(B,t)^{-1} ∫|f|^q ℘(x,t) dx)^{1/q}` over `t = 2^k`, `|k| ≤ levels`.
/// Errors when more than `leak_tol` of the L² mass of `f` lies outside `B`.
pub fn lq_wp_ball_norm(triple: &AdmissibleTriple, f: &Form, ball: &Ball, levels: i32, leak_tol: f64) -> Result<f64> {
    let grid = *f.grid();
    ball.ensure_fits(&grid)?;
    let leak = f.leak_outside(&ball.mask(&grid));
    if leak > leak_tol {
        return Err(Error::Support(format!("{leak:e} of the mass lies outside the ball")));
    }
    lq_on_cells(triple, &grid, &f.pointwise_norm(), &ball.cells(&grid), levels)
}

pub fn lq_on_cells(
    triple: &AdmissibleTriple,
    grid: &Grid,
    magnitude: &[f64],
    cells: &[usize],
    levels: i32,
) -> Result<f64> {
    let gf = &triple.growth;
    let dim = grid.dim();
    let powered: Vec<f64> = cells.iter().map(|&i| magnitude[i].abs().powf(triple.q)).collect();
    let mut best = 0.0f64;
    for k in -levels..=levels {
        let t = 2f64.powi(k);
        let weights: Vec<f64> = cells.iter().map(|&i| gf.eval_unchecked(&grid.point(i)[..dim], t)).collect();
        let mass = ordered_sum(weights.iter().copied());
        if mass <= 0.0 {
            return Err(Error::Domain(format!("growth function vanishes on the ball at t={t}")));
        }
        let num = ordered_sum(powered.iter().zip(&weights).map(|(a, w)| a * w));
        best = best.max((num / mass).powf(1.0 / triple.q));
    }
    Ok(best)
}

/// `‖χ_B‖_{L^℘}`, cached per ball.
pub fn chi_ball_norm(gf: &GrowthFunction, grid: &Grid, ball: &Ball, tol: f64) -> Result<f64> {
    ball.ensure_fits(grid)?;
    let key = gf.cache_key(grid, ball, tol);
    if let Some(v) = gf.cache.read().expect("cache lock").get(&key) {
        return Ok(*v);
    }
    let value = luxembourg_norm(gf, grid, &indicator(grid, &ball.cells(grid)), tol)?;
    if value == 0.0 {
        return Err(Error::Geometry("ball contains no grid cells".into()));
    }
    gf.cache.write().expect("cache lock").insert(key, value);
    Ok(value)
}

pub(crate) fn indicator(grid: &Grid, cells: &[usize]) -> Vec<f64> {
    let mut v = vec![0.0; grid.len()];
    for &i in cells {
        v[i] = 1.0;
    }
    v
}

#[derive(Clone, Debug, Serialize)]
pub struct MuckenhouptCertificate {
    pub sup: f64,
    pub worst_center: Vec<f64>,
    pub worst_radius: f64,
    pub worst_level: f64,
}

/// `sup (avg_B ℘) (avg_B ℘^{-1/(q-1)})^{q-1}` over balls and levels.
pub fn check_muckenhoupt(
    gf: &GrowthFunction,
    grid: &Grid,
    q: f64,
    balls: &[Ball],
    levels: &[f64],
) -> Result<MuckenhouptCertificate> {
    if !(q > 1.0) {
        return Err(Error::Input(format!("Muckenhoupt exponent must exceed 1, got {q}")));
    }
    let dim = grid.dim();
    let mut cert = MuckenhouptCertificate { sup: 0.0, worst_center: vec![], worst_radius: 0.0, worst_level: 0.0 };
    for ball in balls {
        ball.ensure_fits(grid)?;
        let cells = ball.cells(grid);
        if cells.is_empty() {
            return Err(Error::Geometry("ball contains no grid cells".into()));
        }
        let count = cells.len() as f64;
        for &t in levels {
            let w: Vec<f64> = cells.iter().map(|&i| gf.eval_unchecked(&grid.point(i)[..dim], t)).collect();
            if w.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::Domain(format!("growth function vanishes inside a ball at t={t}")));
            }
            let avg = ordered_sum(w.iter().copied()) / count;
            let dual = ordered_sum(w.iter().map(|v| v.powf(-1.0 / (q - 1.0)))) / count;
            let value = avg * dual.powf(q - 1.0);
            if value > cert.sup {
                cert = MuckenhouptCertificate {
                    sup: value,
                    worst_center: ball.center[..dim].to_vec(),
                    worst_radius: ball.radius,
                    worst_level: t,
                };
            }
        }
    }
    Ok(cert)
}

/// Sample lattice used by the type and Orlicz checks.
pub fn sample_lattice(dim: usize) -> (Vec<Point>, Vec<f64>) {
    let radii = [0.0, 0.1, 0.5, 1.0, 3.0, 10.0, 100.0];
    let mut points = Vec::new();
    for r in radii {
        let mut p = [0.0; 3];
        p[0] = r;
        points.push(p);
        if dim > 1 {
            let mut q = [0.0; 3];
            for c in q.iter_mut().take(dim) {
                *c = r / (dim as f64).sqrt();
            }
            points.push(q);
        }
    }
    let levels = (-12..=12).map(|k| 2f64.powi(k)).collect();
    (points, levels)
}

/// Measured `sup ℘(x,st) / (s^p ℘(x,t))` over `s ∈ (0,1]`.
pub fn measure_lower_type(gf: &GrowthFunction, dim: usize, p: f64) -> f64 {
    let (points, levels) = sample_lattice(dim);
    let scales: Vec<f64> = (0..=16).map(|k| 2f64.powi(-k)).collect();
    type_sup(gf, dim, &points, &levels, &scales, p)
}

/// Measured `sup ℘(x,st) / (s ℘(x,t))` over `s ≥ 1`.
pub fn measure_upper_type(gf: &GrowthFunction, dim: usize) -> f64 {
    let (points, levels) = sample_lattice(dim);
    let scales: Vec<f64> = (0..=16).map(|k| 2f64.powi(k)).collect();
    type_sup(gf, dim, &points, &levels, &scales, 1.0)
}

fn type_sup(gf: &GrowthFunction, dim: usize, points: &[Point], levels: &[f64], scales: &[f64], p: f64) -> f64 {
    let mut sup = 0.0f64;
    for x in points {
        for &t in levels {
            let base = gf.eval_unchecked(&x[..dim], t);
            for &s in scales {
                sup = sup.max(gf.eval_unchecked(&x[..dim], s * t) / (s.powf(p) * base));
            }
        }
    }
    sup
}

/// Checks `℘(x,0)=0`, positivity, monotonicity and growth to infinity on the
/// sample lattice. Returns the first violation found.
pub fn check_orlicz(gf: &GrowthFunction, dim: usize) -> Result<()> {
    let (points, levels) = sample_lattice(dim);
    for x in &points {
        let x = &x[..dim];
        if gf.eval_unchecked(x, 0.0) != 0.0 {
            return Err(Error::Domain(format!("℘({x:?}, 0) is not zero")));
        }
        let mut prev = 0.0;
        for &t in &levels {
            let v = gf.eval_unchecked(x, t);
            if !(v > 0.0) || v < prev {
                return Err(Error::Domain(format!("℘({x:?}, ·) not positive nondecreasing at t={t}")));
            }
            prev = v;
        }
        if !(gf.eval_unchecked(x, 1e12) > 1e3 * gf.eval_unchecked(x, 1.0)) {
            return Err(Error::Domain(format!("℘({x:?}, t) does not grow without bound")));
        }
    }
    Ok(())
}
