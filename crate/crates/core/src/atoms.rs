//! Atoms: construction, validation, the 𝔑_q functional and synthesis.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forms::{exterior_derivative, load_dff, save_dff, Form};
use crate::grid::{ordered_sum, Ball, Grid};
use crate::growth::{chi_ball_norm, gauge, lq_on_cells, AdmissibleTriple, GrowthFunction};
use crate::maximal::Mollifier;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomTolerances {
    /// Relative L² mass allowed outside the ball.
    pub leak: f64,
    /// Allowed excess of the size ratio over 1.
    pub size: f64,
    /// Relative moment residual.
    pub moment: f64,
    /// `‖df‖₂ h / ‖f‖₂`.
    pub closed: f64,
    /// Dyadic range `2^{-K}..2^K` for the L^q_℘ supremum.
    pub levels: i32,
    /// Bisection tolerance of the ball-indicator norm.
    pub norm_tol: f64,
}

impl Default for AtomTolerances {
    fn default() -> Self {
        Self { leak: 1e-10, size: 1e-6, moment: 1e-8, closed: 1e-10, levels: 20, norm_tol: 1e-10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub support_leak: f64,
    pub size_ratio: f64,
    pub moment_residual: f64,
    pub d_residual: f64,
    pub passed: bool,
    pub failures: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Atom {
    pub form: Form,
    pub ball: Ball,
    pub triple: AdmissibleTriple,
    pub closed: bool,
    pub validation: Option<Validation>,
}

/// Shape parameters for [`make_atom`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomProfile {
    /// Coefficient of each component of the potential (closed atoms) or of
    /// the atom itself (other atoms). Empty means all ones.
    pub weights: Vec<f64>,
    /// Direction along which the two bumps of a bump difference are placed.
    pub direction: [f64; 3],
}

impl Default for AtomProfile {
    fn default() -> Self {
        Self { weights: vec![], direction: [1.0, 0.0, 0.0] }
    }
}

fn bump_at(grid: &Grid, center: &[f64; 3], radius: f64) -> Vec<f64> {
    let ball = Ball { center: *center, radius };
    let mut v: Vec<f64> = (0..grid.len())
        .map(|i| {
            let r = ball.distance(grid, &grid.point(i)) / radius;
            if r < 1.0 {
                (-1.0 / (1.0 - r * r)).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = ordered_sum(v.iter().copied());
    if total > 0.0 {
        for x in v.iter_mut() {
            *x /= total;
        }
    }
    v
}

/// Bump of the given radius whose discrete moments vanish through order `s`
/// (plain bump when `s` is `None`).
fn shaped_bump(grid: &Grid, center: &[f64; 3], radius: f64, vanishing: Option<usize>) -> Result<Vec<f64>> {
    match vanishing {
        None => Ok(bump_at(grid, center, radius)),
        Some(s) => {
            let m = Mollifier::with_vanishing_moments(s);
            let Mollifier::LaplacianBump { power } = m else { unreachable!() };
            let h = grid.spacing();
            let inner = radius - power as f64 * h;
            if inner < 2.0 * h {
                return Err(Error::Input("ball too small for the requested moment order".into()));
            }
            let mut v = bump_at(grid, center, inner);
            for _ in 0..power {
                v = crate::forms::scalar_laplacian(grid, &v);
            }
            Ok(v)
        }
    }
}

/// Builds an atom saturating the size condition. Closed atoms of degree
/// `ℓ < n` are `d` of a bump potential on `B/2`; top-degree and non-closed
/// atoms are zero-mean bump differences (or Laplacian bumps when `s > 0`).
pub fn make_atom(
    grid: &Grid,
    ball: &Ball,
    triple: &AdmissibleTriple,
    degree: usize,
    closed: bool,
    profile: &AtomProfile,
    tol: &AtomTolerances,
) -> Result<Atom> {
    ball.ensure_fits(grid)?;
    let n = grid.dim();
    let h = grid.spacing();
    if ball.radius / 2.0 < 2.0 * h {
        return Err(Error::Input(format!("ball radius {} too small for grid spacing {h}", ball.radius)));
    }
    let s = triple.moments;
    let form = if closed && degree >= 1 && degree < n {
        let count = crate::forms::binomial(n, degree - 1);
        let weights = weights_or_ones(&profile.weights, count)?;
        let vanishing = if s > 0 { Some(s - 1) } else { None };
        let base = shaped_bump(grid, &ball.center, ball.radius / 2.0, vanishing)?;
        let comps = weights.iter().map(|w| base.iter().map(|v| w * v).collect()).collect();
        exterior_derivative(&Form::from_components(*grid, degree - 1, comps)?)?
    } else {
        if closed && degree == 0 {
            return Err(Error::Degree("closed 0-forms with compact support vanish".into()));
        }
        let count = crate::forms::binomial(n, degree);
        let weights = weights_or_ones(&profile.weights, count)?;
        let base = if s == 0 {
            let dir = unit(&profile.direction, n)?;
            let shift = |sign: f64| {
                let mut c = ball.center;
                for a in 0..n {
                    c[a] += sign * 0.5 * ball.radius * dir[a];
                }
                c
            };
            let plus = bump_at(grid, &shift(1.0), ball.radius / 2.0 - h);
            let minus = bump_at(grid, &shift(-1.0), ball.radius / 2.0 - h);
            plus.iter().zip(&minus).map(|(a, b)| a - b).collect::<Vec<_>>()
        } else {
            shaped_bump(grid, &ball.center, ball.radius - h, Some(s))?
        };
        let comps = weights.iter().map(|w| base.iter().map(|v| w * v).collect()).collect();
        Form::from_components(*grid, degree, comps)?
    };
    if form.max_abs() == 0.0 {
        return Err(Error::Input("atom profile vanishes".into()));
    }
    let ratio = size_ratio(&form, ball, triple, tol)?;
    let mut atom = Atom {
        form: form.scale(1.0 / ratio),
        ball: *ball,
        triple: triple.clone(),
        closed: closed || degree == n,
        validation: None,
    };
    atom.validation = Some(validate_atom(&atom, tol)?);
    Ok(atom)
}

fn weights_or_ones(weights: &[f64], count: usize) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Ok(vec![1.0; count]);
    }
    if weights.len() != count {
        return Err(Error::Input(format!("expected {count} profile weights, got {}", weights.len())));
    }
    Ok(weights.to_vec())
}

fn unit(v: &[f64; 3], n: usize) -> Result<[f64; 3]> {
    let len = v[..n].iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(len > 0.0) {
        return Err(Error::Input("zero bump direction".into()));
    }
    let mut out = [0.0; 3];
    for a in 0..n {
        out[a] = v[a] / len;
    }
    Ok(out)
}

/// `‖f‖_{L^q_℘(B)} ‖χ_B‖_{L^℘}` computed on the cells of `B`.
pub fn size_ratio(f: &Form, ball: &Ball, triple: &AdmissibleTriple, tol: &AtomTolerances) -> Result<f64> {
    let grid = f.grid();
    ball.ensure_fits(grid)?;
    let cells = ball.cells(grid);
    let lq = lq_on_cells(triple, grid, &f.pointwise_norm(), &cells, tol.levels)?;
    Ok(lq * chi_ball_norm(&triple.growth, grid, ball, tol.norm_tol)?)
}

/// Multi-indices of total order `order` in `dim` variables.
fn multi_indices(dim: usize, order: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for a in 0..=order {
        for b in 0..=(order - a) {
            let c = order - a - b;
            let idx = [a, b, c];
            if (dim < 3 && c > 0) || (dim < 2 && b > 0) {
                continue;
            }
            out.push(idx);
        }
    }
    out
}

/// `max_{I,|γ|≤s} |∫ f_I (x-x_B)^γ| / (r^{|γ|} ∫|f|)`.
pub fn moment_residual(f: &Form, ball: &Ball, s: usize) -> f64 {
    let grid = f.grid();
    let n = grid.dim();
    let total: f64 = ordered_sum(f.pointwise_norm().into_iter());
    if total == 0.0 {
        return 0.0;
    }
    let rel: Vec<[f64; 3]> = (0..grid.len())
        .map(|i| {
            let p = grid.point(i);
            let mut d = [0.0; 3];
            for a in 0..n {
                d[a] = p[a] - ball.center[a];
            }
            d
        })
        .collect();
    let mut worst = 0.0f64;
    for order in 0..=s {
        for gamma in multi_indices(n, order) {
            for comp in f.components() {
                let m = ordered_sum(comp.iter().zip(&rel).map(|(v, d)| {
                    v * d[0].powi(gamma[0] as i32) * d[1].powi(gamma[1] as i32) * d[2].powi(gamma[2] as i32)
                }));
                worst = worst.max(m.abs() / (ball.radius.powi(order as i32) * total));
            }
        }
    }
    worst
}

/// `‖df‖₂ h / ‖f‖₂`; zero for top-degree forms.
pub fn d_residual(f: &Form) -> Result<f64> {
    if f.degree() == f.grid().dim() {
        return Ok(0.0);
    }
    let norm = f.l2_norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    Ok(exterior_derivative(f)?.l2_norm() * f.grid().spacing() / norm)
}

pub fn validate_atom(atom: &Atom, tol: &AtomTolerances) -> Result<Validation> {
    let f = &atom.form;
    let grid = f.grid();
    let support_leak = f.leak_outside(&atom.ball.mask(grid));
    let size_ratio = size_ratio(f, &atom.ball, &atom.triple, tol)?;
    let moment_residual = moment_residual(f, &atom.ball, atom.triple.moments);
    let d_residual = if atom.closed { d_residual(f)? } else { 0.0 };
    let mut failures = Vec::new();
    if support_leak > tol.leak {
        failures.push(format!("support leak {support_leak:e} > {:e}", tol.leak));
    }
    if size_ratio > 1.0 + tol.size {
        failures.push(format!("size ratio {size_ratio} > 1 + {:e}", tol.size));
    }
    if moment_residual > tol.moment {
        failures.push(format!("moment residual {moment_residual:e} > {:e}", tol.moment));
    }
    if d_residual > tol.closed {
        failures.push(format!("d residual {d_residual:e} > {:e}", tol.closed));
    }
    Ok(Validation { support_leak, size_ratio, moment_residual, d_residual, passed: failures.is_empty(), failures })
}

/// `inf{λ > 0 : Σ_j ℘(B_j, ‖λ_j 𝔞_j‖_{L^q_℘(B_j)} / λ) ≤ 1}`.
pub fn nq_functional(terms: &[(f64, &Atom)], tol: &AtomTolerances) -> Result<f64> {
    let mut pieces = Vec::with_capacity(terms.len());
    for (w, atom) in terms {
        let grid = atom.form.grid();
        atom.ball.ensure_fits(grid)?;
        let cells = atom.ball.cells(grid);
        let size = w.abs() * lq_on_cells(&atom.triple, grid, &atom.form.pointwise_norm(), &cells, tol.levels)?;
        pieces.push((size, cells, *grid, atom.triple.growth.clone()));
    }
    weighted_gauge(&pieces, tol.norm_tol)
}

/// Shared bisection for `inf{λ : Σ_j ℘(B_j, c_j/λ) ≤ 1}`.
pub(crate) fn weighted_gauge(pieces: &[(f64, Vec<usize>, Grid, GrowthFunction)], tol: f64) -> Result<f64> {
    let peak = pieces.iter().map(|p| p.0).fold(0.0, f64::max);
    if peak == 0.0 {
        return Ok(0.0);
    }
    let modular = |lambda: f64| {
        ordered_sum(pieces.iter().map(|(c, cells, grid, gf)| {
            if *c == 0.0 {
                return 0.0;
            }
            let dim = grid.dim();
            grid.cell_volume()
                * ordered_sum(cells.iter().map(|&i| gf.eval_unchecked(&grid.point(i)[..dim], c / lambda)))
        }))
    };
    gauge(peak, |l| modular(l) <= 1.0, tol)
}

/// `Σ_j λ_j 𝔞_j`.
pub fn synthesize(grid: &Grid, degree: usize, terms: &[(f64, &Atom)]) -> Result<Form> {
    let mut out = Form::zeros(*grid, degree)?;
    for (w, atom) in terms {
        out.axpy(*w, &atom.form)?;
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct DecompositionDiagnostics {
    /// Relative L² error of the Calderón sum alone, before the coarse-scale
    /// remainder atom is added.
    pub calderon_residual: f64,
    /// Range of the discrete Calderón multiplier over non-zero grid modes.
    pub multiplier_min: f64,
    pub multiplier_max: f64,
    /// Stopping-time levels and tent pieces.
    pub tent_pieces: usize,
    /// Weight functional of the tent decomposition and the tent norm.
    pub tent_weight: f64,
    pub tent_norm: f64,
    /// Largest raw size ratio of an emitted atom before normalization.
    pub max_size_slack: f64,
    /// Index of the remainder atom, if one was added.
    pub remainder: Option<usize>,
    /// Scales used.
    pub scales: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct AtomicDecomposition {
    pub weights: Vec<f64>,
    pub atoms: Vec<Atom>,
    pub nq_value: f64,
    pub reconstruction_error: f64,
    pub diagnostics: DecompositionDiagnostics,
}

impl AtomicDecomposition {
    pub fn empty() -> Self {
        Self {
            weights: vec![],
            atoms: vec![],
            nq_value: 0.0,
            reconstruction_error: 0.0,
            diagnostics: DecompositionDiagnostics::default(),
        }
    }

    pub fn terms(&self) -> Vec<(f64, &Atom)> {
        self.weights.iter().copied().zip(self.atoms.iter()).collect()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn synthesize(&self, grid: &Grid, degree: usize) -> Result<Form> {
        synthesize(grid, degree, &self.terms())
    }

    /// Writes `manifest.json` and one `atom_XXX.dff` per atom.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut entries = Vec::new();
        for (i, (w, atom)) in self.terms().into_iter().enumerate() {
            let file = format!("atom_{i:03}.dff");
            save_dff(&atom.form, &dir.join(&file))?;
            entries.push(ManifestAtom {
                file,
                weight: w,
                center: atom.ball.center[..atom.form.grid().dim()].to_vec(),
                radius: atom.ball.radius,
                closed: atom.closed,
                validation: atom.validation.clone(),
            });
        }
        let manifest = Manifest {
            growth: self.atoms.first().map(|a| a.triple.growth.name().to_string()),
            q: self.atoms.first().map(|a| a.triple.q),
            moments: self.atoms.first().map(|a| a.triple.moments),
            nq_value: self.nq_value,
            reconstruction_error: self.reconstruction_error,
            diagnostics: self.diagnostics.clone(),
            atoms: entries,
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
        let growth = GrowthFunction::parse(manifest.growth.as_deref().unwrap_or("theta"))?;
        let mut weights = Vec::new();
        let mut atoms = Vec::new();
        for entry in &manifest.atoms {
            let form = load_dff(&dir.join(&entry.file))?;
            let dim = form.grid().dim();
            let triple =
                AdmissibleTriple::new(growth.clone(), manifest.q.unwrap_or(2.0), manifest.moments.unwrap_or(0), dim)?;
            weights.push(entry.weight);
            atoms.push(Atom {
                form,
                ball: Ball::new(&entry.center, entry.radius)?,
                triple,
                closed: entry.closed,
                validation: entry.validation.clone(),
            });
        }
        Ok(Self {
            weights,
            atoms,
            nq_value: manifest.nq_value,
            reconstruction_error: manifest.reconstruction_error,
            diagnostics: manifest.diagnostics,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestAtom {
    file: String,
    weight: f64,
    center: Vec<f64>,
    radius: f64,
    closed: bool,
    validation: Option<Validation>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    growth: Option<String>,
    q: Option<f64>,
    moments: Option<usize>,
    nq_value: f64,
    reconstruction_error: f64,
    diagnostics: DecompositionDiagnostics,
    atoms: Vec<ManifestAtom>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn theta_triple() -> AdmissibleTriple {
        AdmissibleTriple::new(GrowthFunction::theta(), 2.0, 0, 2).unwrap()
    }

    #[test]
    fn multi_index_counts() {
        assert_eq!(multi_indices(2, 2).len(), 3);
        assert_eq!(multi_indices(3, 2).len(), 6);
        assert_eq!(multi_indices(2, 0), vec![[0, 0, 0]]);
    }

    #[test]
    fn top_degree_atom_validates() {
        let g = Grid::default_2d();
        let ball = Ball::new(&[0.5, -0.5], 1.0).unwrap();
        let tol = AtomTolerances::default();
        let a = make_atom(&g, &ball, &theta_triple(), 2, true, &AtomProfile::default(), &tol).unwrap();
        let v = a.validation.unwrap();
        assert!(v.passed, "{:?}", v.failures);
        assert!((v.size_ratio - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_tiny_or_outside_balls() {
        let g = Grid::default_2d();
        let tol = AtomTolerances::default();
        let t = theta_triple();
        let p = AtomProfile::default();
        assert!(make_atom(&g, &Ball::new(&[0.0, 0.0], 0.3).unwrap(), &t, 1, true, &p, &tol).is_err());
        assert!(make_atom(&g, &Ball::new(&[3.5, 0.0], 1.0).unwrap(), &t, 1, true, &p, &tol).is_err());
        assert!(make_atom(&g, &Ball::new(&[0.0, 0.0], 1.0).unwrap(), &t, 0, true, &p, &tol).is_err());
    }
}
