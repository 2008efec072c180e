//! Atomic decomposition of closed forms through the Calderón reproducing
//! formula and tent-space atoms.
//!
//! With the positive Hodge Laplacian and `df = 0`,
//! `f ≈ Σ_k w_k t_k² dδ(f ∗ K_t ∗ K_t)`, where `K_t = c_k t²(-Δ)b_t` is a
//! zero-mass profile and the gains `c_k²` are fitted to `f`. Setting `F(·,t) = t δf ∗ K_t`, each tent atom `A_j` of
//! `F` yields the closed atom `Σ_k w_k t_k d(A_j(·,t_k)) ∗ K_{t_k}`.
//!
//! The scales that fit in the box cover only a few octaves, so the
//! Calderón sum is not the identity. The difference `f - Σ λ_j 𝔞_j` is itself
//! closed, compactly supported and of mean zero; it is emitted as a final
//! coarse-scale atom so that the decomposition is exact.

use serde::{Deserialize, Serialize};

use crate::atoms::{
    d_residual, nq_functional, size_ratio, validate_atom, Atom, AtomTolerances, AtomicDecomposition,
    DecompositionDiagnostics,
};
use crate::error::{Error, Result};
use crate::forms::{codifferential, exterior_derivative, Form};
use nalgebra::{DMatrix, DVector};

use crate::grid::{forward, ordered_sum, Ball, Grid};
use crate::growth::{AdmissibleTriple, GrowthFunction};
use crate::maximal::{convolve_scalar, Kernel, LevelGrid, Mollifier, SpaceTimeField};
use crate::tent::{level_slice, tent_decompose, TentAtom, TentOptions};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecomposeOptions {
    pub tent: TentOptions,
    pub atoms: AtomTolerances,
    /// Integrability exponent of the emitted atoms.
    pub q: f64,
    /// Largest tolerated `‖df‖₂ h / ‖f‖₂` of the input.
    pub input_closed_tol: f64,
    /// Dilation of the tent ball on which emitted atoms are validated.
    pub dilation: f64,
    /// Emit the coarse-scale remainder atom.
    pub remainder: bool,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self {
            tent: TentOptions::default(),
            atoms: AtomTolerances::default(),
            q: 2.0,
            input_closed_tol: 1e-10,
            dilation: 2.0,
            remainder: true,
        }
    }
}

/// Smallest ball centered at the bounding-box midpoint of the support.
pub fn support_ball(f: &Form) -> Option<Ball> {
    let grid = f.grid();
    let n = grid.dim();
    let support = f.support();
    let cells: Vec<usize> = (0..grid.len()).filter(|&i| support[i]).collect();
    if cells.is_empty() {
        return None;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in &cells {
        let p = grid.point(i);
        for a in 0..n {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let mut center = [0.0; 3];
    for a in 0..n {
        center[a] = 0.5 * (lo[a] + hi[a]);
    }
    let probe = Ball { center, radius: 1.0 };
    let reach = cells.iter().map(|&i| probe.distance(grid, &grid.point(i))).fold(0.0, f64::max);
    Some(Ball { center, radius: reach + 0.5 * grid.spacing() })
}

/// Half-octave scales from below the grid spacing up to the largest dyadic
/// scale for which `F(·,t)` and its cones stay inside the box.
pub fn decomposition_levels(grid: &Grid, support: &Ball) -> Result<LevelGrid> {
    let h = grid.spacing();
    let lo = h.log2().floor() as i32 - 1;
    let offset = (0..grid.dim()).map(|a| support.center[a].abs()).fold(0.0, f64::max);
    let room = (grid.half_len() - offset - support.radius - 6.0 * h) / 2.0;
    let cap = room.min(grid.half_len() / 2.0);
    if !(cap > 0.0) {
        return Err(Error::Geometry("support too close to the box boundary for any scale".into()));
    }
    let hi = cap.log2().floor() as i32;
    if hi < lo {
        return Err(Error::Geometry("support too close to the box boundary for any scale".into()));
    }
    Ok(LevelGrid::geometric(lo, hi, 2))
}

const PROFILE: Mollifier = Mollifier::LaplacianBump { power: 1 };

/// Per-scale multipliers `m_k(κ) = w_k t_k² σ(κ) K̂_{t_k}(κ)²` at unit
/// amplitude.
fn calderon_multipliers(grid: &Grid, levels: &LevelGrid) -> Result<Vec<Vec<f64>>> {
    levels
        .scales
        .iter()
        .zip(&levels.weights)
        .map(|(&t, &w)| {
            let k = Kernel::sample(grid, PROFILE, t)?;
            let mut dense = vec![0.0; grid.len()];
            for (o, v) in k.offsets.iter().zip(&k.weights) {
                dense[grid.shift_by(0, o)] += v;
            }
            let spec = forward(grid, &dense);
            Ok(spec.iter().enumerate().map(|(idx, s)| w * t * t * grid.laplacian_symbol(idx) * s.norm_sqr()).collect())
        })
        .collect()
}

/// Non-negative per-scale gains `c` minimizing `‖f - Σ_k c_k m_k f‖₂`,
/// evaluated on the spectral energy of `f`, by projected coordinate descent
/// on the normal equations.
fn fit_gains(mults: &[Vec<f64>], energy: &[f64]) -> Vec<f64> {
    let k = mults.len();
    let gram = DMatrix::from_fn(k, k, |i, j| {
        ordered_sum(energy.iter().enumerate().map(|(x, e)| e * mults[i][x] * mults[j][x]))
    });
    let rhs = DVector::from_fn(k, |i, _| ordered_sum(energy.iter().zip(&mults[i]).map(|(e, v)| e * v)));
    let mut gains = vec![0.0; k];
    for _ in 0..GAIN_SWEEPS {
        let mut change = 0.0f64;
        for i in 0..k {
            if gram[(i, i)] <= 0.0 {
                continue;
            }
            let others: f64 = (0..k).filter(|&j| j != i).map(|j| gram[(i, j)] * gains[j]).sum();
            let next = ((rhs[i] - others) / gram[(i, i)]).max(0.0);
            change = change.max((next - gains[i]).abs());
            gains[i] = next;
        }
        if change <= 1e-14 * gains.iter().fold(0.0f64, |m, g| m.max(*g)) {
            break;
        }
    }
    gains
}

const GAIN_SWEEPS: usize = 20_000;

fn scaled_kernel(grid: &Grid, t: f64, amplitude: f64) -> Result<Kernel> {
    let mut k = Kernel::sample(grid, PROFILE, t)?;
    for w in k.weights.iter_mut() {
        *w *= amplitude;
    }
    Ok(k)
}

/// Closed atom `Σ_k w_k t_k d(A(·,t_k)) ∗ K_{t_k}` of one tent atom.
fn closed_atom_from_tent(atom: &TentAtom, amplitudes: &[f64]) -> Result<Form> {
    let grid = atom.grid;
    let mut out = Form::zeros(grid, atom.degree + 1)?;
    for (level, (&t, &w)) in atom.levels.scales.iter().zip(&atom.levels.weights).enumerate() {
        let slice = level_slice(atom, level)?;
        if slice.max_abs() == 0.0 {
            continue;
        }
        let kernel = scaled_kernel(&grid, t, amplitudes[level])?;
        let conv = exterior_derivative(&slice)?.map_components(|c| convolve_scalar(&grid, c, &kernel));
        out.axpy(w * t, &conv)?;
    }
    Ok(out)
}

/// Validation ball: the dilated tent ball, enlarged to the support reach of
/// the emitted atom and shrunk to keep two cells clear of the box boundary,
/// which leaves room for primitives and their differentials.
fn validation_ball(grid: &Grid, tent_ball: &Ball, dilation: f64) -> Result<Ball> {
    let needed = tent_ball.radius + 2.0 * grid.spacing();
    let radius =
        (tent_ball.radius * dilation).max(needed).min(tent_ball.max_fitting_radius(grid) - 2.0 * grid.spacing());
    if radius < needed {
        return Err(Error::Geometry(format!(
            "ball of radius {} around {:?} does not fit in the box",
            tent_ball.radius,
            &tent_ball.center[..grid.dim()]
        )));
    }
    Ok(tent_ball.with_radius(radius))
}

fn normalized_atom(form: Form, ball: Ball, triple: &AdmissibleTriple, tol: &AtomTolerances) -> Result<(f64, Atom)> {
    let ratio = size_ratio(&form, &ball, triple, tol)?;
    let mut atom = Atom { form: form.scale(1.0 / ratio), ball, triple: triple.clone(), closed: true, validation: None };
    atom.validation = Some(validate_atom(&atom, tol)?);
    Ok((ratio, atom))
}

/// Decomposes a closed, zero-mean form of degree `ℓ ≥ 1` into closed
/// `(℘, q, s)`-atoms.
pub fn closed_atomic_decompose(f: &Form, gf: &GrowthFunction, opts: &DecomposeOptions) -> Result<AtomicDecomposition> {
    let grid = *f.grid();
    if f.degree() == 0 {
        return Err(Error::Degree("decomposition needs degree at least 1".into()));
    }
    if !f.is_finite() {
        return Err(Error::Input("non-finite sample in input".into()));
    }
    let norm = f.l2_norm();
    if norm == 0.0 {
        return Ok(AtomicDecomposition::empty());
    }
    let closed = d_residual(f)?;
    if closed > opts.input_closed_tol {
        return Err(Error::Domain(format!("input is not closed: d residual {closed:e}")));
    }
    let scale = f.max_abs();
    for m in f.means() {
        if m.abs() > 1e-10 * scale {
            return Err(Error::Domain(format!("input has non-zero mean {m:e}")));
        }
    }
    let triple = AdmissibleTriple::new(gf.clone(), opts.q, gf.critical_moment(grid.dim()), grid.dim())?;
    let support = support_ball(f).expect("non-zero form has support");
    let levels = decomposition_levels(&grid, &support)?;

    let mults = calderon_multipliers(&grid, &levels)?;
    let mut energy = vec![0.0; grid.len()];
    for c in f.components() {
        for (e, v) in energy.iter_mut().zip(forward(&grid, c)) {
            *e += v.norm_sqr();
        }
    }
    let gains = fit_gains(&mults, &energy);
    if gains.iter().all(|&g| g == 0.0) {
        return Err(Error::Solver("Calderón gain fit failed".into()));
    }
    let amplitudes: Vec<f64> = gains.iter().map(|g| g.sqrt()).collect();
    let combined: Vec<f64> =
        (1..grid.len()).map(|x| ordered_sum(gains.iter().zip(&mults).map(|(g, m)| g * m[x]))).collect();

    let codiff = codifferential(f)?;
    let slices = levels
        .scales
        .iter()
        .zip(&amplitudes)
        .map(|(&t, &a)| {
            let k = scaled_kernel(&grid, t, a)?;
            Ok(codiff.map_components(|c| convolve_scalar(&grid, c, &k)).scale(t))
        })
        .collect::<Result<Vec<_>>>()?;
    let field = SpaceTimeField::new(levels.clone(), slices)?;
    let tents = tent_decompose(&field, gf, &opts.tent)?;

    let mut weights = Vec::new();
    let mut atoms = Vec::new();
    let mut max_slack = 0.0f64;
    for (lambda, tent) in tents.weights.iter().zip(&tents.atoms) {
        let form = closed_atom_from_tent(tent, &amplitudes)?;
        if form.max_abs() == 0.0 {
            continue;
        }
        let ball = validation_ball(&grid, &tent.ball, opts.dilation)?;
        let (ratio, atom) = normalized_atom(form, ball, &triple, &opts.atoms)?;
        max_slack = max_slack.max(ratio);
        weights.push(lambda * ratio);
        atoms.push(atom);
    }

    let mut sum = Form::zeros(grid, f.degree())?;
    for (w, a) in weights.iter().zip(&atoms) {
        sum.axpy(*w, &a.form)?;
    }
    let remainder = f - &sum;
    let calderon_residual = remainder.l2_norm() / norm;
    let mut remainder_index = None;
    if opts.remainder && remainder.l2_norm() > 1e-13 * norm {
        let ball = support_ball(&remainder).expect("non-zero remainder has support");
        let ball = ball.with_radius(ball.radius + grid.spacing());
        if ball.radius + 2.0 * grid.spacing() > ball.max_fitting_radius(&grid) {
            return Err(Error::Geometry("remainder support reaches the box boundary".into()));
        }
        let (ratio, atom) = normalized_atom(remainder, ball, &triple, &opts.atoms)?;
        remainder_index = Some(atoms.len());
        weights.push(ratio);
        atoms.push(atom);
    }

    let terms: Vec<(f64, &Atom)> = weights.iter().copied().zip(atoms.iter()).collect();
    let mut total = Form::zeros(grid, f.degree())?;
    for (w, a) in &terms {
        total.axpy(*w, &a.form)?;
    }
    let reconstruction_error = (f - &total).l2_norm() / norm;
    let nq_value = nq_functional(&terms, &opts.atoms)?;
    let diagnostics = DecompositionDiagnostics {
        calderon_residual,
        multiplier_min: combined.iter().copied().fold(f64::INFINITY, f64::min),
        multiplier_max: combined.iter().copied().fold(0.0, f64::max),
        tent_pieces: tents.atoms.len(),
        tent_weight: tents.weight_functional,
        tent_norm: tents.tent_norm,
        max_size_slack: max_slack,
        remainder: remainder_index,
        scales: levels.scales.clone(),
    };
    Ok(AtomicDecomposition { weights, atoms, nq_value, reconstruction_error, diagnostics })
}
