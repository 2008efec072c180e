//! Tent-space atoms and their stopping-time decomposition.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::atoms::weighted_gauge;
use crate::error::{Error, Result};
use crate::forms::Form;
use crate::grid::{ordered_sum, Ball, Grid};
use crate::growth::{chi_ball_norm, GrowthFunction};
use crate::maximal::{area_function, convolve_scalar, disc_offsets, Kernel, LevelGrid, Mollifier, SpaceTimeField};

/// One non-zero sample `(y, t_level)` of a space-time field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TentEntry {
    pub level: usize,
    pub cell: usize,
    pub values: Vec<f64>,
}

/// A space-time field supported in the tent `{|x_B - y| + t ≤ r_B}`,
/// stored sparsely.
#[derive(Clone, Debug, PartialEq)]
pub struct TentAtom {
    pub grid: Grid,
    pub degree: usize,
    pub ball: Ball,
    pub levels: LevelGrid,
    pub entries: Vec<TentEntry>,
}

impl TentAtom {
    pub fn to_field(&self) -> Result<SpaceTimeField> {
        let mut field = SpaceTimeField::zeros(self.grid, self.degree, self.levels.clone())?;
        for e in &self.entries {
            for (c, v) in field.slices[e.level].components_mut().iter_mut().zip(&e.values) {
                c[e.cell] = *v;
            }
        }
        Ok(field)
    }

    pub fn scale(&self, c: f64) -> TentAtom {
        let mut out = self.clone();
        for e in out.entries.iter_mut() {
            for v in e.values.iter_mut() {
                *v *= c;
            }
        }
        out
    }

    /// Largest excess of `|x_B - y| + t` over `r_B` across the entries
    /// (non-positive when the support condition holds).
    pub fn support_excess(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| {
                let y = self.grid.point(e.cell);
                self.ball.distance(&self.grid, &y) + self.levels.scales[e.level] - self.ball.radius
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Area function, computed by scattering only the stored entries.
    pub fn area_function(&self) -> Vec<f64> {
        sparse_area(&self.grid, &self.levels, self.entries.iter())
    }

    /// `‖S(A)‖_{L^p}` for `p ≥ 1`.
    pub fn tp_norm(&self, p: f64) -> f64 {
        let vol = self.grid.cell_volume();
        (vol * ordered_sum(self.area_function().into_iter().map(|s| s.powf(p)))).powf(1.0 / p)
    }

    /// Checks the tent support and `‖A‖_{T^p} ≤ |B|^{1/p} ‖χ_B‖^{-1}` for
    /// each `p` in `exponents`.
    pub fn validate(&self, gf: &GrowthFunction, exponents: &[f64], tol: f64) -> Result<TentValidation> {
        let chi = chi_ball_norm(gf, &self.grid, &self.ball, tol)?;
        let vol = self.ball.volume(&self.grid);
        let s = self.area_function();
        let cell = self.grid.cell_volume();
        let worst_ratio = exponents
            .iter()
            .map(|&p| {
                let norm = (cell * ordered_sum(s.iter().map(|v| v.powf(p)))).powf(1.0 / p);
                norm * chi / vol.powf(1.0 / p)
            })
            .fold(0.0, f64::max);
        let support_excess = self.support_excess();
        Ok(TentValidation { support_excess, worst_ratio, passed: support_excess <= 1e-12 && worst_ratio <= 1.0 + 1e-9 })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TentValidation {
    pub support_excess: f64,
    /// `max_p ‖A‖_{T^p} ‖χ_B‖ / |B|^{1/p}`.
    pub worst_ratio: f64,
    pub passed: bool,
}

pub(crate) fn sparse_area<'a>(
    grid: &Grid,
    levels: &LevelGrid,
    entries: impl Iterator<Item = &'a TentEntry>,
) -> Vec<f64> {
    let n = grid.dim() as i32;
    let vol = grid.cell_volume();
    let mut sq = vec![0.0f64; grid.len()];
    let mut discs: BTreeMap<usize, Vec<[isize; 3]>> = BTreeMap::new();
    for e in entries {
        let t = levels.scales[e.level];
        let energy: f64 = e.values.iter().map(|v| v * v).sum();
        if energy == 0.0 {
            continue;
        }
        let disc = discs.entry(e.level).or_insert_with(|| disc_offsets(grid, t));
        let c = levels.weights[e.level] * vol / t.powi(n) * energy;
        for o in disc.iter() {
            sq[grid.shift_by(e.cell, o)] += c;
        }
    }
    sq.into_iter().map(f64::sqrt).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TentOptions {
    /// Number of dyadic stopping levels below the top one before the
    /// catch-all level `{S > 0}`.
    pub span: usize,
    /// Bisection tolerance for norms.
    pub tol: f64,
}

impl Default for TentOptions {
    fn default() -> Self {
        Self { span: 24, tol: 1e-10 }
    }
}

#[derive(Clone, Debug)]
pub struct TentDecomposition {
    pub weights: Vec<f64>,
    pub atoms: Vec<TentAtom>,
    /// `inf{λ : Σ ℘(B_j, |λ_j| / (λ ‖χ_{B_j}‖)) ≤ 1}`.
    pub weight_functional: f64,
    pub tent_norm: f64,
}

impl TentDecomposition {
    fn empty() -> Self {
        Self { weights: vec![], atoms: vec![], weight_functional: 0.0, tent_norm: 0.0 }
    }

    /// `Σ λ_j A_j` as a dense field.
    pub fn resum(&self, grid: &Grid, degree: usize, levels: &LevelGrid) -> Result<SpaceTimeField> {
        let mut field = SpaceTimeField::zeros(*grid, degree, levels.clone())?;
        for (w, atom) in self.weights.iter().zip(&self.atoms) {
            for e in &atom.entries {
                for (c, v) in field.slices[e.level].components_mut().iter_mut().zip(&e.values) {
                    c[e.cell] += w * v;
                }
            }
        }
        Ok(field)
    }
}

/// Decomposes `F` into tent atoms. Runs the stopping-time construction and
/// the single-tent decomposition, and keeps whichever has the smaller weight
/// functional.
pub fn tent_decompose(field: &SpaceTimeField, gf: &GrowthFunction, opts: &TentOptions) -> Result<TentDecomposition> {
    let stopping = stopping_time_decompose(field, gf, opts)?;
    if stopping.atoms.is_empty() {
        return Ok(stopping);
    }
    match single_tent_decompose(field, gf, opts) {
        Ok(single) if single.weight_functional < stopping.weight_functional => Ok(single),
        _ => Ok(stopping),
    }
}

fn nonzero_entries(field: &SpaceTimeField) -> Vec<TentEntry> {
    let grid = field.grid();
    let mut out = Vec::new();
    for (level, slice) in field.slices.iter().enumerate() {
        for cell in 0..grid.len() {
            let values: Vec<f64> = slice.components().iter().map(|c| c[cell]).collect();
            // samples whose energy underflows are invisible to the area function
            if values.iter().map(|v| v * v).sum::<f64>() > 0.0 {
                out.push(TentEntry { level, cell, values });
            }
        }
    }
    out
}

fn check_field(field: &SpaceTimeField) -> Result<Vec<f64>> {
    if field.slices.iter().any(|s| !s.is_finite()) {
        return Err(Error::Input("non-finite sample in space-time field".into()));
    }
    let s = area_function(field);
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("unbounded area function".into()));
    }
    Ok(s)
}

fn finish(
    field: &SpaceTimeField,
    gf: &GrowthFunction,
    opts: &TentOptions,
    groups: Vec<(Ball, Vec<TentEntry>)>,
    area: &[f64],
) -> Result<TentDecomposition> {
    let grid = *field.grid();
    let mut weights = Vec::new();
    let mut atoms = Vec::new();
    let mut pieces = Vec::new();
    for (ball, entries) in groups {
        ball.ensure_fits(&grid)?;
        let s = sparse_area(&grid, &field.levels, entries.iter());
        let peak = s.iter().copied().fold(0.0, f64::max);
        if peak == 0.0 {
            continue;
        }
        let chi = chi_ball_norm(gf, &grid, &ball, opts.tol)?;
        let lambda = peak * chi;
        let atom =
            TentAtom { grid, degree: field.degree(), ball, levels: field.levels.clone(), entries }.scale(1.0 / lambda);
        pieces.push((peak, ball.cells(&grid), grid, gf.clone()));
        weights.push(lambda);
        atoms.push(atom);
    }
    let weight_functional = weighted_gauge(&pieces, opts.tol)?;
    let tent_norm = crate::growth::luxembourg_norm(gf, &grid, area, opts.tol)?;
    Ok(TentDecomposition { weights, atoms, weight_functional, tent_norm })
}

/// One tent atom over the smallest centered ball whose tent holds the support.
pub fn single_tent_decompose(
    field: &SpaceTimeField,
    gf: &GrowthFunction,
    opts: &TentOptions,
) -> Result<TentDecomposition> {
    let area = check_field(field)?;
    let entries = nonzero_entries(field);
    if entries.is_empty() {
        return Ok(TentDecomposition::empty());
    }
    let grid = *field.grid();
    let n = grid.dim();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for e in &entries {
        let p = grid.point(e.cell);
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
    let radius = entries
        .iter()
        .map(|e| probe.distance(&grid, &grid.point(e.cell)) + field.levels.scales[e.level])
        .fold(0.0, f64::max);
    finish(field, gf, opts, vec![(Ball { center, radius }, entries)], &area)
}

/// Coifman–Meyer–Stein stopping time: level sets `O_k = {S(F) > 2^k}`,
/// tent differences `T(O_k) \ T(O_{k+1})` split along Whitney cubes of `O_k`.
pub fn stopping_time_decompose(
    field: &SpaceTimeField,
    gf: &GrowthFunction,
    opts: &TentOptions,
) -> Result<TentDecomposition> {
    let area = check_field(field)?;
    let entries = nonzero_entries(field);
    if entries.is_empty() {
        return Ok(TentDecomposition::empty());
    }
    let grid = *field.grid();
    let top = area.iter().copied().fold(0.0, f64::max);
    let k_max = top.log2().floor() as i32;
    // thresholds from the catch-all level upward
    let mut thresholds = vec![0.0];
    for k in (k_max - opts.span as i32 + 1)..=k_max {
        thresholds.push(2f64.powi(k));
    }
    let sets: Vec<Vec<bool>> = thresholds.iter().map(|&th| area.iter().map(|&s| s > th).collect()).collect();
    let dists: Vec<Vec<f64>> = sets.iter().map(|set| distance_to_complement(&grid, set)).collect();

    let mut groups: BTreeMap<(usize, usize), Vec<TentEntry>> = BTreeMap::new();
    let mut cube_maps: Vec<Option<Vec<Option<usize>>>> = vec![None; sets.len()];
    for e in entries {
        let t = field.levels.scales[e.level];
        let level = (0..sets.len())
            .rev()
            .find(|&i| sets[i][e.cell] && dists[i][e.cell] >= t)
            .ok_or_else(|| Error::Solver("space-time sample outside every tent".into()))?;
        let map = cube_maps[level].get_or_insert_with(|| whitney_cubes(&grid, &sets[level], &dists[level]));
        let cube = map[e.cell].expect("cell of the open set lies in a cube");
        groups.entry((level, cube)).or_default().push(e);
    }

    let mut out = Vec::new();
    for ((level, cube), entries) in groups {
        let map = cube_maps[level].as_ref().expect("cube map");
        let center = cube_center(&grid, map, cube);
        let probe = Ball { center, radius: 1.0 };
        let radius = entries
            .iter()
            .map(|e| probe.distance(&grid, &grid.point(e.cell)) + field.levels.scales[e.level])
            .fold(0.0, f64::max);
        out.push((Ball { center, radius }, entries));
    }
    finish(field, gf, opts, out, &area)
}

/// Euclidean distance from each cell of `set` to the nearest cell outside
/// it (zero outside the set). Balls never wrap, so plain coordinates are used.
fn distance_to_complement(grid: &Grid, set: &[bool]) -> Vec<f64> {
    let boundary: Vec<usize> = (0..grid.len())
        .filter(|&i| !set[i] && (0..grid.dim()).any(|a| [-1, 1].iter().any(|&s| set[grid.shift(i, a, s)])))
        .collect();
    let pts: Vec<[f64; 3]> = boundary.iter().map(|&i| grid.point(i)).collect();
    (0..grid.len())
        .map(|i| {
            if !set[i] {
                return 0.0;
            }
            let p = grid.point(i);
            pts.iter()
                .map(|q| (0..grid.dim()).map(|a| (p[a] - q[a]).powi(2)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

/// Dyadic Whitney cover of `set`: each cell maps to the first flat index of
/// its cube. Cubes are tried from large to small in lexicographic order and
/// accepted when `side ≤ dist(Q, complement) / 4`; single cells always are.
fn whitney_cubes(grid: &Grid, set: &[bool], dist: &[f64]) -> Vec<Option<usize>> {
    let n = grid.dim();
    let h = grid.spacing();
    let mut owner: Vec<Option<usize>> = vec![None; grid.len()];
    let max_side = grid.points().trailing_zeros();
    for j in (0..max_side).rev() {
        let side = 1usize << j;
        let blocks = grid.points() / side;
        let width = side as f64 * h;
        let total = blocks.pow(n as u32);
        for b in 0..total {
            let mut corner = [0usize; 3];
            let mut rem = b;
            for a in (0..n).rev() {
                corner[a] = (rem % blocks) * side;
                rem /= blocks;
            }
            let cells = block_cells(grid, &corner, side);
            if cells.iter().any(|&c| !set[c] || owner[c].is_some()) {
                continue;
            }
            let d = cells.iter().map(|&c| dist[c]).fold(f64::INFINITY, f64::min);
            if side == 1 || width <= d / 4.0 {
                let id = grid.flat_index(&corner);
                for c in cells {
                    owner[c] = Some(id);
                }
            }
        }
    }
    owner
}

fn block_cells(grid: &Grid, corner: &[usize; 3], side: usize) -> Vec<usize> {
    let n = grid.dim();
    let count = side.pow(n as u32);
    (0..count)
        .map(|k| {
            let mut mi = [0usize; 3];
            let mut rem = k;
            for a in (0..n).rev() {
                mi[a] = corner[a] + rem % side;
                rem /= side;
            }
            grid.flat_index(&mi)
        })
        .collect()
}

fn cube_center(grid: &Grid, map: &[Option<usize>], id: usize) -> [f64; 3] {
    let n = grid.dim();
    let members: Vec<usize> = (0..grid.len()).filter(|&i| map[i] == Some(id)).collect();
    let mut c = [0.0; 3];
    for &m in &members {
        let p = grid.point(m);
        for a in 0..n {
            c[a] += p[a];
        }
    }
    for v in c.iter_mut().take(n) {
        *v /= members.len() as f64;
    }
    c
}

/// `π_φ(A) = Σ_k w_k A(·, t_k) ∗ φ_{t_k}`, the level quadrature of
/// `∫ A(·,t) ∗ φ_t dt/t`.
pub fn pi_phi(atom: &TentAtom, mollifier: Mollifier) -> Result<Form> {
    let grid = atom.grid;
    let mut out = Form::zeros(grid, atom.degree)?;
    for (level, (&t, &w)) in atom.levels.scales.iter().zip(&atom.levels.weights).enumerate() {
        let slice = level_slice(atom, level)?;
        if slice.max_abs() == 0.0 {
            continue;
        }
        let kernel = Kernel::sample(&grid, mollifier, t)?;
        let conv = slice.map_components(|c| convolve_scalar(&grid, c, &kernel));
        out.axpy(w, &conv)?;
    }
    Ok(out)
}

pub(crate) fn level_slice(atom: &TentAtom, level: usize) -> Result<Form> {
    let mut f = Form::zeros(atom.grid, atom.degree)?;
    for e in atom.entries.iter().filter(|e| e.level == level) {
        for (c, v) in f.components_mut().iter_mut().zip(&e.values) {
            c[e.cell] = *v;
        }
    }
    Ok(f)
}

/// A tent atom over `ball` filled with the given sample function, scaled so
/// that `‖S(A)‖_∞ ‖χ_B‖ = 1`.
pub fn make_tent_atom(
    grid: &Grid,
    degree: usize,
    ball: &Ball,
    levels: &LevelGrid,
    gf: &GrowthFunction,
    mut sample: impl FnMut(usize, usize) -> Vec<f64>,
) -> Result<TentAtom> {
    ball.ensure_fits(grid)?;
    let count = crate::forms::binomial(grid.dim(), degree);
    let mut entries = Vec::new();
    for (level, &t) in levels.scales.iter().enumerate() {
        for cell in ball.cells(grid) {
            if ball.distance(grid, &grid.point(cell)) + t <= ball.radius {
                let values = sample(level, cell);
                if values.len() != count {
                    return Err(Error::Input(format!("expected {count} component values")));
                }
                entries.push(TentEntry { level, cell, values });
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::Geometry("tent over the ball holds no samples".into()));
    }
    let atom = TentAtom { grid: *grid, degree, ball: *ball, levels: levels.clone(), entries };
    let peak = atom.area_function().into_iter().fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::Input("tent atom samples vanish".into()));
    }
    let chi = chi_ball_norm(gf, grid, ball, 1e-10)?;
    Ok(atom.scale(1.0 / (peak * chi)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitney_cover_partitions_the_set() {
        let g = Grid::new(2, 32, 4.0).unwrap();
        let ball = Ball::new(&[0.1, -0.2], 3.6).unwrap();
        let set = ball.mask(&g);
        let dist = distance_to_complement(&g, &set);
        let map = whitney_cubes(&g, &set, &dist);
        for i in 0..g.len() {
            assert_eq!(set[i], map[i].is_some());
        }
        let big = map.iter().flatten().filter(|&&id| map.iter().filter(|m| **m == Some(id)).count() > 1).count();
        assert!(big > 0, "expected some multi-cell cubes");
    }

    #[test]
    fn distance_matches_brute_force() {
        let g = Grid::new(2, 16, 2.0).unwrap();
        let set = Ball::new(&[0.0, 0.0], 1.2).unwrap().mask(&g);
        let d = distance_to_complement(&g, &set);
        for i in 0..g.len() {
            if !set[i] {
                continue;
            }
            let p = g.point(i);
            let brute = (0..g.len())
                .filter(|&j| !set[j])
                .map(|j| {
                    let q = g.point(j);
                    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            assert!((d[i] - brute).abs() < 1e-12);
        }
    }
}
