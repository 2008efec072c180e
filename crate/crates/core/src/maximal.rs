//! Mollifiers, the radial maximal function, the area function over cones,
//! and the tent and Hardy norms.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::{Arc, OnceLock, RwLock};

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forms::{read_dff, write_dff, Form};
use crate::grid::{forward, inverse_real, Grid};
use crate::growth::{luxembourg_norm, GrowthFunction};

/// Radial profile family. Kernels are sampled on the grid and normalized
/// discretely so that mass and moment identities hold exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mollifier {
    /// `exp(-1/(1-|x|²))` on the unit ball, unit mass.
    Bump,
    /// `t^{2m} (-Δ)^m` applied to the bump: all moments of order
    /// `0..=2m-1` vanish.
    LaplacianBump { power: u32 },
}

impl Mollifier {
    /// Parses `bump` or `dbump:m`.
    pub fn parse(spec: &str) -> Result<Self> {
        match spec.split_once(':') {
            None if spec == "bump" => Ok(Mollifier::Bump),
            Some(("dbump", m)) => {
                let power: u32 = m.parse().map_err(|_| Error::Input(format!("bad order in mollifier '{spec}'")))?;
                if power == 0 {
                    return Err(Error::Input("dbump order must be at least 1".into()));
                }
                Ok(Mollifier::LaplacianBump { power })
            }
            _ => Err(Error::Input(format!("unknown mollifier '{spec}' (expected bump or dbump:m)"))),
        }
    }

    /// Smallest profile whose moments vanish through order `s`.
    pub fn with_vanishing_moments(s: usize) -> Self {
        Mollifier::LaplacianBump { power: (s as u32) / 2 + 1 }
    }

    /// Highest moment order that vanishes, or `None` for unit-mass profiles.
    pub fn vanishing_order(&self) -> Option<usize> {
        match self {
            Mollifier::Bump => None,
            Mollifier::LaplacianBump { power } => Some(2 * *power as usize - 1),
        }
    }
}

/// Sampled convolution weights `φ_t(z) hⁿ` at cell offsets `z`.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    pub offsets: Vec<[isize; 3]>,
    pub weights: Vec<f64>,
}

impl Kernel {
    pub fn sample(grid: &Grid, mollifier: Mollifier, t: f64) -> Result<Kernel> {
        if !(t > 0.0) || t > grid.half_len() / 2.0 + 1e-12 {
            return Err(Error::Domain(format!("mollifier scale {t} outside (0, {}]", grid.half_len() / 2.0)));
        }
        match mollifier {
            Mollifier::Bump => Ok(bump_weights(grid, t)),
            Mollifier::LaplacianBump { power } => {
                let h = grid.spacing();
                let inner = t - power as f64 * h;
                let mut map: HashMap<[isize; 3], f64> = HashMap::new();
                if inner > 0.0 {
                    let b = bump_weights(grid, inner);
                    for (o, w) in b.offsets.iter().zip(&b.weights) {
                        map.insert(*o, *w);
                    }
                } else {
                    map.insert([0; 3], 1.0);
                }
                for _ in 0..power {
                    map = neg_laplacian_stencil(grid, &map);
                }
                let scale = t.powi(2 * power as i32);
                let mut entries: Vec<([isize; 3], f64)> =
                    map.into_iter().filter(|(_, w)| *w != 0.0).map(|(o, w)| (o, w * scale)).collect();
                entries.sort_by(|a, b| a.0.cmp(&b.0));
                Ok(Kernel {
                    offsets: entries.iter().map(|e| e.0).collect(),
                    weights: entries.iter().map(|e| e.1).collect(),
                })
            }
        }
    }

    /// Largest offset length in physical units.
    pub fn reach(&self, grid: &Grid) -> f64 {
        let h = grid.spacing();
        self.offsets.iter().map(|o| (o.iter().map(|&c| (c * c) as f64).sum::<f64>()).sqrt() * h).fold(0.0, f64::max)
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Periodic spectrum of the kernel, for FFT-based convolution.
    fn spectrum(&self, grid: &Grid) -> Vec<Complex64> {
        let mut dense = vec![0.0; grid.len()];
        for (o, w) in self.offsets.iter().zip(&self.weights) {
            dense[grid.shift_by(0, o)] += w;
        }
        forward(grid, &dense)
    }
}

fn bump_weights(grid: &Grid, t: f64) -> Kernel {
    let h = grid.spacing();
    let reach = (t / h).floor() as isize;
    let dim = grid.dim();
    let mut offsets = Vec::new();
    let mut weights = Vec::new();
    let range = |a: usize| if a < dim { -reach..=reach } else { 0..=0 };
    for i in range(0) {
        for j in range(1) {
            for k in range(2) {
                let o = [i, j, k];
                let r2 = o.iter().map(|&c| (c * c) as f64).sum::<f64>() * h * h / (t * t);
                if r2 < 1.0 {
                    offsets.push(o);
                    weights.push((-1.0 / (1.0 - r2)).exp());
                }
            }
        }
    }
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    Kernel { offsets, weights }
}

fn neg_laplacian_stencil(grid: &Grid, map: &HashMap<[isize; 3], f64>) -> HashMap<[isize; 3], f64> {
    let h2 = grid.spacing().powi(2);
    let mut out: HashMap<[isize; 3], f64> = HashMap::new();
    let mut keys: Vec<&[isize; 3]> = map.keys().collect();
    keys.sort();
    for o in keys {
        let w = map[o];
        *out.entry(*o).or_default() += 2.0 * grid.dim() as f64 * w / h2;
        for a in 0..grid.dim() {
            for s in [-1isize, 1] {
                let mut p = *o;
                p[a] += s;
                *out.entry(p).or_default() -= w / h2;
            }
        }
    }
    out
}

/// Convolution of a scalar field with a kernel, by direct stencil scatter.
/// Exact zeros stay exact, so supports propagate exactly.
pub fn convolve_scalar(grid: &Grid, values: &[f64], kernel: &Kernel) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    for (y, &v) in values.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        for (o, w) in kernel.offsets.iter().zip(&kernel.weights) {
            out[grid.shift_by(y, o)] += w * v;
        }
    }
    out
}

/// `f ∗ φ_t`, componentwise.
pub fn mollify(f: &Form, t: f64, mollifier: Mollifier) -> Result<Form> {
    let grid = *f.grid();
    let kernel = Kernel::sample(&grid, mollifier, t)?;
    let comps: Vec<Vec<f64>> = f.components().par_iter().map(|c| convolve_scalar(&grid, c, &kernel)).collect();
    Form::from_components(grid, f.degree(), comps)
}

type SpectrumKey = (usize, usize, u64, Mollifier, u64);

fn spectrum_cache() -> &'static RwLock<HashMap<SpectrumKey, Arc<Vec<Complex64>>>> {
    static CACHE: OnceLock<RwLock<HashMap<SpectrumKey, Arc<Vec<Complex64>>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

fn cached_spectrum(grid: &Grid, mollifier: Mollifier, t: f64) -> Result<Arc<Vec<Complex64>>> {
    let key = (grid.dim(), grid.points(), grid.half_len().to_bits(), mollifier, t.to_bits());
    if let Some(s) = spectrum_cache().read().expect("cache lock").get(&key) {
        return Ok(s.clone());
    }
    let spec = Arc::new(Kernel::sample(grid, mollifier, t)?.spectrum(grid));
    spectrum_cache().write().expect("cache lock").insert(key, spec.clone());
    Ok(spec)
}

/// Convolution through cached kernel spectra. Faster than
/// [`mollify`] but leaves rounding-level values outside supports.
pub fn mollify_spectral(f: &Form, t: f64, mollifier: Mollifier) -> Result<Form> {
    let grid = *f.grid();
    let spec = cached_spectrum(&grid, mollifier, t)?;
    let comps = f
        .components()
        .par_iter()
        .map(|c| {
            let mut s = forward(&grid, c);
            for (a, b) in s.iter_mut().zip(spec.iter()) {
                *a *= b;
            }
            inverse_real(&grid, s)
        })
        .collect();
    Form::from_components(grid, f.degree(), comps)
}

/// Dyadic scales with their log-spacing quadrature weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelGrid {
    pub scales: Vec<f64>,
    pub weights: Vec<f64>,
}

impl LevelGrid {
    /// `t = 2^k` for `k` from `floor(log2 h) - 1` to `floor(log2(L/2))`.
    pub fn dyadic(grid: &Grid) -> Self {
        let lo = grid.spacing().log2().floor() as i32 - 1;
        let hi = (grid.half_len() / 2.0).log2().floor() as i32;
        Self::dyadic_range(lo, hi)
    }

    pub fn dyadic_range(lo: i32, hi: i32) -> Self {
        let scales: Vec<f64> = (lo..=hi).map(|k| 2f64.powi(k)).collect();
        let weights = vec![std::f64::consts::LN_2; scales.len()];
        Self { scales, weights }
    }

    /// `per_octave` scales per doubling between `2^lo` and `2^hi`.
    pub fn geometric(lo: i32, hi: i32, per_octave: usize) -> Self {
        let count = (hi - lo) as usize * per_octave + 1;
        let step = std::f64::consts::LN_2 / per_octave as f64;
        let scales = (0..count).map(|i| 2f64.powi(lo) * (step * i as f64).exp()).collect();
        Self { scales, weights: vec![step; count] }
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }
}

/// `f⁺ = max_t |f ∗ φ_t|` over the level grid.
pub fn plus_maximal(f: &Form, mollifier: Mollifier, levels: &LevelGrid) -> Result<Vec<f64>> {
    let grid = *f.grid();
    let mut out = vec![0.0f64; grid.len()];
    for &t in &levels.scales {
        let m = mollify_spectral(f, t, mollifier)?.pointwise_norm();
        for (a, b) in out.iter_mut().zip(m) {
            *a = a.max(b);
        }
    }
    Ok(out)
}

/// `‖f⁺‖_{L^℘}` with the bump profile on the dyadic level grid.
pub fn hardy_norm(gf: &GrowthFunction, f: &Form, tol: f64) -> Result<f64> {
    hardy_norm_with(gf, f, Mollifier::Bump, &LevelGrid::dyadic(f.grid()), tol)
}

pub fn hardy_norm_with(
    gf: &GrowthFunction,
    f: &Form,
    mollifier: Mollifier,
    levels: &LevelGrid,
    tol: f64,
) -> Result<f64> {
    if !f.is_finite() {
        return Err(Error::Input("non-finite sample in field".into()));
    }
    if f.max_abs() == 0.0 {
        return Ok(0.0);
    }
    luxembourg_norm(gf, f.grid(), &plus_maximal(f, mollifier, levels)?, tol)
}

/// Hardy norm for the logarithmic growth function.
pub fn hlog_norm(f: &Form, tol: f64) -> Result<f64> {
    hardy_norm(&GrowthFunction::theta(), f, tol)
}

/// H¹ norm, the Hardy norm for `℘(x,t) = t`.
pub fn h1_norm(f: &Form, tol: f64) -> Result<f64> {
    hardy_norm(&GrowthFunction::power(1.0)?, f, tol)
}

/// Form-valued function on grid × levels.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeField {
    pub levels: LevelGrid,
    pub slices: Vec<Form>,
}

impl SpaceTimeField {
    pub fn new(levels: LevelGrid, slices: Vec<Form>) -> Result<Self> {
        if levels.len() != slices.len() || slices.is_empty() {
            return Err(Error::Input("one slice per level required".into()));
        }
        for s in &slices[1..] {
            s.ensure_compatible(&slices[0])?;
        }
        Ok(Self { levels, slices })
    }

    pub fn zeros(grid: Grid, degree: usize, levels: LevelGrid) -> Result<Self> {
        let slices = vec![Form::zeros(grid, degree)?; levels.len()];
        Self::new(levels, slices)
    }

    pub fn grid(&self) -> &Grid {
        self.slices[0].grid()
    }

    pub fn degree(&self) -> usize {
        self.slices[0].degree()
    }

    /// `F(x,t) = t (g ∗ φ_t)(x)` on every level.
    pub fn from_mollified(g: &Form, mollifier: Mollifier, levels: &LevelGrid) -> Result<Self> {
        let slices =
            levels.scales.iter().map(|&t| Ok(mollify(g, t, mollifier)?.scale(t))).collect::<Result<Vec<_>>>()?;
        Self::new(levels.clone(), slices)
    }

    pub fn max_abs(&self) -> f64 {
        self.slices.iter().map(Form::max_abs).fold(0.0, f64::max)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { levels: self.levels.clone(), slices: self.slices.iter().map(|s| s.scale(c)).collect() }
    }

    /// Writes `STF1`, level count, scales and weights, then one `.dff`
    /// payload per level.
    pub fn write(&self, mut w: impl Write) -> Result<()> {
        w.write_all(b"STF1")?;
        w.write_all(&(self.levels.len() as u32).to_le_bytes())?;
        for v in self.levels.scales.iter().chain(&self.levels.weights) {
            w.write_all(&v.to_le_bytes())?;
        }
        for s in &self.slices {
            write_dff(s, &mut w)?;
        }
        Ok(())
    }

    pub fn read(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"STF1" {
            return Err(Error::Format("missing STF1 magic".into()));
        }
        let mut u = [0u8; 4];
        r.read_exact(&mut u)?;
        let count = u32::from_le_bytes(u) as usize;
        let mut floats = vec![0.0; 2 * count];
        for v in floats.iter_mut() {
            let mut d = [0u8; 8];
            r.read_exact(&mut d)?;
            *v = f64::from_le_bytes(d);
        }
        let levels = LevelGrid { scales: floats[..count].to_vec(), weights: floats[count..].to_vec() };
        let slices = (0..count).map(|_| read_dff(&mut r)).collect::<Result<Vec<_>>>()?;
        Self::new(levels, slices)
    }
}

/// Cell offsets strictly inside the disc of radius `t`.
pub(crate) fn disc_offsets(grid: &Grid, t: f64) -> Vec<[isize; 3]> {
    let h = grid.spacing();
    let reach = (t / h).ceil() as isize;
    let dim = grid.dim();
    let range = |a: usize| if a < dim { -reach..=reach } else { 0..=0 };
    let mut out = Vec::new();
    for i in range(0) {
        for j in range(1) {
            for k in range(2) {
                let o = [i, j, k];
                let r2 = o.iter().map(|&c| (c * c) as f64).sum::<f64>() * h * h;
                if r2 < t * t {
                    out.push(o);
                }
            }
        }
    }
    out
}

/// Lusin area function over the cones `|x-y| < t`:
/// `S(F)(x)² = Σ_k w_k t_k^{-n} Σ_{|x-y|<t_k} |F(y,t_k)|² hⁿ`.
pub fn area_function(field: &SpaceTimeField) -> Vec<f64> {
    let grid = *field.grid();
    let n = grid.dim() as i32;
    let vol = grid.cell_volume();
    let mut sq = vec![0.0f64; grid.len()];
    for ((slice, &t), &w) in field.slices.iter().zip(&field.levels.scales).zip(&field.levels.weights) {
        let energy: Vec<f64> = slice.pointwise_norm().iter().map(|v| v * v).collect();
        if energy.iter().all(|&e| e == 0.0) {
            continue;
        }
        let disc = disc_offsets(&grid, t);
        let factor = w * vol / t.powi(n);
        let contrib: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map(|x| {
                let mut acc = 0.0;
                for o in &disc {
                    acc += energy[grid.shift_by(x, o)];
                }
                factor * acc
            })
            .collect();
        for (a, b) in sq.iter_mut().zip(contrib) {
            *a += b;
        }
    }
    sq.into_iter().map(f64::sqrt).collect()
}

/// `‖S(F)‖_{L^℘}`.
pub fn tent_norm(gf: &GrowthFunction, field: &SpaceTimeField, tol: f64) -> Result<f64> {
    luxembourg_norm(gf, field.grid(), &area_function(field), tol)
}
