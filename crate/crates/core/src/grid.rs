//! Periodic box `[-L, L)^n` sampled at cell centers, balls on it, and the
//! n-dimensional FFT used by the spectral multipliers.

use std::cell::RefCell;
use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of the box. Only the first `n` coordinates are meaningful.
pub type Point = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    points: usize,
    half_len: f64,
}

impl Grid {
    pub fn new(dim: usize, points: usize, half_len: f64) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::Input(format!("dimension must be 2 or 3, got {dim}")));
        }
        if points < 4 || points % 2 != 0 {
            return Err(Error::Input(format!("points per axis must be even and >= 4, got {points}")));
        }
        if !(half_len.is_finite() && half_len > 0.0) {
            return Err(Error::Input(format!("half length must be positive, got {half_len}")));
        }
        Ok(Self { dim, points, half_len })
    }

    /// n=2, N=64, L=4.
    pub fn default_2d() -> Self {
        Self { dim: 2, points: 64, half_len: 4.0 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn half_len(&self) -> f64 {
        self.half_len
    }

    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_len / self.points as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn box_volume(&self) -> f64 {
        (2.0 * self.half_len).powi(self.dim as i32)
    }

    /// Cell-center coordinate of index `i` along any axis.
    pub fn coord(&self, i: usize) -> f64 {
        -self.half_len + (i as f64 + 0.5) * self.spacing()
    }

    /// Flat-index stride of `axis`; axis 0 varies slowest.
    pub fn stride(&self, axis: usize) -> usize {
        self.points.pow((self.dim - 1 - axis) as u32)
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        let mut out = [0usize; 3];
        let mut rem = idx;
        for a in (0..self.dim).rev() {
            out[a] = rem % self.points;
            rem /= self.points;
        }
        out
    }

    pub fn flat_index(&self, mi: &[usize]) -> usize {
        mi.iter().take(self.dim).fold(0, |acc, &i| acc * self.points + i)
    }

    pub fn point(&self, idx: usize) -> Point {
        let mi = self.multi_index(idx);
        let mut p = [0.0; 3];
        for a in 0..self.dim {
            p[a] = self.coord(mi[a]);
        }
        p
    }

    /// Periodic neighbour of `idx` shifted by `offset` cells along `axis`.
    pub fn shift(&self, idx: usize, axis: usize, offset: isize) -> usize {
        let stride = self.stride(axis);
        let i = (idx / stride) % self.points;
        let j = (i as isize + offset).rem_euclid(self.points as isize) as usize;
        idx + j * stride - i * stride
    }

    /// Periodic neighbour shifted by a full offset vector (in cells).
    pub fn shift_by(&self, idx: usize, offset: &[isize; 3]) -> usize {
        let mi = self.multi_index(idx);
        let n = self.points as isize;
        let mut out = 0usize;
        for a in 0..self.dim {
            let j = (mi[a] as isize + offset[a]).rem_euclid(n) as usize;
            out = out * self.points + j;
        }
        out
    }

    /// Signed FFT mode number of index `i` (Nyquist mapped to `-N/2`).
    pub fn mode(&self, i: usize) -> isize {
        let n = self.points as isize;
        let i = i as isize;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }

    pub fn is_nyquist(&self, i: usize) -> bool {
        i == self.points / 2
    }

    /// Angular wavenumber `pi m / L` of index `i`.
    pub fn wavenumber(&self, i: usize) -> f64 {
        PI * self.mode(i) as f64 / self.half_len
    }

    /// Symbol of the positive forward-difference Laplacian `-sum D+ D-`
    /// at the spectral index `idx`.
    pub fn laplacian_symbol(&self, idx: usize) -> f64 {
        let h = self.spacing();
        let mi = self.multi_index(idx);
        (0..self.dim)
            .map(|a| {
                let s = (0.5 * self.wavenumber(mi[a]) * h).sin();
                4.0 * s * s / (h * h)
            })
            .sum()
    }

    pub fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// In-place n-dimensional FFT over the grid layout. The inverse is scaled by
/// `1/len` so that `inverse(forward(x)) == x`.
pub fn fft_nd(grid: &Grid, data: &mut [Complex64], inverse: bool) {
    let n = grid.points();
    let fft = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    });
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let total = grid.len();
    for axis in 0..grid.dim() {
        let stride = grid.stride(axis);
        for start in 0..total {
            if (start / stride) % n != 0 {
                continue;
            }
            for (k, slot) in line.iter_mut().enumerate() {
                *slot = data[start + k * stride];
            }
            fft.process_with_scratch(&mut line, &mut scratch);
            for (k, v) in line.iter().enumerate() {
                data[start + k * stride] = *v;
            }
        }
    }
    if inverse {
        let scale = 1.0 / total as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

/// Forward transform of a real field.
pub fn forward(grid: &Grid, field: &[f64]) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_nd(grid, &mut data, false);
    data
}

/// Inverse transform, keeping the real part.
pub fn inverse_real(grid: &Grid, mut data: Vec<Complex64>) -> Vec<f64> {
    fft_nd(grid, &mut data, true);
    data.into_iter().map(|c| c.re).collect()
}

/// Applies a Fourier multiplier given as a function of the flat spectral index.
pub fn apply_multiplier(grid: &Grid, field: &[f64], multiplier: impl Fn(usize) -> Complex64) -> Vec<f64> {
    let mut spec = forward(grid, field);
    for (idx, v) in spec.iter_mut().enumerate() {
        *v *= multiplier(idx);
    }
    inverse_real(grid, spec)
}

/// Sum with a fixed chunking so the result does not depend on the worker count.
pub fn ordered_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    const CHUNK: usize = 256;
    let mut partials = Vec::new();
    let mut acc = 0.0;
    let mut count = 0;
    for v in values {
        acc += v;
        count += 1;
        if count == CHUNK {
            partials.push(acc);
            acc = 0.0;
            count = 0;
        }
    }
    partials.push(acc);
    pairwise(&partials)
}

fn pairwise(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => pairwise(&xs[..n / 2]) + pairwise(&xs[n / 2..]),
    }
}

/// A Euclidean ball. Balls never wrap around the torus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: &[f64], radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::Geometry(format!("ball radius must be positive, got {radius}")));
        }
        if center.len() > 3 || center.iter().any(|c| !c.is_finite()) {
            return Err(Error::Geometry(format!("bad ball center {center:?}")));
        }
        let mut c = [0.0; 3];
        c[..center.len()].copy_from_slice(center);
        Ok(Self { center: c, radius })
    }

    pub fn dilate(&self, factor: f64) -> Ball {
        Ball { center: self.center, radius: self.radius * factor }
    }

    pub fn with_radius(&self, radius: f64) -> Ball {
        Ball { center: self.center, radius }
    }

    pub fn distance(&self, grid: &Grid, p: &Point) -> f64 {
        (0..grid.dim()).map(|a| (p[a] - self.center[a]).powi(2)).sum::<f64>().sqrt()
    }

    pub fn contains(&self, grid: &Grid, p: &Point) -> bool {
        self.distance(grid, p) < self.radius
    }

    /// Whether the ball lies inside the box without wrapping.
    pub fn fits(&self, grid: &Grid) -> bool {
        (0..grid.dim()).all(|a| self.center[a].abs() + self.radius <= grid.half_len() + 1e-12)
    }

    /// Largest radius (up to `wanted`) centered here that still fits.
    pub fn max_fitting_radius(&self, grid: &Grid) -> f64 {
        (0..grid.dim()).map(|a| grid.half_len() - self.center[a].abs()).fold(f64::INFINITY, f64::min)
    }

    pub fn ensure_fits(&self, grid: &Grid) -> Result<()> {
        if !self.fits(grid) {
            return Err(Error::Geometry(format!(
                "ball {:?} r={} wraps around the periodic box",
                &self.center[..grid.dim()],
                self.radius
            )));
        }
        Ok(())
    }

    /// Flat indices of grid cells whose centers lie strictly inside the ball.
    pub fn cells(&self, grid: &Grid) -> Vec<usize> {
        let h = grid.spacing();
        let l = grid.half_len();
        let n = grid.points() as isize;
        let mut lo = [0isize; 3];
        let mut hi = [0isize; 3];
        for a in 0..grid.dim() {
            lo[a] = (((self.center[a] - self.radius + l) / h - 0.5).floor() as isize).max(0);
            hi[a] = (((self.center[a] + self.radius + l) / h - 0.5).ceil() as isize).min(n - 1);
        }
        let mut out = Vec::new();
        let mut mi = [0usize; 3];
        collect_box(grid, &lo, &hi, 0, &mut mi, &mut |mi| {
            let idx = grid.flat_index(mi);
            if self.contains(grid, &grid.point(idx)) {
                out.push(idx);
            }
        });
        out.sort_unstable();
        out
    }

    pub fn volume(&self, grid: &Grid) -> f64 {
        self.cells(grid).len() as f64 * grid.cell_volume()
    }

    /// Membership mask over the whole grid.
    pub fn mask(&self, grid: &Grid) -> Vec<bool> {
        let mut m = vec![false; grid.len()];
        for i in self.cells(grid) {
            m[i] = true;
        }
        m
    }
}

fn collect_box(
    grid: &Grid,
    lo: &[isize; 3],
    hi: &[isize; 3],
    axis: usize,
    mi: &mut [usize; 3],
    f: &mut impl FnMut(&[usize; 3]),
) {
    if axis == grid.dim() {
        f(mi);
        return;
    }
    let mut i = lo[axis];
    while i <= hi[axis] {
        mi[axis] = i as usize;
        collect_box(grid, lo, hi, axis + 1, mi, f);
        i += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_odd_or_tiny_grids() {
        assert!(Grid::new(2, 63, 4.0).is_err());
        assert!(Grid::new(4, 64, 4.0).is_err());
        assert!(Grid::new(2, 64, 0.0).is_err());
    }

    #[test]
    fn shift_wraps_periodically() {
        let g = Grid::new(2, 8, 1.0).unwrap();
        let idx = g.flat_index(&[7, 3]);
        assert_eq!(g.multi_index(g.shift(idx, 0, 1)), [0, 3, 0]);
        assert_eq!(g.multi_index(g.shift(idx, 1, -4)), [7, 7, 0]);
        assert_eq!(g.multi_index(g.shift_by(idx, &[2, 1, 0])), [1, 4, 0]);
    }

    #[test]
    fn fft_round_trip() {
        let g = Grid::new(3, 8, 2.0).unwrap();
        let f: Vec<f64> = (0..g.len()).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let back = inverse_real(&g, forward(&g, &f));
        for (a, b) in f.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ball_cells_match_brute_force() {
        let g = Grid::default_2d();
        let b = Ball::new(&[0.3, -1.1], 1.37).unwrap();
        let brute: Vec<usize> = (0..g.len()).filter(|&i| b.contains(&g, &g.point(i))).collect();
        assert_eq!(b.cells(&g), brute);
        assert!(b.fits(&g));
        assert!(!Ball::new(&[3.5, 0.0], 1.0).unwrap().fits(&g));
    }

    #[test]
    fn ordered_sum_is_chunk_stable() {
        let xs: Vec<f64> = (0..10_000).map(|i| (i as f64).sin()).collect();
        let a = ordered_sum(xs.iter().copied());
        let b = ordered_sum(xs.clone());
        assert_eq!(a.to_bits(), b.to_bits());
        assert!((a - xs.iter().sum::<f64>()).abs() < 1e-9);
    }
}
