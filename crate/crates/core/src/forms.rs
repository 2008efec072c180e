//! Differential forms on the periodic grid.
//!
//! Derivatives are forward differences acting as the cochain coboundary, so
//! `d∘d = 0`, adjointness of `d` and `δ`, and compact supports all hold
//! exactly. The Hodge Laplacian `dδ + δd` is the positive operator
//! `-Σ D⁺_j D⁻_j` applied to each component.

use std::io::{Read, Write};
use std::ops::{Add, Mul, Sub};

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{apply_multiplier, ordered_sum, Grid};

/// Bitmask of an increasing index tuple; bit `i` set means `dx_i` is present.
pub type Tuple = u32;

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// All increasing `degree`-tuples of `0..dim` in lexicographic order.
pub fn tuples(dim: usize, degree: usize) -> Vec<Tuple> {
    fn rec(dim: usize, left: usize, start: usize, acc: Tuple, out: &mut Vec<Tuple>) {
        if left == 0 {
            out.push(acc);
            return;
        }
        for i in start..dim {
            rec(dim, left - 1, i + 1, acc | (1 << i), out);
        }
    }
    let mut out = Vec::new();
    rec(dim, degree, 0, 0, &mut out);
    out
}

pub fn tuple_indices(t: Tuple) -> Vec<usize> {
    (0..32).filter(|i| t & (1 << i) != 0).collect()
}

pub fn tuple_from(indices: &[usize]) -> Tuple {
    indices.iter().fold(0, |acc, &i| acc | (1 << i))
}

/// Sign of `e^I ∧ e^J` relative to `e^{I∪J}`; zero when they overlap.
pub fn merge_sign(a: Tuple, b: Tuple) -> f64 {
    if a & b != 0 {
        return 0.0;
    }
    let mut inversions = 0;
    for j in tuple_indices(b) {
        inversions += (a >> (j + 1)).count_ones();
    }
    if inversions % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Form {
    grid: Grid,
    degree: usize,
    components: Vec<Vec<f64>>,
}

impl Form {
    pub fn zeros(grid: Grid, degree: usize) -> Result<Self> {
        if degree > grid.dim() {
            return Err(Error::Degree(format!("degree {degree} exceeds dimension {}", grid.dim())));
        }
        let count = binomial(grid.dim(), degree);
        Ok(Self { grid, degree, components: vec![vec![0.0; grid.len()]; count] })
    }

    pub fn from_components(grid: Grid, degree: usize, components: Vec<Vec<f64>>) -> Result<Self> {
        if degree > grid.dim() {
            return Err(Error::Degree(format!("degree {degree} exceeds dimension {}", grid.dim())));
        }
        if components.len() != binomial(grid.dim(), degree) || components.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::Input(format!(
                "expected {} components of length {}",
                binomial(grid.dim(), degree),
                grid.len()
            )));
        }
        Ok(Self { grid, degree, components })
    }

    pub fn scalar(grid: Grid, values: Vec<f64>) -> Result<Self> {
        Self::from_components(grid, 0, vec![values])
    }

    /// Top-degree form `values dx_1∧…∧dx_n`.
    pub fn top(grid: Grid, values: Vec<f64>) -> Result<Self> {
        Self::from_components(grid, grid.dim(), vec![values])
    }

    /// Single-term form `values dx_I`.
    pub fn monomial(grid: Grid, tuple: Tuple, values: Vec<f64>) -> Result<Self> {
        let degree = tuple.count_ones() as usize;
        let mut f = Self::zeros(grid, degree)?;
        let slot = f.slot(tuple)?;
        if values.len() != grid.len() {
            return Err(Error::Input("component length does not match grid".into()));
        }
        f.components[slot] = values;
        Ok(f)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn tuples(&self) -> Vec<Tuple> {
        tuples(self.grid.dim(), self.degree)
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn components_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.components
    }

    pub fn into_components(self) -> Vec<Vec<f64>> {
        self.components
    }

    pub fn slot(&self, tuple: Tuple) -> Result<usize> {
        self.tuples()
            .iter()
            .position(|&t| t == tuple)
            .ok_or_else(|| Error::Degree(format!("tuple {tuple:#b} not of degree {}", self.degree)))
    }

    pub fn component(&self, tuple: Tuple) -> Result<&[f64]> {
        Ok(&self.components[self.slot(tuple)?])
    }

    pub fn map_components(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Form {
        Form { grid: self.grid, degree: self.degree, components: self.components.iter().map(|c| f(c)).collect() }
    }

    pub fn scale(&self, c: f64) -> Form {
        self.map_components(|v| v.iter().map(|x| c * x).collect())
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &Form) -> Result<()> {
        self.ensure_compatible(other)?;
        for (a, b) in self.components.iter_mut().zip(&other.components) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += c * y;
            }
        }
        Ok(())
    }

    /// Multiplies every component pointwise by a scalar field.
    pub fn multiply(&self, field: &[f64]) -> Form {
        self.map_components(|v| v.iter().zip(field).map(|(a, b)| a * b).collect())
    }

    pub fn ensure_compatible(&self, other: &Form) -> Result<()> {
        self.grid.ensure_same(&other.grid)?;
        if self.degree != other.degree {
            return Err(Error::Degree(format!("degree {} vs {}", self.degree, other.degree)));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().flatten().all(|v| v.is_finite())
    }

    /// Pointwise Euclidean norm across components.
    pub fn pointwise_norm(&self) -> Vec<f64> {
        (0..self.grid.len()).map(|i| self.components.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt()).collect()
    }

    /// Grid inner product `Σ_I Σ_x f_I g_I` times the cell volume.
    pub fn inner(&self, other: &Form) -> Result<f64> {
        self.ensure_compatible(other)?;
        let vol = self.grid.cell_volume();
        Ok(vol
            * ordered_sum(
                self.components.iter().zip(&other.components).flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y)),
            ))
    }

    pub fn l2_norm(&self) -> f64 {
        self.inner(self).unwrap_or(0.0).max(0.0).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.components.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Grid integral of each component.
    pub fn integrals(&self) -> Vec<f64> {
        let vol = self.grid.cell_volume();
        self.components.iter().map(|c| vol * ordered_sum(c.iter().copied())).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        let n = self.grid.len() as f64;
        self.components.iter().map(|c| ordered_sum(c.iter().copied()) / n).collect()
    }

    pub fn remove_means(&self) -> Form {
        let means = self.means();
        let mut out = self.clone();
        for (c, m) in out.components.iter_mut().zip(means) {
            for v in c.iter_mut() {
                *v -= m;
            }
        }
        out
    }

    /// Zeroes every component outside `mask`.
    pub fn restrict(&self, mask: &[bool]) -> Form {
        self.map_components(|v| v.iter().zip(mask).map(|(x, &m)| if m { *x } else { 0.0 }).collect())
    }

    /// L² mass outside `mask` relative to the total.
    pub fn leak_outside(&self, mask: &[bool]) -> f64 {
        let total = self.l2_norm();
        if total == 0.0 {
            return 0.0;
        }
        let outside = self.restrict(&mask.iter().map(|m| !m).collect::<Vec<_>>());
        outside.l2_norm() / total
    }

    /// Cells where some component is non-zero.
    pub fn support(&self) -> Vec<bool> {
        (0..self.grid.len()).map(|i| self.components.iter().any(|c| c[i] != 0.0)).collect()
    }
}

impl Add for &Form {
    type Output = Form;
    fn add(self, rhs: &Form) -> Form {
        let mut out = self.clone();
        out.axpy(1.0, rhs).expect("incompatible forms in addition");
        out
    }
}

impl Sub for &Form {
    type Output = Form;
    fn sub(self, rhs: &Form) -> Form {
        let mut out = self.clone();
        out.axpy(-1.0, rhs).expect("incompatible forms in subtraction");
        out
    }
}

impl Mul<f64> for &Form {
    type Output = Form;
    fn mul(self, rhs: f64) -> Form {
        self.scale(rhs)
    }
}

/// Forward difference along `axis`.
pub fn diff_forward(grid: &Grid, v: &[f64], axis: usize) -> Vec<f64> {
    let h = grid.spacing();
    (0..grid.len()).map(|i| (v[grid.shift(i, axis, 1)] - v[i]) / h).collect()
}

/// Backward difference along `axis`.
pub fn diff_backward(grid: &Grid, v: &[f64], axis: usize) -> Vec<f64> {
    let h = grid.spacing();
    (0..grid.len()).map(|i| (v[i] - v[grid.shift(i, axis, -1)]) / h).collect()
}

/// Exterior derivative.
pub fn exterior_derivative(f: &Form) -> Result<Form> {
    let grid = *f.grid();
    let n = grid.dim();
    if f.degree() >= n {
        return Err(Error::Degree(format!("d of a top-degree form (degree {})", f.degree())));
    }
    let src = f.tuples();
    let dst = tuples(n, f.degree() + 1);
    let mut out = Form::zeros(grid, f.degree() + 1)?;
    for (slot, &k) in dst.iter().enumerate() {
        let mut acc = vec![0.0; grid.len()];
        for j in tuple_indices(k) {
            let rest = k & !(1 << j);
            let sign = merge_sign(1 << j, rest);
            let si = src.iter().position(|&t| t == rest).expect("tuple present");
            let dv = diff_forward(&grid, &f.components()[si], j);
            for (a, b) in acc.iter_mut().zip(dv) {
                *a += sign * b;
            }
        }
        out.components_mut()[slot] = acc;
    }
    Ok(out)
}

/// Codifferential, the grid adjoint of [`exterior_derivative`].
pub fn codifferential(f: &Form) -> Result<Form> {
    let grid = *f.grid();
    let n = grid.dim();
    if f.degree() == 0 {
        return Err(Error::Degree("codifferential of a 0-form".into()));
    }
    let src = f.tuples();
    let dst = tuples(n, f.degree() - 1);
    let mut out = Form::zeros(grid, f.degree() - 1)?;
    for (slot, &i) in dst.iter().enumerate() {
        let mut acc = vec![0.0; grid.len()];
        for j in (0..n).filter(|j| i & (1 << j) == 0) {
            let sign = merge_sign(1 << j, i);
            let si = src.iter().position(|&t| t == i | (1 << j)).expect("tuple present");
            let dv = diff_backward(&grid, &f.components()[si], j);
            for (a, b) in acc.iter_mut().zip(dv) {
                *a -= sign * b;
            }
        }
        out.components_mut()[slot] = acc;
    }
    Ok(out)
}

/// `dδ + δd`, positive semidefinite.
pub fn hodge_laplacian(f: &Form) -> Result<Form> {
    let n = f.grid().dim();
    let mut out = Form::zeros(*f.grid(), f.degree())?;
    if f.degree() > 0 {
        out.axpy(1.0, &exterior_derivative(&codifferential(f)?)?)?;
    }
    if f.degree() < n {
        out.axpy(1.0, &codifferential(&exterior_derivative(f)?)?)?;
    }
    Ok(out)
}

/// `-Σ D⁺_j D⁻_j` on one scalar field.
pub fn scalar_laplacian(grid: &Grid, v: &[f64]) -> Vec<f64> {
    let h2 = grid.spacing().powi(2);
    (0..grid.len())
        .map(|i| (0..grid.dim()).map(|a| (2.0 * v[i] - v[grid.shift(i, a, 1)] - v[grid.shift(i, a, -1)]) / h2).sum())
        .collect()
}

/// Pointwise graded-commutative product.
pub fn wedge(f: &Form, g: &Form) -> Result<Form> {
    product(f, g, false)
}

/// Cochain cup product: `(f∪g)_{I∪J}(x) = ±f_I(x) g_J(x + hΣ_{i∈I} e_i)`.
/// Satisfies `d(f∪g) = df∪g + (-1)^ℓ f∪dg` exactly.
pub fn cup(f: &Form, g: &Form) -> Result<Form> {
    product(f, g, true)
}

fn product(f: &Form, g: &Form, shifted: bool) -> Result<Form> {
    f.grid().ensure_same(g.grid())?;
    let grid = *f.grid();
    let degree = f.degree() + g.degree();
    if degree > grid.dim() {
        return Err(Error::Degree(format!("wedge degree {degree} exceeds dimension {}", grid.dim())));
    }
    let mut out = Form::zeros(grid, degree)?;
    let dst = out.tuples();
    for (fi, &a) in f.tuples().iter().enumerate() {
        let mut offset = [0isize; 3];
        if shifted {
            for i in tuple_indices(a) {
                offset[i] = 1;
            }
        }
        for (gi, &b) in g.tuples().iter().enumerate() {
            let sign = merge_sign(a, b);
            if sign == 0.0 {
                continue;
            }
            let slot = dst.iter().position(|&t| t == a | b).expect("tuple present");
            let fa = &f.components()[fi];
            let gb = &g.components()[gi];
            let acc = &mut out.components_mut()[slot];
            for (x, v) in acc.iter_mut().enumerate() {
                let y = if shifted { grid.shift_by(x, &offset) } else { x };
                *v += sign * fa[x] * gb[y];
            }
        }
    }
    Ok(out)
}

/// Fourier symbol of the difference Laplacian, so that the inverse is exact
/// for [`hodge_laplacian`].
fn laplacian_multiplier(grid: &Grid, idx: usize, power: f64) -> f64 {
    let s = grid.laplacian_symbol(idx);
    if idx == 0 || s == 0.0 {
        0.0
    } else {
        s.powf(-power)
    }
}

/// `Δ^{-power}` with `power` 1 or 1/2, componentwise on zero-mean input.
pub fn inv_laplacian(f: &Form, power: f64) -> Result<Form> {
    if power != 1.0 && power != 0.5 {
        return Err(Error::Input(format!("inverse Laplacian power must be 1 or 1/2, got {power}")));
    }
    let scale = f.max_abs().max(f64::MIN_POSITIVE);
    for m in f.means() {
        if m.abs() > 1e-10 * scale {
            return Err(Error::Domain(format!("inverse Laplacian of a field with mean {m:e}")));
        }
    }
    let grid = *f.grid();
    Ok(f.map_components(|v| {
        apply_multiplier(&grid, v, |idx| Complex64::new(laplacian_multiplier(&grid, idx, power), 0.0))
    }))
}

/// `Δ^{power}` on the difference symbol, the inverse of [`inv_laplacian`] on
/// zero-mean fields.
pub fn laplacian_power(f: &Form, power: f64) -> Form {
    let grid = *f.grid();
    f.map_components(|v| apply_multiplier(&grid, v, |idx| Complex64::new(grid.laplacian_symbol(idx).powf(power), 0.0)))
}

/// Riesz transform `-iκ_j/|κ|` along `axis`. Modes touching a Nyquist index
/// have no real antisymmetric counterpart and are set to zero.
pub fn riesz_transform(grid: &Grid, axis: usize, v: &[f64]) -> Result<Vec<f64>> {
    if axis >= grid.dim() {
        return Err(Error::Input(format!("axis {axis} out of range")));
    }
    Ok(apply_multiplier(grid, v, |idx| {
        let mi = grid.multi_index(idx);
        if idx == 0 || (0..grid.dim()).any(|a| grid.is_nyquist(mi[a])) {
            return Complex64::new(0.0, 0.0);
        }
        let k: f64 = (0..grid.dim()).map(|a| grid.wavenumber(mi[a]).powi(2)).sum::<f64>().sqrt();
        Complex64::new(0.0, -grid.wavenumber(mi[axis]) / k)
    }))
}

#[derive(Clone, Debug)]
pub struct HodgeSplit {
    /// `dδΔ⁻¹f`, closed.
    pub exact: Form,
    /// `δdΔ⁻¹f`, co-closed.
    pub coexact: Form,
    /// Componentwise mean, as a constant form.
    pub harmonic: Form,
}

pub fn hodge_split(f: &Form) -> Result<HodgeSplit> {
    let n = f.grid().dim();
    let centered = f.remove_means();
    let potential = inv_laplacian(&centered, 1.0)?;
    let zero = Form::zeros(*f.grid(), f.degree())?;
    let exact = if f.degree() > 0 { exterior_derivative(&codifferential(&potential)?)? } else { zero.clone() };
    let coexact = if f.degree() < n { codifferential(&exterior_derivative(&potential)?)? } else { zero };
    let harmonic = f - &centered;
    Ok(HodgeSplit { exact, coexact, harmonic })
}

const MAGIC: &[u8; 4] = b"DFF1";

/// Writes the little-endian `.dff` payload.
pub fn write_dff(f: &Form, mut w: impl Write) -> Result<()> {
    let g = f.grid();
    w.write_all(MAGIC)?;
    for v in [g.dim() as u32, f.degree() as u32, g.points() as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&g.half_len().to_le_bytes())?;
    let mut buf = Vec::with_capacity(8 * g.len() * f.components().len());
    for c in f.components() {
        for v in c {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_dff(mut r: impl Read) -> Result<Form> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("missing DFF1 magic".into()));
    }
    let mut u = [0u8; 4];
    let mut header = [0u32; 3];
    for slot in header.iter_mut() {
        r.read_exact(&mut u)?;
        *slot = u32::from_le_bytes(u);
    }
    let mut d = [0u8; 8];
    r.read_exact(&mut d)?;
    let half_len = f64::from_le_bytes(d);
    let grid = Grid::new(header[0] as usize, header[2] as usize, half_len)
        .map_err(|e| Error::Format(format!("bad dff header: {e}")))?;
    let degree = header[1] as usize;
    if degree > grid.dim() {
        return Err(Error::Format(format!("bad dff degree {degree}")));
    }
    let count = binomial(grid.dim(), degree);
    let mut bytes = vec![0u8; 8 * count * grid.len()];
    r.read_exact(&mut bytes)?;
    let values: Vec<f64> =
        bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    let components = values.chunks(grid.len()).map(|c| c.to_vec()).collect();
    Form::from_components(grid, degree, components)
}

pub fn save_dff(f: &Form, path: &std::path::Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_dff(f, std::io::BufWriter::new(file))
}

pub fn load_dff(path: &std::path::Path) -> Result<Form> {
    let file = std::fs::File::open(path)?;
    read_dff(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(grid: &Grid, seed: u64) -> Vec<f64> {
        (0..grid.len())
            .map(|i| {
                let x = (i as u64).wrapping_mul(6364136223846793005).wrapping_add(seed);
                ((x >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn tuple_order_is_lexicographic() {
        assert_eq!(tuples(3, 2), vec![0b011, 0b101, 0b110]);
        assert_eq!(tuples(3, 0), vec![0]);
        assert_eq!(binomial(3, 2), 3);
    }

    #[test]
    fn merge_signs() {
        assert_eq!(merge_sign(0b001, 0b010), 1.0);
        assert_eq!(merge_sign(0b010, 0b001), -1.0);
        assert_eq!(merge_sign(0b010, 0b101), -1.0);
        assert_eq!(merge_sign(0b001, 0b001), 0.0);
    }

    #[test]
    fn wedge_of_coordinate_forms() {
        let g = Grid::new(2, 8, 1.0).unwrap();
        let f = field(&g, 1);
        let h = field(&g, 2);
        let a = Form::monomial(g, 0b01, f.clone()).unwrap();
        let b = Form::monomial(g, 0b10, h.clone()).unwrap();
        let w = wedge(&a, &b).unwrap();
        for i in 0..g.len() {
            assert_eq!(w.components()[0][i], f[i] * h[i]);
        }
        assert_eq!(wedge(&a, &a).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn dff_round_trip() {
        let g = Grid::new(3, 4, 1.5).unwrap();
        let comps = (0..3).map(|s| field(&g, s)).collect();
        let f = Form::from_components(g, 2, comps).unwrap();
        let mut buf = Vec::new();
        write_dff(&f, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"DFF1");
        assert_eq!(buf.len(), 4 + 12 + 8 + 8 * 3 * 64);
        assert_eq!(read_dff(&buf[..]).unwrap(), f);
        assert!(read_dff(&b"XXXX"[..]).is_err());
    }

    #[test]
    fn degree_errors() {
        let g = Grid::new(2, 8, 1.0).unwrap();
        let top = Form::top(g, vec![1.0; g.len()]).unwrap();
        assert!(exterior_derivative(&top).is_err());
        let s = Form::scalar(g, vec![1.0; g.len()]).unwrap();
        assert!(codifferential(&s).is_err());
        assert!(inv_laplacian(&s, 1.0).is_err());
    }
}
