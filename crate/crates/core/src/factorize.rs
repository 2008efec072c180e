//! Weak factorization of closed forms into wedge products of an `H¹` factor
//! and a BMO factor.
//!
//! A closed atom `𝔞 = d𝔟` splits along the components of its primitive:
//! `𝔞 = Σ_I d𝔟_I ∧ dx_I`. For each `I` with largest index `k`,
//! `dx_I = σ dx_{I'} ∧ dx_k ∧ dx_{I''}` and
//!
//! ```text
//! u = σ d(G_k⁻¹ 𝔟_I) ∧ dx_{I'},    v = G_k dx_k ∧ dx_{I''},
//! ```
//!
//! where `G_k` depends on `x_k` only. Difference quotients along `x_j`,
//! `j ≠ k`, commute with multiplication by `G_k⁻¹`, and the `x_k` component
//! dies in the wedge with `dx_k`, so `u ∧ v = d𝔟_I ∧ dx_I` holds pointwise.
//! Both factors are closed: `u` is exact and `v` has `D_j G_k = 0` for
//! `j ≠ k`. When the projected support of `𝔟` is small and away from the
//! origin (case I), `G_k` is a truncated logarithm that is constant there,
//! so `u` is `γ_k⁻¹` times a fixed exact form; otherwise (case II)
//! `G_k = log(e + x_k²)`.

use std::collections::HashMap;
use std::f64::consts::E;
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::atoms::{size_ratio, validate_atom, Atom, AtomTolerances, Validation};
use crate::bmo::{bmo_plus_norm, dyadic_balls};
use crate::decompose::{closed_atomic_decompose, DecomposeOptions};
use crate::error::{Error, Result};
use crate::forms::{
    binomial, diff_forward, exterior_derivative, merge_sign, save_dff, tuple_from, tuple_indices, tuples, wedge, Form,
    Tuple,
};
use crate::grid::{ordered_sum, Ball, Grid};
use crate::growth::{AdmissibleTriple, GrowthFunction};
use crate::maximal::{h1_norm, hlog_norm};
use crate::primitive::{local_primitive, Primitive, PrimitiveOptions};

/// Number of pairs in the factorization of one atom of degree `ℓ + m`.
pub fn pair_count(n: usize, l: usize, m: usize) -> usize {
    binomial(n, l + m - 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BallCase {
    I,
    II,
}

/// One-dimensional BMO factor along an axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum AxisFactor {
    /// `min(log(e + 2|x|), log(e + |c|))`, used when `1/r ≤ |c|/2`.
    Far { center: f64, gamma: f64 },
    /// `min(log(e + |x - c|⁻¹), log(e + r⁻¹))`.
    Near { center: f64, radius: f64, gamma: f64 },
    /// `log(e + x²)`.
    Growing,
}

impl AxisFactor {
    pub fn case(&self) -> BallCase {
        match self {
            AxisFactor::Growing => BallCase::II,
            _ => BallCase::I,
        }
    }

    /// Value on the projected ball, where case-I factors are constant.
    pub fn gamma(&self) -> Option<f64> {
        match *self {
            AxisFactor::Far { gamma, .. } | AxisFactor::Near { gamma, .. } => Some(gamma),
            AxisFactor::Growing => None,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            AxisFactor::Far { gamma, .. } => (E + 2.0 * x.abs()).ln().min(gamma),
            AxisFactor::Near { center, gamma, .. } => (E + 1.0 / (x - center).abs()).ln().min(gamma),
            AxisFactor::Growing => (E + x * x).ln(),
        }
    }

    /// Samples `G(x_axis)` on the grid.
    pub fn sample(&self, grid: &Grid, axis: usize) -> Vec<f64> {
        (0..grid.len()).map(|i| self.eval(grid.point(i)[axis])).collect()
    }

    fn key(&self, axis: usize) -> (usize, u8, u64, u64) {
        match *self {
            AxisFactor::Far { center, .. } => (axis, 0, center.to_bits(), 0),
            AxisFactor::Near { center, radius, .. } => (axis, 1, center.to_bits(), radius.to_bits()),
            AxisFactor::Growing => (axis, 2, 0, 0),
        }
    }
}

/// Case-I factor for the one-dimensional ball `|x - center| < radius`.
pub fn axis_factor_case1(center: f64, radius: f64) -> Result<AxisFactor> {
    if !(radius > 0.0) || !center.is_finite() {
        return Err(Error::Input(format!("bad projected ball ({center}, {radius})")));
    }
    if radius > 1.0f64.min(center.abs() / 2.0) {
        return Err(Error::Geometry(format!(
            "projected ball ({center}, {radius}) violates r ≤ min(1, |c|/2); use case II"
        )));
    }
    if 1.0 / radius <= center.abs() / 2.0 {
        Ok(AxisFactor::Far { center, gamma: (E + center.abs()).ln() })
    } else {
        Ok(AxisFactor::Near { center, radius, gamma: (E + 1.0 / radius).ln() })
    }
}

/// Case-I BMO factor `(G_k, γ_k)` of `ball` along `axis`.
pub fn bmo_factor_case1(grid: &Grid, ball: &Ball, axis: usize) -> Result<(Vec<f64>, f64)> {
    if axis >= grid.dim() {
        return Err(Error::Input(format!("axis {axis} out of range")));
    }
    let f = axis_factor_case1(ball.center[axis], ball.radius)?;
    Ok((f.sample(grid, axis), f.gamma().expect("case-I factor")))
}

/// Lower bound `log(e + |c|) + |log r|` that `γ` dominates up to a constant.
pub fn gamma_lower_bound(center: f64, radius: f64) -> f64 {
    (E + center.abs()).ln() + radius.ln().abs()
}

/// Per-axis choice used by the factorization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CasePolicy {
    /// Case I where the projected support allows it, case II elsewhere.
    Auto,
    /// Case I on every axis used; geometry errors otherwise.
    CaseI,
    /// Case II on every axis.
    CaseII,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorizeOptions {
    pub primitive: PrimitiveOptions,
    pub decompose: DecomposeOptions,
    pub atoms: AtomTolerances,
    /// Integrability exponent of case-I `H¹` atoms.
    pub q: f64,
    /// Integrability exponent of case-II `H¹` atoms, in `(1, q)`.
    pub r: f64,
    /// Bisection tolerance of the Hardy norms.
    pub norm_tol: f64,
    pub policy: CasePolicy,
}

impl Default for FactorizeOptions {
    fn default() -> Self {
        Self {
            primitive: PrimitiveOptions::default(),
            decompose: DecomposeOptions::default(),
            atoms: AtomTolerances::default(),
            q: 2.0,
            r: 1.5,
            norm_tol: 1e-8,
            policy: CasePolicy::Auto,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FactorPair {
    pub u: Form,
    pub v: Form,
    /// Primitive component the pair comes from and the axis of `G_k`.
    pub tuple: Tuple,
    pub axis: usize,
    pub factor: AxisFactor,
    pub h1_u: f64,
    pub bmo_plus_v: f64,
    /// `‖u ∧ v - d𝔟_I ∧ dx_I‖₂ / ‖𝔞‖₂`.
    pub residual: f64,
    pub u_validation: Option<Validation>,
}

impl FactorPair {
    pub fn product(&self) -> Result<Form> {
        wedge(&self.u, &self.v)
    }
}

#[derive(Clone, Debug)]
pub struct AtomFactorization {
    pub pairs: Vec<FactorPair>,
    /// `‖Σ u ∧ v - 𝔞‖₂ / ‖𝔞‖₂`.
    pub residual: f64,
    pub primitive_residual: f64,
    pub primitive_size: f64,
    /// `Σ ‖u‖_{H¹} ‖v‖_{BMO⁺}`.
    pub norm_sum: f64,
}

/// Shared state of a factorization run: the ball family and cached BMO⁺
/// norms of the axis factors.
pub struct FactorContext {
    grid: Grid,
    balls: Vec<Ball>,
    cache: Mutex<HashMap<(usize, u8, u64, u64), f64>>,
    h1: GrowthFunction,
}

impl FactorContext {
    pub fn new(grid: Grid) -> Result<Self> {
        Ok(Self { grid, balls: dyadic_balls(&grid), cache: Mutex::default(), h1: GrowthFunction::power(1.0)? })
    }

    pub fn balls(&self) -> &[Ball] {
        &self.balls
    }

    /// `‖G(x_axis)‖_{BMO⁺}`, cached.
    pub fn factor_bmo_plus(&self, factor: &AxisFactor, axis: usize) -> Result<f64> {
        let key = factor.key(axis);
        if let Some(v) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(*v);
        }
        let g = Form::scalar(self.grid, factor.sample(&self.grid, axis))?;
        let value = bmo_plus_norm(&g, &self.balls)?;
        self.cache.lock().expect("cache lock").insert(key, value);
        Ok(value)
    }
}

/// Smallest interval `center ± radius` along `axis` containing the support.
fn projected_support(form: &Form, axis: usize) -> Option<(f64, f64)> {
    let grid = form.grid();
    let support = form.support();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, &s) in support.iter().enumerate() {
        if s {
            let x = grid.point(i)[axis];
            lo = lo.min(x);
            hi = hi.max(x);
        }
    }
    (lo <= hi).then(|| (0.5 * (lo + hi), 0.5 * (hi - lo) + 0.5 * grid.spacing()))
}

fn choose_factor(beta: &Form, axis: usize, policy: CasePolicy) -> Result<AxisFactor> {
    if policy == CasePolicy::CaseII {
        return Ok(AxisFactor::Growing);
    }
    let Some((c, r)) = projected_support(beta, axis) else {
        return Ok(AxisFactor::Growing);
    };
    match (axis_factor_case1(c, r), policy) {
        (Ok(f), _) => Ok(f),
        (Err(_), CasePolicy::Auto) => Ok(AxisFactor::Growing),
        (Err(e), _) => Err(e),
    }
}

/// Factors a closed atom of degree `ℓ + m` into `C(n, ℓ+m-1)` pairs.
pub fn factor_atom(
    ctx: &FactorContext,
    atom: &Form,
    ball: &Ball,
    l: usize,
    m: usize,
    opts: &FactorizeOptions,
) -> Result<AtomFactorization> {
    let grid = *atom.grid();
    grid.ensure_same(&ctx.grid)?;
    let n = grid.dim();
    if l == 0 || m == 0 || l + m > n {
        return Err(Error::Degree(format!("need ℓ, m ≥ 1 and ℓ + m ≤ {n}, got ℓ={l}, m={m}")));
    }
    if atom.degree() != l + m {
        return Err(Error::Degree(format!("atom degree {} differs from ℓ + m = {}", atom.degree(), l + m)));
    }
    if !(opts.r > 1.0 && opts.r < opts.q) {
        return Err(Error::Input(format!("case-II exponent r={} must lie in (1, {})", opts.r, opts.q)));
    }
    let norm = atom.l2_norm();
    let primitive: Primitive = local_primitive(atom, ball, &opts.primitive)?;
    let beta = &primitive.form;
    let u_ball = primitive.ball.with_radius(primitive.ball.radius + grid.spacing());

    let mut pairs = Vec::new();
    let mut total = Form::zeros(grid, l + m)?;
    for (slot, &tuple) in tuples(n, l + m - 1).iter().enumerate() {
        let idx = tuple_indices(tuple);
        let k = *idx.last().expect("non-empty tuple");
        let rest: Vec<usize> = idx.iter().copied().filter(|&j| j != k).collect();
        let (lead, tail) = rest.split_at(l - 1);
        let (lead, tail) = (tuple_from(lead), tuple_from(tail));
        let sign = merge_sign(lead, 1 << k) * merge_sign(lead | (1 << k), tail);

        let comp = Form::scalar(grid, beta.components()[slot].clone())?;
        let factor = choose_factor(&comp, k, opts.policy)?;
        let g = factor.sample(&grid, k);
        let scaled = Form::scalar(grid, comp.components()[0].iter().zip(&g).map(|(b, gk)| b / gk).collect())?;
        let u_raw =
            wedge(&exterior_derivative(&scaled)?, &Form::monomial(grid, lead, vec![1.0; grid.len()])?)?.scale(sign);
        let v_raw = Form::monomial(grid, (1 << k) | tail, g.iter().map(|gk| merge_sign(1 << k, tail) * gk).collect())?;

        let target = wedge(&exterior_derivative(&comp)?, &Form::monomial(grid, tuple, vec![1.0; grid.len()])?)?;
        let product = wedge(&u_raw, &v_raw)?;
        let residual = if norm > 0.0 { (&product - &target).l2_norm() / norm } else { 0.0 };
        total.axpy(1.0, &product)?;

        let exponent = if factor.case() == BallCase::I { opts.q } else { opts.r };
        let triple = AdmissibleTriple::new(ctx.h1.clone(), exponent, 0, n)?;
        let (u, v, u_validation) = if u_raw.max_abs() == 0.0 {
            (u_raw, v_raw, None)
        } else {
            let ratio = size_ratio(&u_raw, &u_ball, &triple, &opts.atoms)?;
            let u = u_raw.scale(1.0 / ratio);
            let check = Atom { form: u.clone(), ball: u_ball, triple, closed: true, validation: None };
            let validation = validate_atom(&check, &opts.atoms)?;
            (u, v_raw.scale(ratio), Some(validation))
        };
        let h1_u = h1_norm(&u, opts.norm_tol)?;
        let scale = v.max_abs() / g.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let bmo_plus_v = scale * ctx.factor_bmo_plus(&factor, k)?;
        pairs.push(FactorPair { u, v, tuple, axis: k, factor, h1_u, bmo_plus_v, residual, u_validation });
    }
    let residual = if norm > 0.0 { (&total - atom).l2_norm() / norm } else { 0.0 };
    let norm_sum = ordered_sum(pairs.iter().map(|p| p.h1_u * p.bmo_plus_v));
    Ok(AtomFactorization {
        pairs,
        residual,
        primitive_residual: primitive.residual,
        primitive_size: primitive.size,
        norm_sum,
    })
}

/// Case-I factorization; errors when an axis violates the case-I geometry.
pub fn factor_atom_case1(
    ctx: &FactorContext,
    atom: &Form,
    ball: &Ball,
    l: usize,
    m: usize,
    opts: &FactorizeOptions,
) -> Result<AtomFactorization> {
    factor_atom(ctx, atom, ball, l, m, &FactorizeOptions { policy: CasePolicy::CaseI, ..*opts })
}

/// Case-II factorization with `G_k = log(e + x_k²)` on every axis.
pub fn factor_atom_case2(
    ctx: &FactorContext,
    atom: &Form,
    ball: &Ball,
    l: usize,
    m: usize,
    opts: &FactorizeOptions,
) -> Result<AtomFactorization> {
    factor_atom(ctx, atom, ball, l, m, &FactorizeOptions { policy: CasePolicy::CaseII, ..*opts })
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Certificate {
    pub atoms: usize,
    pub pairs: usize,
    /// `Σ ‖u_k‖_{H¹} ‖v_k‖_{BMO⁺}`.
    pub norm_sum: f64,
    pub hlog_norm: f64,
    /// `norm_sum / hlog_norm`.
    pub ratio: f64,
    /// `‖Σ u_k ∧ v_k - f‖₂ / ‖f‖₂`.
    pub reconstruction_error: f64,
    pub decomposition_error: f64,
    pub max_atom_residual: f64,
    pub max_closed_residual: f64,
    pub case_counts: [usize; 2],
}

#[derive(Clone, Debug)]
pub struct WeakFactorization {
    pub pairs: Vec<FactorPair>,
    pub certificate: Certificate,
}

impl WeakFactorization {
    /// Writes `pairs/NNN_u.dff`, `pairs/NNN_v.dff` and `certificate.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let pairs_dir = dir.join("pairs");
        std::fs::create_dir_all(&pairs_dir)?;
        let mut entries = Vec::new();
        for (i, p) in self.pairs.iter().enumerate() {
            save_dff(&p.u, &pairs_dir.join(format!("{i:03}_u.dff")))?;
            save_dff(&p.v, &pairs_dir.join(format!("{i:03}_v.dff")))?;
            entries.push(PairEntry {
                index: i,
                axis: p.axis,
                case: p.factor.case(),
                factor: p.factor,
                h1_u: p.h1_u,
                bmo_plus_v: p.bmo_plus_v,
                residual: p.residual,
                u_valid: p.u_validation.as_ref().map(|v| v.passed),
            });
        }
        let doc = CertificateFile { totals: self.certificate.clone(), pairs: entries };
        std::fs::write(dir.join("certificate.json"), serde_json::to_string_pretty(&doc)?)?;
        Ok(())
    }
}

#[derive(Serialize)]
struct PairEntry {
    index: usize,
    axis: usize,
    case: BallCase,
    factor: AxisFactor,
    h1_u: f64,
    bmo_plus_v: f64,
    residual: f64,
    u_valid: Option<bool>,
}

#[derive(Serialize)]
struct CertificateFile {
    totals: Certificate,
    pairs: Vec<PairEntry>,
}

fn closed_residual(f: &Form) -> Result<f64> {
    if f.degree() == f.grid().dim() || f.max_abs() == 0.0 {
        return Ok(0.0);
    }
    Ok(exterior_derivative(f)?.l2_norm() * f.grid().spacing() / f.l2_norm())
}

/// Decomposes a closed form with the logarithmic growth function and factors
/// every atom into `(ℓ, m)` pairs.
pub fn weak_factorize(f: &Form, l: usize, m: usize, opts: &FactorizeOptions) -> Result<WeakFactorization> {
    let grid = *f.grid();
    if l + m != f.degree() {
        return Err(Error::Degree(format!("form degree {} differs from ℓ + m = {}", f.degree(), l + m)));
    }
    if l == 0 || m == 0 || l + m > grid.dim() {
        return Err(Error::Degree(format!("need ℓ, m ≥ 1 and ℓ + m ≤ {}, got ℓ={l}, m={m}", grid.dim())));
    }
    if f.max_abs() == 0.0 {
        return Ok(WeakFactorization { pairs: vec![], certificate: Certificate::default() });
    }
    let decomposition = closed_atomic_decompose(f, &GrowthFunction::theta(), &opts.decompose)?;
    let ctx = FactorContext::new(grid)?;
    let per_atom: Vec<AtomFactorization> = decomposition
        .atoms
        .par_iter()
        .map(|a| factor_atom(&ctx, &a.form, &a.ball, l, m, opts))
        .collect::<Result<_>>()?;

    let mut pairs = Vec::new();
    let mut total = Form::zeros(grid, f.degree())?;
    let mut cert = Certificate { atoms: per_atom.len(), ..Default::default() };
    for (fact, &w) in per_atom.into_iter().zip(&decomposition.weights) {
        cert.max_atom_residual = cert.max_atom_residual.max(fact.residual);
        for mut p in fact.pairs {
            p.v = p.v.scale(w);
            p.bmo_plus_v *= w.abs();
            total.axpy(1.0, &p.product()?)?;
            cert.max_closed_residual = cert.max_closed_residual.max(closed_residual(&p.u)?).max(closed_residual(&p.v)?);
            cert.case_counts[(p.factor.case() == BallCase::II) as usize] += 1;
            pairs.push(p);
        }
    }
    cert.pairs = pairs.len();
    cert.norm_sum = ordered_sum(pairs.iter().map(|p| p.h1_u * p.bmo_plus_v));
    cert.hlog_norm = hlog_norm(f, opts.norm_tol)?;
    cert.ratio = cert.norm_sum / cert.hlog_norm;
    cert.reconstruction_error = (&total - f).l2_norm() / f.l2_norm();
    cert.decomposition_error = decomposition.reconstruction_error;
    Ok(WeakFactorization { pairs, certificate: cert })
}

/// Scalar pair `u · v` with the div-free / curl-free vector fields it comes
/// from.
#[derive(Clone, Debug)]
pub struct ScalarPair {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct VectorPair {
    /// Divergence-free field `F_j = (-1)^{n-j} u_{Ĵ}` (1-based `j`).
    pub field: Vec<Vec<f64>>,
    /// Curl-free field with the single non-zero component `G_k`.
    pub gradient: Vec<Vec<f64>>,
    pub divergence_residual: f64,
    pub curl_residual: f64,
}

#[derive(Clone, Debug)]
pub struct ScalarFactorization {
    pub factorization: WeakFactorization,
    pub vector_pairs: Vec<VectorPair>,
    pub scalar_pairs: Vec<ScalarPair>,
    /// `‖Σ u v - f‖₂ / ‖f‖₂`.
    pub reconstruction_error: f64,
}

/// `‖Σ_j D⁺_j F_j‖₂ h / ‖F‖₂`.
pub fn divergence_residual(grid: &Grid, field: &[Vec<f64>]) -> f64 {
    let norm = field.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    let mut div = vec![0.0; grid.len()];
    for (j, c) in field.iter().enumerate() {
        for (d, v) in div.iter_mut().zip(diff_forward(grid, c, j)) {
            *d += v;
        }
    }
    div.iter().map(|v| v * v).sum::<f64>().sqrt() * grid.spacing() / norm
}

/// `max_{i<j} ‖D⁺_i G_j - D⁺_j G_i‖₂ h / ‖G‖₂`.
pub fn curl_residual(grid: &Grid, field: &[Vec<f64>]) -> f64 {
    let norm = field.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0f64;
    for i in 0..field.len() {
        for j in i + 1..field.len() {
            let a = diff_forward(grid, &field[j], i);
            let b = diff_forward(grid, &field[i], j);
            let r = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(r * grid.spacing() / norm);
        }
    }
    worst
}

/// Scalar factorization `f = Σ u_k v_k` through `(n-1, 1)` pairs of the
/// top-degree form `f dx_1 ∧ … ∧ dx_n`.
pub fn scalar_weak_factorize(grid: &Grid, f: &[f64], opts: &FactorizeOptions) -> Result<ScalarFactorization> {
    let n = grid.dim();
    if n < 2 {
        return Err(Error::Degree("scalar factorization needs n ≥ 2".into()));
    }
    let top = Form::top(*grid, f.to_vec())?;
    let factorization = weak_factorize(&top, n - 1, 1, opts)?;
    let full = tuple_from(&(0..n).collect::<Vec<_>>());
    let mut vector_pairs = Vec::new();
    let mut scalar_pairs = Vec::new();
    let mut total = vec![0.0; grid.len()];
    for p in &factorization.pairs {
        let mut field = vec![vec![0.0; grid.len()]; n];
        for (slot, &t) in p.u.tuples().iter().enumerate() {
            let j = tuple_indices(full & !t)[0];
            let sign = merge_sign(t, 1 << j);
            field[j] = p.u.components()[slot].iter().map(|v| sign * v).collect();
        }
        let mut gradient = vec![vec![0.0; grid.len()]; n];
        gradient[p.axis] = p.v.component(1 << p.axis)?.to_vec();
        for (acc, (a, b)) in total.iter_mut().zip(field[p.axis].iter().zip(&gradient[p.axis])) {
            *acc += a * b;
        }
        scalar_pairs.push(ScalarPair { u: field[p.axis].clone(), v: gradient[p.axis].clone() });
        vector_pairs.push(VectorPair {
            divergence_residual: divergence_residual(grid, &field),
            curl_residual: curl_residual(grid, &gradient),
            field,
            gradient,
        });
    }
    let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    let err = total.iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Ok(ScalarFactorization {
        factorization,
        vector_pairs,
        scalar_pairs,
        reconstruction_error: if norm > 0.0 { err / norm } else { 0.0 },
    })
}

/// Axis-aligned cube of grid cells: `start` is the lowest multi-index and
/// `side` the number of cells per axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCube {
    pub start: [usize; 3],
    pub side: usize,
}

impl GridCube {
    fn contains(&self, mi: &[usize; 3], n: usize) -> bool {
        (0..n).all(|a| mi[a] >= self.start[a] && mi[a] < self.start[a] + self.side)
    }

    fn overlaps(&self, other: &GridCube, n: usize) -> bool {
        (0..n).all(|a| self.start[a] < other.start[a] + other.side && other.start[a] < self.start[a] + self.side)
    }

    pub fn volume(&self, grid: &Grid) -> f64 {
        (self.side as f64 * grid.spacing()).powi(grid.dim() as i32)
    }
}

#[derive(Clone, Debug)]
pub struct L1Factorization {
    pub pairs: Vec<ScalarPair>,
    pub h1_u: Vec<f64>,
    pub sup_v: Vec<f64>,
    /// `Σ ‖u_j‖_{H¹} ‖v_j‖_∞ / ‖f‖_{L¹}`.
    pub ratio: f64,
    pub reconstruction_error: f64,
}

/// Factors `Σ λ_j χ_{Q_j}` with `u_j = |Q_j|⁻¹ h_j`, `v_j = λ_j |Q_j| h_j`,
/// where `h_j = ±1` on the two halves of `Q_j` along the first axis.
pub fn l1_factorize(grid: &Grid, cubes: &[(f64, GridCube)], tol: f64) -> Result<L1Factorization> {
    let n = grid.dim();
    for (i, (_, a)) in cubes.iter().enumerate() {
        if a.side < 2 || a.side % 2 != 0 || (0..n).any(|d| a.start[d] + a.side > grid.points()) {
            return Err(Error::Geometry(format!("cube {i} must have even side ≥ 2 and lie in the box")));
        }
        if cubes[..i].iter().any(|(_, b)| a.overlaps(b, n)) {
            return Err(Error::Geometry(format!("cube {i} overlaps an earlier cube")));
        }
    }
    let mut f = vec![0.0; grid.len()];
    let mut total = vec![0.0; grid.len()];
    let mut out = L1Factorization { pairs: vec![], h1_u: vec![], sup_v: vec![], ratio: 0.0, reconstruction_error: 0.0 };
    let mut l1 = 0.0;
    let mut sum = 0.0;
    for &(lambda, cube) in cubes {
        if lambda == 0.0 {
            continue;
        }
        let vol = cube.volume(grid);
        let mut haar = vec![0.0; grid.len()];
        for (i, h) in haar.iter_mut().enumerate() {
            let mi = grid.multi_index(i);
            if cube.contains(&mi, n) {
                *h = if mi[0] < cube.start[0] + cube.side / 2 { 1.0 } else { -1.0 };
                f[i] += lambda;
            }
        }
        let u: Vec<f64> = haar.iter().map(|h| h / vol).collect();
        let v: Vec<f64> = haar.iter().map(|h| lambda * vol * h).collect();
        for (t, (a, b)) in total.iter_mut().zip(u.iter().zip(&v)) {
            *t += a * b;
        }
        let h1 = h1_norm(&Form::scalar(*grid, u.clone())?, tol)?;
        let sup = lambda.abs() * vol;
        sum += h1 * sup;
        l1 += lambda.abs() * vol;
        out.h1_u.push(h1);
        out.sup_v.push(sup);
        out.pairs.push(ScalarPair { u, v });
    }
    if l1 > 0.0 {
        out.ratio = sum / l1;
        let err = total.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        out.reconstruction_error = err / f.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DivCurlReport {
    pub hlog_product: f64,
    pub h1_u: f64,
    pub bmo_plus_v: f64,
    /// `hlog_norm(u ∧ v) / (‖u‖_{H¹} ‖v‖_{BMO⁺})`, zero when `u ∧ v = 0`.
    pub ratio: f64,
    pub d_residual: f64,
}

/// Hardy-log norm of `u ∪ v` against the product of the factor norms. The
/// cup product keeps `u ∪ v` exactly closed.
pub fn divcurl_check(u: &Form, v: &Form, balls: &[Ball], tol: f64, closed_tol: f64) -> Result<DivCurlReport> {
    let n = u.grid().dim();
    if u.degree() == 0 || v.degree() == 0 || u.degree() >= n || v.degree() >= n {
        return Err(Error::Degree("factors must have degrees in [1, n-1]".into()));
    }
    if u.degree() + v.degree() > n {
        return Err(Error::Degree(format!("ℓ + m = {} exceeds n = {n}", u.degree() + v.degree())));
    }
    for (name, f) in [("u", u), ("v", v)] {
        let r = closed_residual(f)?;
        if r > closed_tol {
            return Err(Error::Domain(format!("{name} is not closed: d residual {r:e}")));
        }
    }
    let product = crate::forms::cup(u, v)?;
    let d_residual = if product.degree() < n && product.max_abs() > 0.0 {
        exterior_derivative(&product)?.max_abs() / product.max_abs()
    } else {
        0.0
    };
    let hlog_product = hlog_norm(&product, tol)?;
    let h1_u = h1_norm(u, tol)?;
    let bmo_plus_v = bmo_plus_norm(v, balls)?;
    let ratio = if hlog_product == 0.0 { 0.0 } else { hlog_product / (h1_u * bmo_plus_v) };
    Ok(DivCurlReport { hlog_product, h1_u, bmo_plus_v, ratio, d_residual })
}
