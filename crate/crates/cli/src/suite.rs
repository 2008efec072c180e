//! Acceptance criteria with frozen tolerances. Every criterion draws its
//! samples from per-sample seeds, evaluates them in parallel and tallies the
//! results in sample order, so reports do not depend on the thread count.

use std::collections::BTreeMap;
use std::f64::consts::E;
use std::time::Instant;

use mohardy::atoms::{d_residual, nq_functional, validate_atom, Atom, AtomTolerances};
use mohardy::bmo::{bmo_plus_norm, bmo_wp_norm, dyadic_balls, john_nirenberg_certificate};
use mohardy::decompose::{closed_atomic_decompose, DecomposeOptions};
use mohardy::factorize::{
    bmo_factor_case1, divcurl_check, factor_atom_case1, factor_atom_case2, gamma_lower_bound, pair_count,
    scalar_weak_factorize, AtomFactorization, BallCase, FactorContext, FactorizeOptions,
};
use mohardy::fixtures::{bmo_field, closed_atom, closed_field, pair_spec, random_ball, rng};
use mohardy::forms::{codifferential, exterior_derivative, hodge_split, riesz_transform};
use mohardy::growth::{chi_ball_norm, luxembourg_norm};
use mohardy::maximal::hlog_norm;
use mohardy::{AdmissibleTriple, Ball, Form, Grid, GrowthFunction};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Scale;
use crate::error::CliError;

/// Exact identities of the discrete calculus.
pub const CALCULUS_TOL: f64 = 1e-10;
/// Gauge agreement with closed forms and scan oracles.
pub const GAUGE_TOL: f64 = 1e-6;
/// `‖Σ λ_j 𝔞_j - f‖₂ / ‖f‖₂` of atomic decompositions.
pub const DECOMPOSITION_TOL: f64 = 1e-3;
/// `d` residual of emitted closed forms.
pub const CLOSED_TOL: f64 = 1e-10;
/// Bracket of `‖f‖_{H^log} / N_q(decomposition)`.
pub const HARDY_NQ_BRACKET: (f64, f64) = (0.03, 1.0);
/// Reconstruction of a single atom from its factor pairs.
pub const ATOM_FACTOR_TOL: f64 = 1e-6;
/// Bound on `Σ ‖u‖_{H¹} ‖v‖_{BMO⁺}` per normalized atom.
pub const ATOM_NORM_SUM: f64 = 12.0;
/// Reconstruction of weak factorizations.
pub const WEAK_FACTOR_TOL: f64 = 1e-3;
/// Bound on `Σ ‖u_k‖_{H¹} ‖v_k‖_{BMO⁺} / ‖f‖_{H^log}`.
pub const WEAK_RATIO: f64 = 80.0;
/// Divergence and curl residuals of the scalar factor fields.
pub const DIV_CURL_TOL: f64 = 1e-10;
/// Bound on `‖u ∧ v‖_{H^log} / (‖u‖_{H¹} ‖v‖_{BMO⁺})`.
pub const DIVCURL_RATIO: f64 = 0.5;
/// Relative drift of the largest div-curl ratio under grid refinement.
pub const REFINEMENT_DRIFT: f64 = 0.2;
/// Lower bound on `γ / (log(e + |c|) + |log r|)`.
pub const GAMMA_RATIO: f64 = 0.5;
/// Bound on `‖G_k‖_{BMO⁺}` of case-I factors.
pub const FACTOR_BMO_PLUS: f64 = 2.5;
/// Bound on the John-Nirenberg certificate over `‖g‖²_{BMO^℘}`.
pub const JOHN_NIRENBERG: f64 = 50.0;

/// Runtime budgets in seconds at full scale.
pub const BUDGETS: [(u8, f64); 9] =
    [(1, 10.0), (2, 30.0), (3, 300.0), (4, 300.0), (5, 600.0), (6, 600.0), (7, 300.0), (8, 120.0), (9, 300.0)];

const NAMES: [&str; 9] = [
    "discrete calculus identities",
    "Luxembourg norms",
    "closed atomic decomposition",
    "atomic functional",
    "atom factorization",
    "weak factorization",
    "div-curl ratio",
    "case-one BMO factors",
    "determinism",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub samples: usize,
    pub metrics: BTreeMap<String, f64>,
    pub failures: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub id: u8,
    pub seconds: f64,
    pub budget: f64,
    pub within_budget: bool,
}

#[derive(Clone, Debug)]
pub struct SuiteOutcome {
    pub criteria: Vec<CriterionReport>,
    pub timings: Vec<Timing>,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    pub fn within_budget(&self) -> bool {
        self.timings.iter().all(|t| t.within_budget)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SuiteContext {
    pub grid: Grid,
    pub seed: u64,
    pub scale: Scale,
}

impl SuiteContext {
    fn count(&self, full: usize, quick: usize) -> usize {
        match self.scale {
            Scale::Full => full,
            Scale::Quick => quick,
        }
    }

    /// Independent stream for sample `k` of criterion `id`.
    fn rng(&self, id: u8, k: usize) -> ChaCha8Rng {
        rng(self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((id as u64) << 48) ^ k as u64)
    }
}

const MAX_FAILURES: usize = 12;

/// Running maxima, minima and failures of one criterion.
#[derive(Default)]
struct Tally {
    metrics: BTreeMap<String, f64>,
    failures: Vec<String>,
    samples: usize,
}

impl Tally {
    fn fail(&mut self, message: String) {
        if self.failures.len() < MAX_FAILURES {
            self.failures.push(message);
        } else if self.failures.len() == MAX_FAILURES {
            self.failures.push("further failures omitted".into());
        }
    }

    fn record_max(&mut self, key: &str, value: f64) {
        let slot = self.metrics.entry(key.into()).or_insert(f64::NEG_INFINITY);
        *slot = if value.is_nan() { f64::NAN } else { slot.max(value) };
    }

    fn record_min(&mut self, key: &str, value: f64) {
        let slot = self.metrics.entry(key.into()).or_insert(f64::INFINITY);
        *slot = if value.is_nan() { f64::NAN } else { slot.min(value) };
    }

    fn at_most(&mut self, key: &str, sample: usize, value: f64, limit: f64) {
        self.record_max(key, value);
        if !(value <= limit) {
            self.fail(format!("sample {sample}: {key} = {value:e} exceeds {limit:e}"));
        }
    }

    fn at_least(&mut self, key: &str, sample: usize, value: f64, limit: f64) {
        self.record_min(key, value);
        if !(value >= limit) {
            self.fail(format!("sample {sample}: {key} = {value:e} below {limit:e}"));
        }
    }

    fn check(&mut self, sample: usize, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.fail(format!("sample {sample}: {}", what()));
        }
    }

    /// Records failed samples and returns the others with their indices.
    fn keep<T>(&mut self, rows: Vec<Result<T, CliError>>) -> Vec<(usize, T)> {
        let mut out = Vec::new();
        for (s, row) in rows.into_iter().enumerate() {
            match row {
                Ok(v) => out.push((s, v)),
                Err(e) => self.fail(format!("sample {s}: {e}")),
            }
        }
        out
    }

    fn finish(self, id: u8) -> CriterionReport {
        CriterionReport {
            id,
            name: NAMES[id as usize - 1].into(),
            passed: self.failures.is_empty(),
            samples: self.samples,
            metrics: self.metrics,
            failures: self.failures,
        }
    }
}

fn relative(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs()
    }
}

fn parallel<T: Send>(count: usize, f: impl Fn(usize) -> Result<T, CliError> + Sync + Send) -> Vec<Result<T, CliError>> {
    (0..count).into_par_iter().map(f).collect()
}

fn random_form(grid: &Grid, degree: usize, rng: &mut ChaCha8Rng) -> Result<Form, CliError> {
    let count = mohardy::forms::binomial(grid.dim(), degree);
    let comps = (0..count).map(|_| (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    Ok(Form::from_components(*grid, degree, comps)?)
}

/// Sum of a few random sinusoids strictly below the Nyquist band.
fn band_limited(grid: &Grid, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = grid.dim();
    let half = grid.points() as i64 / 2;
    let omega = std::f64::consts::PI / grid.half_len();
    let waves: Vec<([f64; 3], f64, f64)> = (0..8)
        .map(|_| {
            let mut k = [0.0; 3];
            loop {
                for kk in k.iter_mut().take(n) {
                    *kk = rng.gen_range(1 - half..half) as f64;
                }
                if k.iter().any(|&v| v != 0.0) {
                    break;
                }
            }
            (k, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    (0..grid.len())
        .map(|i| {
            let p = grid.point(i);
            waves.iter().map(|(k, a, phi)| a * (omega * (0..n).map(|j| k[j] * p[j]).sum::<f64>() + phi).cos()).sum()
        })
        .collect()
}

/// Criterion 1: `d∘d = 0`, `δ∘δ = 0`, `⟨df, g⟩ = ⟨f, δg⟩`, `Σ R_j² = -Id`
/// on band-limited mean-zero data and exact Hodge reconstruction.
pub fn calculus_identities(ctx: &SuiteContext) -> Result<CriterionReport, CliError> {
    let fields = ctx.count(20, 3);
    let grids = [ctx.grid, Grid::new(3, ctx.count(32, 16), 4.0)?];
    let mut tally = Tally::default();
    for (gi, grid) in grids.iter().enumerate() {
        let n = grid.dim();
        let rows = parallel(fields * (n + 1), |s| {
            let (k, sample) = (s / fields, s % fields);
            let mut r = ctx.rng(1, gi * 10_000 + s);
            let f = random_form(grid, k, &mut r)?;
            let norm = f.l2_norm();
            let h2 = grid.spacing().powi(2);
            let mut row = Vec::new();
            if k + 2 <= n {
                let dd = exterior_derivative(&exterior_derivative(&f)?)?;
                row.push(("dd", dd.l2_norm() * h2 / norm));
            }
            if k >= 2 {
                let cc = codifferential(&codifferential(&f)?)?;
                row.push(("codiff_codiff", cc.l2_norm() * h2 / norm));
            }
            if k < n {
                let g = random_form(grid, k + 1, &mut r)?;
                let df = exterior_derivative(&f)?;
                let gap = (df.inner(&g)? - f.inner(&codifferential(&g)?)?).abs();
                row.push(("adjoint", gap / (df.l2_norm() * g.l2_norm())));
            }
            let split = hodge_split(&f)?;
            let sum = &(&split.exact + &split.coexact) + &split.harmonic;
            row.push(("hodge", (&sum - &f).l2_norm() / norm));
            if k == 0 {
                let v = band_limited(grid, &mut r);
                let mut acc = v.clone();
                for axis in 0..n {
                    let twice = riesz_transform(grid, axis, &riesz_transform(grid, axis, &v)?)?;
                    for (a, b) in acc.iter_mut().zip(twice) {
                        *a += b;
                    }
                }
                let err = acc.iter().map(|x| x * x).sum::<f64>().sqrt() / v.iter().map(|x| x * x).sum::<f64>().sqrt();
                row.push(("riesz", err));
            }
            Ok((sample + k * fields, row))
        });
        for (_, (sample, row)) in tally.keep(rows) {
            tally.samples += 1;
            for (key, value) in row {
                tally.at_most(&format!("n{n}_{key}"), sample, value, CALCULUS_TOL);
            }
        }
    }
    Ok(tally.finish(1))
}

fn theta(x: &[f64], t: f64) -> f64 {
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    t / ((E + r).ln() + (E + t).ln())
}

/// `inf{λ : modular(λ) ≤ 1}` by repeated geometric scans that zoom in on the
/// first admissible sample.
pub fn scan_gauge(modular: impl Fn(f64) -> f64, scale: f64) -> f64 {
    let (mut lo, mut hi) = (scale * 1e-9, scale * 1e9);
    while modular(hi) > 1.0 {
        hi *= 1e3;
    }
    while modular(lo) <= 1.0 {
        lo *= 1e-3;
    }
    for _ in 0..12 {
        let steps = 64;
        let ratio = (hi / lo).powf(1.0 / steps as f64);
        let mut prev = lo;
        for i in 1..=steps {
            let x = if i == steps { hi } else { lo * ratio.powi(i) };
            if modular(x) <= 1.0 {
                lo = prev;
                hi = x;
                break;
            }
            prev = x;
        }
    }
    hi
}

fn cells_of(grid: &Grid, ball: &Ball) -> Vec<usize> {
    (0..grid.len()).filter(|&i| ball.contains(grid, &grid.point(i))).collect()
}

/// Criterion 2: Luxembourg norms against `|B|^{1/p}` and θ scan oracles.
pub fn luxembourg_norms(ctx: &SuiteContext) -> Result<CriterionReport, CliError> {
    let grid = ctx.grid;
    let n = grid.dim();
    let vol = grid.cell_volume();
    let th = GrowthFunction::theta();
    let rows = parallel(ctx.count(10, 3), |s| {
        let mut r = ctx.rng(2, s);
        let radius = r.gen_range(0.3..1.5);
        let center: Vec<f64> = (0..n).map(|_| r.gen_range(-1.5..1.5)).collect();
        let ball = Ball::new(&center, radius)?;
        let cells = cells_of(&grid, &ball);
        let measure = cells.len() as f64 * vol;
        let mut indicator = vec![0.0; grid.len()];
        for &i in &cells {
            indicator[i] = 1.0;
        }
        let mut row = Vec::new();
        for p in [1.0, 0.5, 0.8] {
            let gf = GrowthFunction::power(p)?;
            let closed = measure.powf(1.0 / p);
            row.push(("power_indicator", relative(luxembourg_norm(&gf, &grid, &indicator, 1e-12)?, closed)));
            row.push(("power_chi_ball", relative(chi_ball_norm(&gf, &grid, &ball, 1e-12)?, closed)));
        }
        let points: Vec<_> = cells.iter().map(|&i| grid.point(i)).collect();
        let chi_scan = scan_gauge(|l| points.iter().map(|p| vol * theta(&p[..n], 1.0 / l)).sum(), 1.0);
        row.push(("theta_chi_ball", relative(chi_ball_norm(&th, &grid, &ball, 1e-12)?, chi_scan)));
        let field: Vec<f64> = (0..grid.len())
            .map(|i| {
                let d = ball.distance(&grid, &grid.point(i)) / radius;
                if d < 2.0 {
                    (2.0 - d) * r.gen_range(0.5..2.0)
                } else {
                    0.0
                }
            })
            .collect();
        let all: Vec<_> = (0..grid.len()).filter(|&i| field[i] != 0.0).map(|i| (grid.point(i), field[i])).collect();
        let field_scan = scan_gauge(|l| all.iter().map(|(p, v)| vol * theta(&p[..n], v / l)).sum(), 1.0);
        row.push(("theta_field", relative(luxembourg_norm(&th, &grid, &field, 1e-12)?, field_scan)));
        Ok(row)
    });
    let mut tally = Tally::default();
    for (s, row) in tally.keep(rows) {
        tally.samples += 1;
        for (key, value) in row {
            tally.at_most(key, s, value, GAUGE_TOL);
        }
    }
    Ok(tally.finish(2))
}

/// Criterion 3: closed atoms on central balls validate, decompose and
/// resynthesize.
pub fn closed_decomposition(ctx: &SuiteContext) -> Result<CriterionReport, CliError> {
    let grid = ctx.grid;
    let th = GrowthFunction::theta();
    let opts = DecomposeOptions::default();
    let rows = parallel(ctx.count(20, 3), |s| {
        let atom = closed_atom(&grid, &mut ctx.rng(3, s), 1, BallCase::II)?;
        let input_ok = validate_atom(&atom, &opts.atoms)?.passed;
        let dec = closed_atomic_decompose(&atom.form, &th, &opts)?;
        let error = (&dec.synthesize(&grid, 1)? - &atom.form).l2_norm() / atom.form.l2_norm();
        let mut worst_d = 0.0f64;
        let mut invalid = 0usize;
        for a in &dec.atoms {
            worst_d = worst_d.max(d_residual(&a.form)?);
            if !validate_atom(a, &opts.atoms)?.passed {
                invalid += 1;
            }
        }
        Ok((input_ok, error, worst_d, invalid, dec.atoms.len()))
    });
    let mut tally = Tally::default();
    for (s, (input_ok, error, worst_d, invalid, count)) in tally.keep(rows) {
        tally.samples += 1;
        tally.check(s, input_ok, || "input atom fails validation".into());
        tally.at_most("reconstruction_error", s, error, DECOMPOSITION_TOL);
        tally.at_most("emitted_d_residual", s, worst_d, CLOSED_TOL);
        tally.at_most("invalid_emitted_atoms", s, invalid as f64, 0.0);
        tally.record_max("max_atoms", count as f64);
    }
    Ok(tally.finish(3))
}

/// `sup_t (Σ_B |a|^q θ(x,t) / Σ_B θ(x,t))^{1/q}` over `t = 2^k`.
fn lq_theta_oracle(atom: &Atom, levels: i32) -> f64 {
    let grid = atom.form.grid();
    let n = grid.dim();
    let q = atom.triple.q;
    let norms = atom.form.pointwise_norm();
    let cells = cells_of(grid, &atom.ball);
    (-levels..=levels)
        .map(|k| {
            let t = 2f64.powi(k);
            let (mut num, mut den) = (0.0, 0.0);
            for &i in &cells {
                let w = theta(&grid.point(i)[..n], t);
                num += norms[i].powf(q) * w;
                den += w;
            }
            (num / den).powf(1.0 / q)
        })
        .fold(0.0, f64::max)
}

/// Criterion 4: the atomic functional against its closed form for `℘ = t`
/// and a θ scan, and the Hardy-to-atomic ratio bracket.
pub fn atomic_functional(ctx: &SuiteContext) -> Result<CriterionReport, CliError> {
    let grid = ctx.grid;
    let n = grid.dim();
    let vol = grid.cell_volume();
    let th = GrowthFunction::theta();
    let opts = DecomposeOptions::default();
    let tol = AtomTolerances::default();
    let oracles = ctx.count(10, 2);
    let rows = parallel(ctx.count(50, 4), |s| {
        let f = closed_field(&grid, &mut ctx.rng(4, s), 1, 2)?;
        let dec = closed_atomic_decompose(&f, &th, &opts)?;
        let ratio = hlog_norm(&f, 1e-10)? / dec.nq_value;
        if s >= oracles {
            return Ok((ratio, None));
        }
        let sizes: Vec<(f64, Vec<usize>)> = dec
            .weights
            .iter()
            .zip(&dec.atoms)
            .map(|(w, a)| (w.abs() * lq_theta_oracle(a, tol.levels), cells_of(&grid, &a.ball)))
            .collect();
        let scan = scan_gauge(
            |l| {
                sizes
                    .iter()
                    .map(|(c, cells)| cells.iter().map(|&i| vol * theta(&grid.point(i)[..n], c / l)).sum::<f64>())
                    .sum()
            },
            dec.nq_value.max(1e-300),
        );
        let linear = GrowthFunction::power(1.0)?;
        let relinked: Vec<Atom> = dec
            .atoms
            .iter()
            .map(|a| {
                let triple = AdmissibleTriple::new(linear.clone(), a.triple.q, a.triple.moments, n)?;
                Ok(Atom { triple, ..a.clone() })
            })
            .collect::<Result<_, CliError>>()?;
        let terms: Vec<(f64, &Atom)> = dec.weights.iter().copied().zip(&relinked).collect();
        let closed_form: f64 = terms
            .iter()
            .map(|(w, a)| {
                let cells = cells_of(&grid, &a.ball);
                let norms = a.form.pointwise_norm();
                let q = a.triple.q;
                let avg = cells.iter().map(|&i| norms[i].powf(q)).sum::<f64>() / cells.len() as f64;
                w.abs() * cells.len() as f64 * vol * avg.powf(1.0 / q)
            })
            .sum();
        let linear_nq = nq_functional(&terms, &tol)?;
        Ok((ratio, Some((relative(dec.nq_value, scan), relative(linear_nq, closed_form)))))
    });
    let mut tally = Tally::default();
    for (s, (ratio, oracle)) in tally.keep(rows) {
        tally.samples += 1;
        tally.at_least("hardy_over_nq_min", s, ratio, HARDY_NQ_BRACKET.0);
        tally.at_most("hardy_over_nq_max", s, ratio, HARDY_NQ_BRACKET.1);
        if let Some((theta_gap, linear_gap)) = oracle {
            tally.at_most("theta_scan", s, theta_gap, GAUGE_TOL);
            tally.at_most("linear_closed_form", s, linear_gap, GAUGE_TOL);
        }
    }
    Ok(tally.finish(4))
}

fn check_factorization(tally: &mut Tally, s: usize, case: &str, fact: &AtomFactorization, expected: usize) {
    tally.at_most(&format!("{case}_reconstruction"), s, fact.residual, ATOM_FACTOR_TOL);
    tally.check(s, fact.pairs.len() == expected, || format!("{} pairs, expected {expected}", fact.pairs.len()));
    tally.at_most(&format!("{case}_norm_sum"), s, fact.norm_sum, ATOM_NORM_SUM);
    for p in &fact.pairs {
        for f in [&p.u, &p.v] {
            let d = d_residual(f).unwrap_or(f64::NAN);
            tally.at_most(&format!("{case}_closed_residual"), s, d, CLOSED_TOL);
        }
        if let Some(v) = &p.u_validation {
            tally.check(s, v.passed, || format!("u fails validation: {:?}", v.failures));
        }
    }
}

/// Criterion 5: case-I and case-II degree-2 atoms factor into closed pairs.
pub fn atom_factorization(ctx: &SuiteContext) -> Result<CriterionReport, CliError> {
    let grid = ctx.grid;
    let fctx = FactorContext::new(grid)?;
    let opts = FactorizeOptions::default();
    let expected = pair_count(grid.dim(), 1, 1);
    let count = ctx.count(20, 3);
    let rows = parallel(2 * count, |s| {
        let case = if s < count { BallCase::I } else { BallCase::II };
        let atom = closed_atom(&grid, &mut ctx.rng(5, s), 2, case)?;
        let fact = match case {
            BallCase::I => factor_atom_case1(&fctx, &atom.form, &atom.ball, 1, 1, &opts)?,
            BallCase::II => factor_atom_case2(&fctx, &atom.form, &atom.ball, 1, 1, &opts)?,
        };
        Ok((case, fact))
    });
    let mut tally = Tally::default();
    for (s, (case, fact)) in tally.keep(rows) {
        tally.samples += 1;
        let label = if case == BallCase::I { "case_one" } else { "case_two" };
        tally.check(s, fact.pairs.iter().all(|p| p.factor.case() == case), || format!("{label} factor mismatch"));
        check_factorization(&mut tally, s, label, &fact, expected);
    }
    Ok(tally.finish(5))
}

/// Criterion 6: weak factorization of top-degree closed fields, both as
/// forms and as scalar products of div-free and curl-free fields.
pub fn weak_factorization(ctx: &SuiteContext) -> Result<CriterionReport, CliError> {
    let grid = ctx.grid;
    let n = grid.dim();
    let opts = FactorizeOptions::default();
    let rows = parallel(ctx.count(10, 1), |s| {
        let f = closed_field(&grid, &mut ctx.rng(6, s), n, 2)?;
        Ok(scalar_weak_factorize(&grid, &f.components()[0], &opts)?)
    });
    let mut tally = Tally::default();
    for (s, sf) in tally.keep(rows) {
        tally.samples += 1;
        let c = &sf.factorization.certificate;
        tally.at_most("form_reconstruction", s, c.reconstruction_error, WEAK_FACTOR_TOL);
        tally.at_most("scalar_reconstruction", s, sf.reconstruction_error, WEAK_FACTOR_TOL);
        tally.at_most("norm_ratio", s, c.ratio, WEAK_RATIO);
        tally.at_most("closed_residual", s, c.max_closed_residual, CLOSED_TOL);
        tally.at_most("atom_residual", s, c.max_atom_residual, ATOM_FACTOR_TOL);
        for vp in &sf.vector_pairs {
            tally.at_most("divergence_residual", s, vp.divergence_residual, DIV_CURL_TOL);
            tally.at_most("curl_residual", s, vp.curl_residual, DIV_CURL_TOL);
        }
        tally.record_max("max_atoms", c.atoms as f64);
    }
    Ok(tally.finish(6))
}

/// Criterion 7: the div-curl ratio on random closed pairs, with the largest
/// ratios re-checked at twice the resolution.
pub fn divcurl_ratio(ctx: &SuiteContext) -> Result<CriterionReport, CliError> {
    divcurl_sweep(ctx, ctx.count(100, 8), ctx.count(10, 2))
}

pub fn divcurl_sweep(ctx: &SuiteContext, pairs: usize, spot: usize) -> Result<CriterionReport, CliError> {
    let grid = ctx.grid;
    let fine = Grid::new(grid.dim(), 2 * grid.points(), grid.half_len())?;
    let balls = dyadic_balls(&grid);
    let specs: Vec<_> = (0..pairs).map(|s| pair_spec(grid.dim(), &mut ctx.rng(7, s))).collect();
    let ratios = parallel(pairs, |s| {
        let (u, v) = specs[s].render(&grid)?;
        let rep = divcurl_check(&u, &v, &balls, 1e-8, CLOSED_TOL)?;
        Ok((rep.ratio, rep.d_residual))
    });
    let mut tally = Tally::default();
    let ratios: Vec<(usize, (f64, f64))> = tally.keep(ratios);
    for &(s, (ratio, d)) in &ratios {
        tally.samples += 1;
        tally.check(s, ratio.is_finite(), || format!("ratio {ratio} is not finite"));
        tally.at_most("ratio", s, ratio, DIVCURL_RATIO);
        tally.at_most("product_d_residual", s, d, CLOSED_TOL);
    }
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| ratios[b].1 .0.total_cmp(&ratios[a].1 .0).then(a.cmp(&b)));
    order.truncate(spot);
    if !order.is_empty() {
        let fine_balls = dyadic_balls(&fine);
        let refined = parallel(order.len(), |k| {
            let (u, v) = specs[ratios[order[k]].0].render(&fine)?;
            Ok(divcurl_check(&u, &v, &fine_balls, 1e-8, CLOSED_TOL)?.ratio)
        });
        let refined = tally.keep(refined);
        let coarse_max = order.iter().map(|&k| ratios[k].1 .0).fold(0.0, f64::max);
        let fine_max = refined.iter().map(|r| r.1).fold(0.0, f64::max);
        tally.record_max("spot_coarse_max", coarse_max);
        tally.record_max("spot_fine_max", fine_max);
        tally.at_most("refinement_drift", 0, relative(fine_max, coarse_max), REFINEMENT_DRIFT);
    }
    Ok(tally.finish(7))
}

/// Criterion 8: case-I factors are constant on the slab, dominate the
/// logarithmic lower bound and stay in BMO⁺; John-Nirenberg certificates of
/// logarithmic fixtures stay bounded.
pub fn case_one_factors(ctx: &SuiteContext) -> Result<CriterionReport, CliError> {
    let grid = ctx.grid;
    let n = grid.dim();
    let balls = dyadic_balls(&grid);
    let th = GrowthFunction::theta();
    let rows = parallel(ctx.count(50, 6), |s| {
        let ball = random_ball(&grid, &mut ctx.rng(8, s), BallCase::I)?;
        let mut row = Vec::new();
        for axis in 0..n {
            let (values, gamma) = bmo_factor_case1(&grid, &ball, axis)?;
            let (c, r) = (ball.center[axis], ball.radius);
            let slab_spread = (0..grid.len())
                .filter(|&i| (grid.point(i)[axis] - c).abs() < r)
                .map(|i| (values[i] - gamma).abs())
                .fold(0.0, f64::max);
            let other = (axis + 1) % n;
            let variation =
                (0..grid.len()).map(|i| (values[i] - values[grid.shift(i, other, 3)]).abs()).fold(0.0, f64::max);
            let lower = gamma / gamma_lower_bound(c, r);
            let bmo = bmo_plus_norm(&Form::scalar(grid, values)?, &balls)?;
            row.push((slab_spread, variation, lower, bmo));
        }
        Ok(row)
    });
    let mut tally = Tally::default();
    for (s, row) in tally.keep(rows) {
        tally.samples += 1;
        for (spread, variation, lower, bmo) in row {
            tally.at_most("slab_spread", s, spread, 0.0);
            tally.at_most("transverse_variation", s, variation, 0.0);
            tally.at_least("gamma_over_lower_bound", s, lower, GAMMA_RATIO);
            tally.at_most("factor_bmo_plus", s, bmo, FACTOR_BMO_PLUS);
        }
    }
    let jn = parallel(ctx.count(10, 2), |s| {
        let g = bmo_field(&grid, &mut ctx.rng(8, 1000 + s))?;
        let w = bmo_wp_norm(&g, &th, &balls)?;
        Ok(john_nirenberg_certificate(&g, &th, 2.0, &balls)? / (w * w))
    });
    for (s, value) in tally.keep(jn) {
        tally.at_most("john_nirenberg_ratio", s, value, JOHN_NIRENBERG);
    }
    Ok(tally.finish(8))
}

pub fn run_criterion(id: u8, ctx: &SuiteContext) -> Result<CriterionReport, CliError> {
    match id {
        1 => calculus_identities(ctx),
        2 => luxembourg_norms(ctx),
        3 => closed_decomposition(ctx),
        4 => atomic_functional(ctx),
        5 => atom_factorization(ctx),
        6 => weak_factorization(ctx),
        7 => divcurl_ratio(ctx),
        8 => case_one_factors(ctx),
        9 => determinism(ctx),
        _ => Err(CliError::Config { field: "suite.criteria".into(), message: format!("unknown criterion {id}") }),
    }
}

fn quick_reports(ctx: &SuiteContext, threads: usize) -> Result<String, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config { field: "jobs".into(), message: e.to_string() })?;
    let quick = SuiteContext { scale: Scale::Quick, ..*ctx };
    let reports = pool.install(|| (1..=8).map(|id| run_criterion(id, &quick)).collect::<Result<Vec<_>, _>>())?;
    Ok(serde_json::to_string(&reports)?)
}

/// Criterion 9: two quick-scale runs on pools of different sizes give
/// byte-identical reports.
pub fn determinism(ctx: &SuiteContext) -> Result<CriterionReport, CliError> {
    let a = quick_reports(ctx, 1)?;
    let b = quick_reports(ctx, 4)?;
    let mut tally = Tally { samples: 2, ..Tally::default() };
    tally.metrics.insert("report_bytes".into(), a.len() as f64);
    tally.check(0, a == b, || "reports differ between one and four threads".into());
    Ok(tally.finish(9))
}

/// Runs the selected criteria (all when `ids` is empty) in order.
pub fn run_suite(ctx: &SuiteContext, ids: &[u8]) -> Result<SuiteOutcome, CliError> {
    let ids: Vec<u8> = if ids.is_empty() { (1..=9).collect() } else { ids.to_vec() };
    let mut outcome = SuiteOutcome { criteria: vec![], timings: vec![] };
    for id in ids {
        let start = Instant::now();
        outcome.criteria.push(run_criterion(id, ctx)?);
        let seconds = start.elapsed().as_secs_f64();
        let budget = BUDGETS[id as usize - 1].1;
        outcome.timings.push(Timing { id, seconds, budget, within_budget: seconds <= budget });
    }
    Ok(outcome)
}
