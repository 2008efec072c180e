//! Seeded fixture generators shared by the tests and the command line.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::atoms::{make_atom, Atom, AtomProfile, AtomTolerances};
use crate::error::{Error, Result};
use crate::factorize::{AxisFactor, BallCase, GridCube};
use crate::forms::{binomial, save_dff, write_dff, Form};
use crate::grid::{Ball, Grid};
use crate::growth::{AdmissibleTriple, GrowthFunction};
use crate::maximal::LevelGrid;
use crate::tent::{make_tent_atom, TentAtom};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Hex SHA-256 of the DFF encoding.
pub fn form_hash(f: &Form) -> String {
    let mut bytes = Vec::new();
    write_dff(f, &mut bytes).expect("writing to memory");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn sign(rng: &mut ChaCha8Rng) -> f64 {
    if rng.gen::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Random ball for a closed atom. Case I keeps the support of a primitive on
/// the ball dilated by 1.5 inside `r ≤ min(1, |c_k|/2)` on every axis; case
/// II centers the ball within `2r` of the origin.
pub fn random_ball(grid: &Grid, rng: &mut ChaCha8Rng, case: BallCase) -> Result<Ball> {
    let n = grid.dim();
    let h = grid.spacing();
    let l = grid.half_len();
    let mut center = [0.0; 3];
    let radius = match case {
        BallCase::I => {
            let r = 4.0 * h + rng.gen::<f64>() * h;
            let lo = 3.0 * r;
            let hi = l - 1.5 * r - 3.0 * h;
            if hi <= lo {
                return Err(Error::Geometry("box too small for case-I balls".into()));
            }
            for c in center.iter_mut().take(n) {
                *c = sign(rng) * snap(lo + rng.gen::<f64>() * (hi - lo), h);
            }
            r
        }
        BallCase::II => {
            let r = (4.0 * h).max(0.5) + rng.gen::<f64>() * 1.0;
            let reach = (l - 1.5 * r - 3.0 * h).min(r).max(0.0);
            for c in center.iter_mut().take(n) {
                *c = snap((2.0 * rng.gen::<f64>() - 1.0) * reach / (n as f64).sqrt(), h);
            }
            r
        }
    };
    let ball = Ball { center, radius };
    ball.ensure_fits(grid)?;
    Ok(ball)
}

fn snap(x: f64, h: f64) -> f64 {
    (x / h).round() * h
}

fn theta_triple(dim: usize) -> Result<AdmissibleTriple> {
    AdmissibleTriple::new(GrowthFunction::theta(), 2.0, 0, dim)
}

/// Closed atom of degree `degree` over a random ball of the given case, with
/// random potential weights.
pub fn closed_atom(grid: &Grid, rng: &mut ChaCha8Rng, degree: usize, case: BallCase) -> Result<Atom> {
    let ball = random_ball(grid, rng, case)?;
    let count = if degree < grid.dim() { binomial(grid.dim(), degree - 1) } else { binomial(grid.dim(), degree) };
    let weights = (0..count).map(|_| rng.gen_range(0.5..1.5) * sign(rng)).collect();
    let mut direction = [0.0; 3];
    for d in direction.iter_mut().take(grid.dim()) {
        *d = rng.gen_range(-1.0..1.0);
    }
    direction[0] += 0.1;
    let profile = AtomProfile { weights, direction };
    make_atom(grid, &ball, &theta_triple(grid.dim())?, degree, true, &profile, &AtomTolerances::default())
}

/// Sum of `count` closed atoms of degree `degree` with weights in
/// `[0.25, 2]`, all supported in `|x|∞ ≤ L/2`.
pub fn closed_field(grid: &Grid, rng: &mut ChaCha8Rng, degree: usize, count: usize) -> Result<Form> {
    if degree == 0 || degree > grid.dim() {
        return Err(Error::Degree(format!("closed fields need degree in [1, {}]", grid.dim())));
    }
    let n = grid.dim();
    let h = grid.spacing();
    let span = grid.half_len() / 2.0;
    let triple = theta_triple(n)?;
    let mut out = Form::zeros(*grid, degree)?;
    for _ in 0..count {
        let r = rng.gen_range((4.0 * h).max(0.5)..(0.6 * span).max(4.0 * h + 0.1));
        let mut center = [0.0; 3];
        for c in center.iter_mut().take(n) {
            *c = snap(rng.gen_range(-(span - r).max(0.0)..=(span - r).max(0.0)), h);
        }
        let k = if degree < n { binomial(n, degree - 1) } else { binomial(n, degree) };
        let weights = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut direction = [0.0; 3];
        for d in direction.iter_mut().take(n) {
            *d = rng.gen_range(-1.0..1.0);
        }
        direction[0] += 0.1;
        let profile = AtomProfile { weights, direction };
        let atom =
            make_atom(grid, &Ball { center, radius: r }, &triple, degree, true, &profile, &AtomTolerances::default())?;
        out.axpy(rng.gen_range(0.25..2.0) * sign(rng), &atom.form)?;
    }
    Ok(out)
}

/// Random logarithmic axis factor with parameters on the lattice `h ℤ`.
fn random_axis_factor(rng: &mut ChaCha8Rng, h: f64) -> AxisFactor {
    match rng.gen_range(0..3) {
        0 => AxisFactor::Growing,
        1 => {
            let radius = snap(rng.gen_range(0.25..1.0), h);
            let center = snap(rng.gen_range(-2.0..2.0), h);
            AxisFactor::Near { center, radius, gamma: (std::f64::consts::E + 1.0 / radius).ln() }
        }
        _ => {
            let center = snap(rng.gen_range(1.0..3.0), h);
            AxisFactor::Far { center, gamma: (std::f64::consts::E + center).ln() }
        }
    }
}

/// Closed 1-form `Σ_k c_k G_k(x_k) dx_k` with random logarithmic profiles.
pub fn bmo_field(grid: &Grid, rng: &mut ChaCha8Rng) -> Result<Form> {
    let comps = (0..grid.dim())
        .map(|axis| {
            let factor = random_axis_factor(rng, grid.spacing());
            let scale = rng.gen_range(0.5..1.5) * sign(rng);
            factor.sample(grid, axis).into_iter().map(|v| scale * v).collect()
        })
        .collect();
    Form::from_components(*grid, 1, comps)
}

/// Tent atom over a random ball with smooth random samples.
pub fn tent_atom(grid: &Grid, rng: &mut ChaCha8Rng, degree: usize) -> Result<TentAtom> {
    let n = grid.dim();
    let h = grid.spacing();
    let radius = rng.gen_range(0.75..1.5);
    let mut center = [0.0; 3];
    for c in center.iter_mut().take(n) {
        *c = snap(rng.gen_range(-1.0..1.0), h);
    }
    let ball = Ball { center, radius };
    let count = binomial(n, degree);
    let phases: Vec<[f64; 3]> = (0..count).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    let levels = LevelGrid::dyadic(grid);
    make_tent_atom(grid, degree, &ball, &levels, &GrowthFunction::theta(), |level, cell| {
        let p = grid.point(cell);
        let t = levels.scales[level];
        phases
            .iter()
            .map(|ph| (3.0 * p[0] + 6.0 * ph[0]).sin() * (2.0 * p[1] + 6.0 * ph[1]).cos() * (1.0 + t * ph[2]))
            .collect()
    })
}

/// `count` disjoint cubes with weights in `±[0.5, 2]`.
pub fn simple_function(grid: &Grid, rng: &mut ChaCha8Rng, count: usize) -> Result<Vec<(f64, GridCube)>> {
    let n = grid.dim();
    let npts = grid.points();
    let mut cubes: Vec<(f64, GridCube)> = Vec::new();
    let mut attempts = 0;
    while cubes.len() < count {
        attempts += 1;
        if attempts > 10_000 {
            return Err(Error::Geometry(format!("could not place {count} disjoint cubes")));
        }
        let side = 2 * rng.gen_range(1..=(npts / 16).max(1));
        let mut start = [0usize; 3];
        for s in start.iter_mut().take(n) {
            *s = rng.gen_range(0..=npts - side);
        }
        let cube = GridCube { start, side };
        let clear = cubes.iter().all(|(_, c)| {
            (0..n).any(|a| cube.start[a] >= c.start[a] + c.side || c.start[a] >= cube.start[a] + cube.side)
        });
        if clear {
            cubes.push((rng.gen_range(0.5..2.0) * sign(rng), cube));
        }
    }
    Ok(cubes)
}

/// Renders `Σ λ_j χ_{Q_j}` on the grid.
pub fn render_simple(grid: &Grid, cubes: &[(f64, GridCube)]) -> Vec<f64> {
    let n = grid.dim();
    let mut out = vec![0.0; grid.len()];
    for (i, v) in out.iter_mut().enumerate() {
        let mi = grid.multi_index(i);
        for (lambda, c) in cubes {
            if (0..n).all(|a| mi[a] >= c.start[a] && mi[a] < c.start[a] + c.side) {
                *v += lambda;
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureKind {
    Atom,
    ClosedField,
    BmoField,
    TentAtom,
    SimpleFunction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureParams {
    #[serde(default = "one")]
    pub degree: usize,
    #[serde(default = "one")]
    pub count: usize,
    #[serde(default)]
    pub case: Option<BallCase>,
}

fn one() -> usize {
    1
}

impl Default for FixtureParams {
    fn default() -> Self {
        Self { degree: 1, count: 1, case: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FixtureManifest {
    pub kind: FixtureKind,
    pub seed: u64,
    pub params: FixtureParams,
    pub files: Vec<String>,
    pub hashes: Vec<String>,
    /// Cubes of a simple function, or ball of an atom.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cubes: Option<Vec<(f64, GridCube)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ball: Option<(Vec<f64>, f64)>,
}

/// Writes one fixture to `dir` and returns its manifest.
pub fn generate_fixture(
    grid: &Grid,
    kind: FixtureKind,
    params: &FixtureParams,
    seed: u64,
    dir: &Path,
) -> Result<FixtureManifest> {
    std::fs::create_dir_all(dir)?;
    let mut rng = rng(seed);
    let mut manifest =
        FixtureManifest { kind, seed, params: params.clone(), files: vec![], hashes: vec![], cubes: None, ball: None };
    let mut forms = Vec::new();
    match kind {
        FixtureKind::Atom => {
            let atom = closed_atom(grid, &mut rng, params.degree, params.case.unwrap_or(BallCase::II))?;
            manifest.ball = Some((atom.ball.center[..grid.dim()].to_vec(), atom.ball.radius));
            forms.push(("atom.dff".to_string(), atom.form));
        }
        FixtureKind::ClosedField => {
            forms.push(("field.dff".to_string(), closed_field(grid, &mut rng, params.degree, params.count)?));
        }
        FixtureKind::BmoField => forms.push(("bmo.dff".to_string(), bmo_field(grid, &mut rng)?)),
        FixtureKind::TentAtom => {
            let atom = tent_atom(grid, &mut rng, params.degree)?;
            manifest.ball = Some((atom.ball.center[..grid.dim()].to_vec(), atom.ball.radius));
            let field = atom.to_field()?;
            let mut bytes = Vec::new();
            field.write(&mut bytes)?;
            std::fs::write(dir.join("tent.stf"), &bytes)?;
            manifest.files.push("tent.stf".into());
            manifest.hashes.push(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect());
        }
        FixtureKind::SimpleFunction => {
            let cubes = simple_function(grid, &mut rng, params.count)?;
            let values = render_simple(grid, &cubes);
            manifest.cubes = Some(cubes);
            forms.push(("simple.dff".to_string(), Form::top(*grid, values)?));
        }
    }
    for (name, f) in forms {
        save_dff(&f, &dir.join(&name))?;
        manifest.hashes.push(form_hash(&f));
        manifest.files.push(name);
    }
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Grid-independent description of a closed `(u, v)` pair: a closed 1-form
/// atom and a logarithmic BMO 1-form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSpec {
    pub center: Vec<f64>,
    pub radius: f64,
    pub weights: Vec<f64>,
    pub factors: Vec<(AxisFactor, f64)>,
}

/// Parameters live on the lattice `ℤ/8`, so the pair renders identically on
/// every grid with `h` dividing `1/8`.
pub fn pair_spec(dim: usize, rng: &mut ChaCha8Rng) -> PairSpec {
    let radius = rng.gen_range(0.5..1.25);
    let center = (0..dim).map(|_| snap(rng.gen_range(-1.0..1.0), 0.125)).collect();
    let weights = vec![rng.gen_range(0.5..1.5) * sign(rng)];
    let factors = (0..dim).map(|_| (random_axis_factor(rng, 0.125), rng.gen_range(0.5..1.5) * sign(rng))).collect();
    PairSpec { center, radius, weights, factors }
}

impl PairSpec {
    pub fn render(&self, grid: &Grid) -> Result<(Form, Form)> {
        let ball = Ball::new(&self.center, self.radius)?;
        let profile = AtomProfile { weights: self.weights.clone(), direction: [1.0, 0.0, 0.0] };
        let u = make_atom(grid, &ball, &theta_triple(grid.dim())?, 1, true, &profile, &AtomTolerances::default())?;
        let comps = self
            .factors
            .iter()
            .enumerate()
            .map(|(axis, (f, c))| f.sample(grid, axis).into_iter().map(|v| c * v).collect())
            .collect();
        Ok((u.form, Form::from_components(*grid, 1, comps)?))
    }
}
