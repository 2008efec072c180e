use std::f64::consts::E;

use mohardy::grid::{Ball, Grid};
use mohardy::growth::*;
use mohardy::Form;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-10;

fn theta_direct(x: &[f64], t: f64) -> f64 {
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    t / ((E + r).ln() + (E + t).ln())
}

/// Independent λ-scan: a log-spaced coarse sweep, then a linear sweep of the
/// bracketing interval, each with 10⁴ points.
fn lambda_scan(modular: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let n = 10_000;
    let coarse: Vec<f64> = (0..=n).map(|i| lo * (hi / lo).powf(i as f64 / n as f64)).collect();
    let j = coarse.iter().position(|&l| modular(l) <= 1.0).expect("bracket");
    let (a, b) = (coarse[j - 1], coarse[j]);
    (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).find(|&l| modular(l) <= 1.0).unwrap()
}

fn random_balls(grid: &Grid, count: usize, seed: u64) -> Vec<Ball> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let r = rng.gen_range(0.3..1.5);
            let c: Vec<f64> =
                (0..grid.dim()).map(|_| rng.gen_range(-(grid.half_len() - r)..(grid.half_len() - r))).collect();
            Ball::new(&c, r).unwrap()
        })
        .collect()
}

fn indicator(grid: &Grid, ball: &Ball) -> Vec<f64> {
    ball.mask(grid).iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()
}

#[test]
fn power_norm_of_indicator_is_closed_form() {
    let g = Grid::default_2d();
    for (i, ball) in random_balls(&g, 10, 1).iter().enumerate() {
        let p = [1.0, 0.5, 0.8][i % 3];
        let gf = GrowthFunction::power(p).unwrap();
        let vol = ball.volume(&g);
        let norm = luxembourg_norm(&gf, &g, &indicator(&g, ball), TOL).unwrap();
        assert!((norm / vol.powf(1.0 / p) - 1.0).abs() < 1e-6);
        let chi = chi_ball_norm(&gf, &g, ball, TOL).unwrap();
        assert!((chi / vol.powf(1.0 / p) - 1.0).abs() < 1e-6);
    }
}

#[test]
fn zero_field_has_zero_norm() {
    let g = Grid::default_2d();
    let z = vec![0.0; g.len()];
    assert_eq!(luxembourg_norm(&GrowthFunction::theta(), &g, &z, TOL).unwrap(), 0.0);
    let mut bad = z.clone();
    bad[3] = f64::NAN;
    assert!(luxembourg_norm(&GrowthFunction::theta(), &g, &bad, TOL).is_err());
}

#[test]
fn theta_norm_of_unit_cube_matches_scan() {
    let g = Grid::default_2d();
    let cube: Vec<f64> = (0..g.len())
        .map(|i| {
            let p = g.point(i);
            if (0..2).all(|a| p[a] > 0.0 && p[a] < 1.0) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let norm = luxembourg_norm(&GrowthFunction::theta(), &g, &cube, TOL).unwrap();
    let cells: Vec<[f64; 2]> =
        (0..g.len()).filter(|&i| cube[i] > 0.0).map(|i| [g.point(i)[0], g.point(i)[1]]).collect();
    let vol = g.cell_volume();
    let oracle = lambda_scan(|l| cells.iter().map(|x| vol * theta_direct(x, 1.0 / l)).sum(), 1e-3, 1e3);
    assert!((norm / oracle - 1.0).abs() < 1e-6, "{norm} vs {oracle}");
}

#[test]
fn theta_chi_norm_of_unit_ball_matches_scan() {
    let g = Grid::default_2d();
    let ball = Ball::new(&[0.0, 0.0], 1.0).unwrap();
    let norm = chi_ball_norm(&GrowthFunction::theta(), &g, &ball, TOL).unwrap();
    let pts: Vec<[f64; 2]> = ball.cells(&g).iter().map(|&i| [g.point(i)[0], g.point(i)[1]]).collect();
    let vol = g.cell_volume();
    let oracle = lambda_scan(|l| pts.iter().map(|x| vol * theta_direct(x, 1.0 / l)).sum(), 1e-3, 1e3);
    assert!((norm / oracle - 1.0).abs() < 1e-6);
}

#[test]
fn chi_norm_grows_with_the_ball() {
    let g = Grid::default_2d();
    let th = GrowthFunction::theta();
    let mut prev = 0.0;
    for k in 1..12 {
        let ball = Ball::new(&[0.5, -0.25], 0.25 * k as f64).unwrap();
        let v = chi_ball_norm(&th, &g, &ball, TOL).unwrap();
        assert!(v >= prev);
        prev = v;
    }
}

#[test]
fn ball_mass_closed_forms() {
    let g = Grid::default_2d();
    let ball = Ball::new(&[1.0, 0.5], 1.2).unwrap();
    let lin = GrowthFunction::power(1.0).unwrap();
    let m = wp_ball_mass(&lin, &g, &ball, 3.0).unwrap();
    assert!((m - 3.0 * ball.volume(&g)).abs() < 1e-12);
    assert_eq!(wp_ball_mass(&GrowthFunction::theta(), &g, &ball, 0.0).unwrap(), 0.0);
    let tiny = Ball::new(&[0.0, 0.0], 1e-3).unwrap();
    assert!(wp_ball_mass(&lin, &g, &tiny, 1.0).is_err());
    assert!(wp_ball_mass(&lin, &g, &Ball::new(&[3.9, 0.0], 1.0).unwrap(), 1.0).is_err());
}

#[test]
fn theta_ball_mass_matches_refined_quadrature() {
    let ball = Ball::new(&[0.0, 0.0], 1.0).unwrap();
    let th = GrowthFunction::theta();
    let coarse = Grid::new(2, 64, 4.0).unwrap();
    let fine = Grid::new(2, 128, 4.0).unwrap();
    let finest = Grid::new(2, 1024, 4.0).unwrap();
    let exact = wp_ball_mass(&th, &finest, &ball, 1.0).unwrap();
    let a = wp_ball_mass(&th, &coarse, &ball, 1.0).unwrap();
    let b = wp_ball_mass(&th, &fine, &ball, 1.0).unwrap();
    let oracle: f64 = {
        let vol = fine.cell_volume();
        ball.cells(&fine).iter().map(|&i| vol * theta_direct(&fine.point(i)[..2], 1.0)).sum()
    };
    assert!((b - oracle).abs() < 1e-12 * oracle);
    // the ball boundary dominates: O(h) agreement, improving under refinement
    assert!((a - b).abs() / b < 0.03);
    assert!((b - exact).abs() < (a - exact).abs() + 1e-3 * exact);
    let t_mono: Vec<f64> = (0..8).map(|k| wp_ball_mass(&th, &coarse, &ball, 0.5 * k as f64).unwrap()).collect();
    assert!(t_mono.windows(2).all(|w| w[0] <= w[1]));
}

fn triple(gf: GrowthFunction, q: f64) -> AdmissibleTriple {
    AdmissibleTriple::new(gf, q, 0, 2).unwrap()
}

fn bump(grid: &Grid, ball: &Ball) -> Vec<f64> {
    (0..grid.len())
        .map(|i| {
            let r = ball.distance(grid, &grid.point(i)) / ball.radius;
            if r < 1.0 {
                (-1.0 / (1.0 - r * r)).exp()
            } else {
                0.0
            }
        })
        .collect()
}

#[test]
fn lq_norm_with_linear_growth_is_average() {
    let g = Grid::default_2d();
    let ball = Ball::new(&[-1.0, 1.0], 1.3).unwrap();
    let f = Form::scalar(g, bump(&g, &ball)).unwrap();
    let t = triple(GrowthFunction::power(1.0).unwrap(), 2.0);
    let v = lq_wp_ball_norm(&t, &f, &ball, DEFAULT_LEVEL_RANGE, DEFAULT_LEAK_TOL).unwrap();
    let cells = ball.cells(&g);
    let avg = cells.iter().map(|&i| f.components()[0][i].powi(2)).sum::<f64>() / cells.len() as f64;
    assert!((v - avg.sqrt()).abs() < 1e-12);
}

#[test]
fn lq_norm_of_indicator_is_one() {
    let g = Grid::default_2d();
    let ball = Ball::new(&[0.7, 0.2], 2.0).unwrap();
    for gf in [GrowthFunction::theta(), GrowthFunction::power_weight(1.0, 0.5).unwrap()] {
        let f = Form::scalar(g, indicator(&g, &ball)).unwrap();
        let t = AdmissibleTriple::new(gf, 2.0, 1, 2).unwrap();
        let v = lq_wp_ball_norm(&t, &f, &ball, DEFAULT_LEVEL_RANGE, DEFAULT_LEAK_TOL).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }
}

#[test]
fn lq_norm_rejects_leaky_support() {
    let g = Grid::default_2d();
    let ball = Ball::new(&[0.0, 0.0], 1.0).unwrap();
    let f = Form::scalar(g, bump(&g, &ball.dilate(1.5))).unwrap();
    let t = triple(GrowthFunction::theta(), 2.0);
    assert!(lq_wp_ball_norm(&t, &f, &ball, 20, 1e-10).is_err());
}

#[test]
fn lq_norm_sup_is_stable_under_finer_levels() {
    let g = Grid::default_2d();
    let ball = Ball::new(&[1.5, -0.5], 1.0).unwrap();
    let values = bump(&g, &ball);
    let f = Form::scalar(g, values.clone()).unwrap();
    let t = triple(GrowthFunction::theta(), 2.0);
    let v = lq_wp_ball_norm(&t, &f, &ball, 20, 1e-10).unwrap();
    let cells = ball.cells(&g);
    let mut oracle = 0.0f64;
    for j in -200..=200 {
        let level = 2f64.powf(j as f64 / 10.0);
        let w: Vec<f64> = cells.iter().map(|&i| theta_direct(&g.point(i)[..2], level)).collect();
        let num: f64 = cells.iter().zip(&w).map(|(&i, w)| values[i].powi(2) * w).sum();
        oracle = oracle.max((num / w.iter().sum::<f64>()).sqrt());
    }
    assert!(v <= oracle * (1.0 + 1e-12));
    assert!((v / oracle - 1.0).abs() < 0.01);
}

#[test]
fn muckenhoupt_of_constant_weight_is_one() {
    let g = Grid::default_2d();
    let balls = random_balls(&g, 5, 3);
    let levels = [0.25, 1.0, 8.0];
    let c = check_muckenhoupt(&GrowthFunction::power(1.0).unwrap(), &g, 2.0, &balls, &levels).unwrap();
    assert!((c.sup - 1.0).abs() < 1e-12);
    let single = check_muckenhoupt(&GrowthFunction::power(0.5).unwrap(), &g, 3.0, &balls[..1], &[2.0]).unwrap();
    assert!((single.sup - 1.0).abs() < 1e-12);
    assert!(check_muckenhoupt(&GrowthFunction::theta(), &g, 1.0, &balls, &levels).is_err());
}

#[test]
fn muckenhoupt_of_power_weight_converges() {
    let gf = GrowthFunction::power_weight(1.0, 0.3).unwrap();
    let balls: Vec<Ball> = [(0.0, 0.0, 1.0), (0.5, 0.5, 0.5), (-2.0, 1.0, 1.0), (0.0, 0.0, 2.0)]
        .iter()
        .map(|&(x, y, r)| Ball::new(&[x, y], r).unwrap())
        .collect();
    let a = check_muckenhoupt(&gf, &Grid::new(2, 64, 4.0).unwrap(), 2.0, &balls, &[1.0]).unwrap();
    let b = check_muckenhoupt(&gf, &Grid::new(2, 128, 4.0).unwrap(), 2.0, &balls, &[1.0]).unwrap();
    assert!(a.sup.is_finite() && a.sup >= 1.0);
    assert!((a.sup / b.sup - 1.0).abs() < 0.02, "{} vs {}", a.sup, b.sup);
    let zero = GrowthFunction::custom("vanishing", 1.0, 1.0, |x, t| if x[0] > 0.0 { t } else { 0.0 }).unwrap();
    assert!(check_muckenhoupt(&zero, &Grid::default_2d(), 2.0, &balls[..1], &[1.0]).is_err());
}

/// Measured type constants of θ on the sample lattice, frozen with margin.
/// Lower type p=0.9 measures 1.7534; every p <= 1/2 gives exactly 1.
const THETA_LOWER_TYPE_BOUNDS: [(f64, f64); 3] = [(0.25, 1.0 + 1e-12), (0.5, 1.0 + 1e-12), (0.9, 1.76)];
const THETA_UPPER_TYPE_BOUND: f64 = 1.0 + 1e-12;

#[test]
fn theta_has_uniform_types() {
    let th = GrowthFunction::theta();
    for (p, bound) in THETA_LOWER_TYPE_BOUNDS {
        let c = measure_lower_type(&th, 2, p);
        assert!(c <= bound, "p={p}: {c}");
    }
    // type exactly 1 fails uniformly: the ratio grows like log t
    assert!(measure_lower_type(&th, 2, 1.0) > 4.0);
    assert!(measure_upper_type(&th, 2) <= THETA_UPPER_TYPE_BOUND);
    check_orlicz(&th, 2).unwrap();
}

/// Frozen quasi-triangle constant `∫℘(Σ|f_j|) ≤ C Σ∫℘(|f_j|)`.
const QUASI_TRIANGLE_C: f64 = 1.0 + 1e-12;
/// Frozen constant for `∫_B ℘(x,|f|) ≤ C ℘(B, ‖f‖_{L^q_℘(B)})`.
const BALL_MODULAR_C: f64 = 1.0 + 1e-9;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn power_norm_is_homogeneous(c in 0.01f64..100.0, seed in any::<u64>()) {
        let g = Grid::new(2, 16, 4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cf: Vec<f64> = f.iter().map(|v| c * v).collect();
        for p in [0.5, 1.0] {
            let gf = GrowthFunction::power(p).unwrap();
            let a = luxembourg_norm(&gf, &g, &f, 1e-12).unwrap();
            let b = luxembourg_norm(&gf, &g, &cf, 1e-12).unwrap();
            prop_assert!((b / (c * a) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn theta_norm_is_monotone_in_scale(c1 in 0.01f64..10.0, c2 in 0.01f64..10.0, seed in any::<u64>()) {
        let g = Grid::new(2, 16, 4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (lo, hi) = if c1 < c2 { (c1, c2) } else { (c2, c1) };
        let th = GrowthFunction::theta();
        let a = luxembourg_norm(&th, &g, &f.iter().map(|v| lo * v).collect::<Vec<_>>(), 1e-12).unwrap();
        let b = luxembourg_norm(&th, &g, &f.iter().map(|v| hi * v).collect::<Vec<_>>(), 1e-12).unwrap();
        prop_assert!(a <= b * (1.0 + 1e-10));
    }

    #[test]
    fn theta_modular_is_subadditive(seed in any::<u64>(), terms in 2usize..6) {
        let g = Grid::new(2, 16, 4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let th = GrowthFunction::theta();
        let fams: Vec<Vec<f64>> = (0..terms)
            .map(|_| {
                let s = 10f64.powf(rng.gen_range(-3.0..3.0));
                (0..g.len()).map(|_| s * rng.gen_range(0.0..1.0)).collect()
            })
            .collect();
        let total: Vec<f64> = (0..g.len()).map(|i| fams.iter().map(|f| f[i]).sum()).collect();
        let lhs = th.modular(&g, &total, 1.0);
        let rhs: f64 = fams.iter().map(|f| th.modular(&g, f, 1.0)).sum();
        prop_assert!(lhs <= QUASI_TRIANGLE_C * rhs);
    }

    #[test]
    fn ball_modular_is_controlled_by_lq_norm(seed in any::<u64>(), r in 0.4f64..1.5) {
        let g = Grid::new(2, 32, 4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ball = Ball::new(&[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)], r).unwrap();
        let mask = ball.mask(&g);
        let scale = 10f64.powf(rng.gen_range(-2.0..2.0));
        let f: Vec<f64> = mask.iter().map(|&m| if m { scale * rng.gen_range(-1.0..1.0) } else { 0.0 }).collect();
        let th = GrowthFunction::theta();
        let t = AdmissibleTriple::new(th.clone(), 2.0, 0, 2).unwrap();
        let form = Form::scalar(g, f.clone()).unwrap();
        let norm = lq_wp_ball_norm(&t, &form, &ball, 20, 1e-10).unwrap();
        let lhs = th.modular(&g, &f, 1.0);
        let rhs = wp_ball_mass(&th, &g, &ball, norm).unwrap();
        prop_assert!(lhs <= BALL_MODULAR_C * rhs, "{} vs {}", lhs, rhs);
    }
}
