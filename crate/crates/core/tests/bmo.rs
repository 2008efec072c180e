use std::f64::consts::E;

use mohardy::bmo::*;
use mohardy::factorize::BallCase;
use mohardy::fixtures::{bmo_field, closed_atom, rng};
use mohardy::forms::{exterior_derivative, Form};
use mohardy::growth::GrowthFunction;
use mohardy::{Ball, Grid};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Bound on `‖min(log(e+2|x|), log(e+10))‖_{BMO⁺}` at the default grid.
const MIN_LOG_BMO_PLUS: f64 = 2.5;
/// Bound on `BMO⁺(min(g₁, g₂)) / max(BMO⁺ g₁, BMO⁺ g₂)` for the log fixtures.
const MIN_OF_TWO_FACTOR: f64 = 2.0;
/// Bound on the John-Nirenberg certificate over `‖g‖²_{BMO^θ}` with `q' = 2`.
const JOHN_NIRENBERG: f64 = 50.0;

fn radial(grid: &Grid, f: impl Fn(f64) -> f64) -> Form {
    let v = (0..grid.len())
        .map(|i| {
            let p = grid.point(i);
            f((p[0] * p[0] + p[1] * p[1]).sqrt())
        })
        .collect();
    Form::scalar(*grid, v).unwrap()
}

fn random_scalar(grid: &Grid, seed: u64) -> Form {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Form::scalar(*grid, (0..grid.len()).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// `sup_B |B|⁻¹ Σ_B |g - g_B| hⁿ` with balls enumerated from scratch.
fn seminorm_oracle(grid: &Grid, g: &[f64]) -> f64 {
    let l = grid.half_len();
    let mut best = 0.0f64;
    let mut r = l;
    while r > grid.spacing() && grid.points() as f64 * r / (2.0 * l) >= 2.0 - 1e-12 {
        let k = ((l - r) / r + 1e-9).floor() as i64;
        for i in -k..=k {
            for j in -k..=k {
                let (cx, cy) = (i as f64 * r, j as f64 * r);
                let cells: Vec<usize> = (0..grid.len())
                    .filter(|&c| {
                        let p = grid.point(c);
                        (p[0] - cx).powi(2) + (p[1] - cy).powi(2) < r * r
                    })
                    .collect();
                let mean = cells.iter().map(|&c| g[c]).sum::<f64>() / cells.len() as f64;
                let osc = cells.iter().map(|&c| (g[c] - mean).abs()).sum::<f64>() / cells.len() as f64;
                best = best.max(osc);
            }
        }
        r /= 2.0;
    }
    best
}

#[test]
fn seminorm_matches_brute_force() {
    let g = Grid::new(2, 16, 2.0).unwrap();
    let f = random_scalar(&g, 1);
    let got = bmo_seminorm(&f, &dyadic_balls(&g)).unwrap();
    let oracle = seminorm_oracle(&g, &f.components()[0]);
    assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
}

#[test]
fn constants_have_no_oscillation() {
    let g = Grid::default_2d();
    let balls = dyadic_balls(&g);
    let th = GrowthFunction::theta();
    let c = Form::scalar(g, vec![-1.75; g.len()]).unwrap();
    assert_eq!(bmo_wp_norm(&c, &th, &balls).unwrap(), 0.0);
    assert_eq!(bmo_seminorm(&c, &balls).unwrap(), 0.0);
    assert_eq!(john_nirenberg_certificate(&c, &th, 2.0, &balls).unwrap(), 0.0);
    assert!((bmo_plus_norm(&c, &balls).unwrap() - 1.75).abs() < 1e-12);
}

#[test]
fn oscillation_functionals_ignore_constants() {
    let g = Grid::default_2d();
    let balls = dyadic_balls(&g);
    let th = GrowthFunction::theta();
    let f = bmo_field(&g, &mut rng(3)).unwrap();
    let shifted = f.map_components(|c| c.iter().map(|v| v + 4.5).collect());
    let a = bmo_wp_norm(&f, &th, &balls).unwrap();
    let b = bmo_wp_norm(&shifted, &th, &balls).unwrap();
    assert!((a - b).abs() <= 1e-12 * a);
    let a = john_nirenberg_certificate(&f, &th, 2.0, &balls).unwrap();
    let b = john_nirenberg_certificate(&shifted, &th, 2.0, &balls).unwrap();
    assert!((a - b).abs() <= 1e-10 * a);
}

#[test]
fn bmo_plus_is_homogeneous() {
    let g = Grid::default_2d();
    let balls = dyadic_balls(&g);
    let f = bmo_field(&g, &mut rng(4)).unwrap();
    let a = bmo_plus_norm(&f, &balls).unwrap();
    for c in [-3.0, 0.5, 7.0] {
        let b = bmo_plus_norm(&f.scale(c), &balls).unwrap();
        assert!((b - c.abs() * a).abs() <= 1e-12 * b);
    }
}

#[test]
fn report_is_consistent() {
    let g = Grid::default_2d();
    let balls = dyadic_balls(&g);
    let th = GrowthFunction::theta();
    let f = bmo_field(&g, &mut rng(5)).unwrap();
    let r = bmo_report(&f, &th, 2.0, &balls).unwrap();
    assert_eq!(r.bmo_wp, bmo_wp_norm(&f, &th, &balls).unwrap());
    assert!(r.bmo_plus >= bmo_seminorm(&f, &balls).unwrap());
    assert!(r.worst_radius > 0.0 && r.worst_center.len() == 2 && r.jn_value > 0.0);
    assert!(bmo_wp_norm(&f, &th, &[]).is_err());
    assert!(john_nirenberg_certificate(&f, &th, 1.0, &balls).is_err());
}

#[test]
fn truncated_logarithm_is_in_bmo_plus() {
    let g = Grid::default_2d();
    let balls = dyadic_balls(&g);
    let cap = (E + 10.0).ln();
    let log2 = radial(&g, |r| (E + 2.0 * r).ln());
    let flat = Form::scalar(g, vec![cap; g.len()]).unwrap();
    let min = radial(&g, |r| (E + 2.0 * r).ln().min(cap));
    let value = bmo_plus_norm(&min, &balls).unwrap();
    assert!(value.is_finite() && value <= MIN_LOG_BMO_PLUS, "{value}");
    let larger = bmo_plus_norm(&log2, &balls).unwrap().max(bmo_plus_norm(&flat, &balls).unwrap());
    assert!(value <= MIN_OF_TWO_FACTOR * larger);
    let th = GrowthFunction::theta();
    assert!(bmo_wp_norm(&min, &th, &balls).unwrap().is_finite());
}

#[test]
fn minimum_of_two_log_fixtures_stays_bounded() {
    let g = Grid::default_2d();
    let balls = dyadic_balls(&g);
    let mut r = rng(6);
    for _ in 0..10 {
        let (a, b) = (r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0));
        let s = r.gen_range(0.5..2.0);
        let g1 = radial(&g, |x| (E + s * x).ln());
        let shift = (0..g.len())
            .map(|i| {
                let p = g.point(i);
                (E + 1.0 / ((p[0] - a).powi(2) + (p[1] - b).powi(2)).sqrt()).ln()
            })
            .collect();
        let g2 = Form::scalar(g, shift).unwrap();
        let min = Form::scalar(g, g1.components()[0].iter().zip(&g2.components()[0]).map(|(x, y)| x.min(*y)).collect())
            .unwrap();
        let larger = bmo_plus_norm(&g1, &balls).unwrap().max(bmo_plus_norm(&g2, &balls).unwrap());
        let value = bmo_plus_norm(&min, &balls).unwrap();
        assert!(value <= MIN_OF_TWO_FACTOR * larger, "{value} vs {larger}");
    }
}

#[test]
fn john_nirenberg_certificate_is_bounded_on_log_fixtures() {
    let g = Grid::default_2d();
    let balls = dyadic_balls(&g);
    let th = GrowthFunction::theta();
    let mut r = rng(7);
    for _ in 0..10 {
        let f = bmo_field(&g, &mut r).unwrap();
        let w = bmo_wp_norm(&f, &th, &balls).unwrap();
        let jn = john_nirenberg_certificate(&f, &th, 2.0, &balls).unwrap();
        assert!(jn <= JOHN_NIRENBERG * w * w, "{jn} vs {w}");
    }
}

#[test]
fn closed_forms_annihilate_closed_atoms() {
    let g = Grid::default_2d();
    let mut r = rng(8);
    for case in [BallCase::I, BallCase::II, BallCase::I, BallCase::II] {
        let atom = closed_atom(&g, &mut r, 1, case).unwrap();
        let v = bmo_field(&g, &mut r).unwrap();
        assert!(exterior_derivative(&v).unwrap().max_abs() < 1e-12);
        let p = pairing(&v, &atom.form).unwrap();
        assert!(p.abs() <= 1e-8 * atom.form.l2_norm() * v.l2_norm(), "{p}");
    }
    // a constant 0-form pairs to zero with a zero-mean top-degree atom
    let top = closed_atom(&g, &mut r, 2, BallCase::II).unwrap();
    let c = Form::scalar(g, vec![3.0; g.len()]).unwrap();
    assert!(pairing(&c, &top.form).unwrap().abs() < 1e-12 * top.form.l2_norm());
    assert!(pairing(&top.form, &top.form).is_err());
}

#[test]
fn pairing_detects_non_closed_forms() {
    let g = Grid::default_2d();
    let atom = closed_atom(&g, &mut rng(9), 1, BallCase::II).unwrap();
    let c = atom.ball.center;
    let v = (0..g.len())
        .map(|i| {
            let p = g.point(i);
            (-(p[0] - c[0]).powi(2) - (p[1] - c[1]).powi(2)).exp() * (p[1] - c[1])
        })
        .collect();
    let g_open = Form::from_components(g, 1, vec![v, vec![0.0; g.len()]]).unwrap();
    assert!(pairing(&g_open, &atom.form).unwrap().abs() > 1e-6 * atom.form.l2_norm() * g_open.l2_norm());
}

#[test]
fn unit_cube_needs_room() {
    let g = Grid::new(2, 16, 0.5).unwrap();
    assert!(unit_cube_cells(&g).is_err());
    let f = Form::scalar(g, vec![1.0; g.len()]).unwrap();
    let ball = Ball::new(&[0.0, 0.0], 0.25).unwrap();
    assert!(bmo_plus_norm(&f, &[ball]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn bmo_wp_is_a_seminorm(sa in 0u64..500, sb in 0u64..500, c in -4.0f64..4.0) {
        let g = Grid::new(2, 16, 2.0).unwrap();
        let balls = dyadic_balls(&g);
        let th = GrowthFunction::theta();
        let a = random_scalar(&g, sa);
        let b = random_scalar(&g, sb);
        let na = bmo_wp_norm(&a, &th, &balls).unwrap();
        let nb = bmo_wp_norm(&b, &th, &balls).unwrap();
        let sum = bmo_wp_norm(&(&a + &b), &th, &balls).unwrap();
        prop_assert!(sum <= (na + nb) * (1.0 + 1e-12));
        let scaled = bmo_wp_norm(&a.scale(c), &th, &balls).unwrap();
        prop_assert!((scaled - c.abs() * na).abs() <= 1e-12 * na.max(1e-300));
    }

    #[test]
    fn pairing_is_bilinear(sa in 0u64..500, sb in 0u64..500, sc in 0u64..500, c in -4.0f64..4.0) {
        let g = Grid::new(2, 16, 2.0).unwrap();
        let f = random_scalar(&g, sa);
        let top = |s: u64| Form::top(g, random_scalar(&g, s).components()[0].clone()).unwrap();
        let (x, y) = (top(sb), top(sc));
        let lhs = pairing(&f, &(&x + &y.scale(c))).unwrap();
        let rhs = pairing(&f, &x).unwrap() + c * pairing(&f, &y).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
    }
}
