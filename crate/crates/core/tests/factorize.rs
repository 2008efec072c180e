use std::f64::consts::E;

use mohardy::bmo::{bmo_plus_norm, dyadic_balls};
use mohardy::factorize::*;
use mohardy::fixtures::{closed_atom, closed_field, pair_spec, rng, simple_function};
use mohardy::forms::{binomial, exterior_derivative, Form};
use mohardy::maximal::h1_norm;
use mohardy::{Ball, Grid};
use proptest::prelude::*;

/// Bound on `Σ ‖u‖_{H¹} ‖v‖_{BMO⁺}` for a single normalized atom.
const ATOM_NORM_SUM: f64 = 12.0;
/// Bound on `‖G_k‖_{BMO⁺}` for case-I factors.
const FACTOR_BMO_PLUS: f64 = 2.5;
/// Lower bound on `γ / (log(e + |c|) + |log r|)`.
const GAMMA_RATIO: f64 = 0.5;
/// Bound on `Σ ‖u_j‖_{H¹} ‖v_j‖_∞ / ‖f‖_{L¹}` for Haar splittings.
const L1_RATIO: f64 = 4.0;
/// Bound on `‖u ∧ v‖_{H^log} / (‖u‖_{H¹} ‖v‖_{BMO⁺})`.
const DIVCURL_RATIO: f64 = 0.5;

#[test]
fn case_one_gammas_match_the_formulas() {
    let far = axis_factor_case1(10.0, 0.5).unwrap();
    assert!(matches!(far, AxisFactor::Far { .. }));
    assert!((far.gamma().unwrap() - (E + 10.0).ln()).abs() < 1e-15);
    assert!((far.gamma().unwrap() - 2.5427).abs() < 1e-3);
    let near = axis_factor_case1(1.0, 0.125).unwrap();
    assert!(matches!(near, AxisFactor::Near { .. }));
    assert!((near.gamma().unwrap() - (E + 8.0).ln()).abs() < 1e-15);
    assert!((near.gamma().unwrap() - 2.3716).abs() < 1e-3);
    assert!(axis_factor_case1(1.0, 0.75).is_err());
    assert!(axis_factor_case1(5.0, 1.5).is_err());
    assert_eq!(AxisFactor::Growing.eval(0.0), 1.0);
    assert!((AxisFactor::Growing.eval(2.0) - (E + 4.0).ln()).abs() < 1e-15);
}

#[test]
fn factors_are_constant_on_the_slab() {
    let g = Grid::default_2d();
    for (c, r) in [(2.0, 0.5), (1.0, 0.25), (-3.0, 1.0), (0.75, 0.3125)] {
        let ball = Ball::new(&[c, 0.0], r).unwrap();
        let (values, gamma) = bmo_factor_case1(&g, &ball, 0).unwrap();
        let slab: Vec<f64> = (0..g.len()).filter(|&i| (g.point(i)[0] - c).abs() < r).map(|i| values[i]).collect();
        let spread =
            slab.iter().copied().fold(f64::NEG_INFINITY, f64::max) - slab.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(spread, 0.0);
        assert_eq!(slab[0], gamma);
        // depends on x_0 only
        for i in 0..g.len() {
            assert_eq!(values[i], values[g.shift(i, 1, 5)]);
        }
    }
}

#[test]
fn lemma_bounds_hold_on_random_case_one_balls() {
    let g = Grid::default_2d();
    let balls = dyadic_balls(&g);
    let mut r = rng(21);
    for _ in 0..50 {
        let ball = mohardy::fixtures::random_ball(&g, &mut r, BallCase::I).unwrap();
        for axis in 0..2 {
            let (values, gamma) = bmo_factor_case1(&g, &ball, axis).unwrap();
            assert!(gamma >= GAMMA_RATIO * gamma_lower_bound(ball.center[axis], ball.radius));
            let bmo = bmo_plus_norm(&Form::scalar(g, values).unwrap(), &balls).unwrap();
            assert!(bmo <= FACTOR_BMO_PLUS, "{bmo}");
        }
    }
}

#[test]
fn pair_counts_follow_the_binomial() {
    assert_eq!(pair_count(2, 1, 1), 2);
    assert_eq!(pair_count(3, 1, 1), 3);
    assert_eq!(pair_count(3, 1, 2), 3);
    assert_eq!(pair_count(3, 2, 1), 3);
    for n in 2..=3 {
        for l in 1..n {
            for m in 1..=(n - l) {
                assert_eq!(pair_count(n, l, m), binomial(n, l + m - 1));
            }
        }
    }
}

fn check_atom_factorization(fact: &AtomFactorization, atom: &Form, expected_pairs: usize) {
    assert_eq!(fact.pairs.len(), expected_pairs);
    assert!(fact.residual <= 1e-6, "{}", fact.residual);
    let mut total = Form::zeros(*atom.grid(), atom.degree()).unwrap();
    for p in &fact.pairs {
        total.axpy(1.0, &p.product().unwrap()).unwrap();
        for f in [&p.u, &p.v] {
            if f.degree() < f.grid().dim() && f.max_abs() > 0.0 {
                let d = exterior_derivative(f).unwrap().l2_norm() * f.grid().spacing() / f.l2_norm();
                assert!(d <= 1e-10, "d residual {d}");
            }
        }
        assert!(p.u.means().iter().all(|m| m.abs() <= 1e-12 * p.u.max_abs().max(1e-300)));
        if let Some(v) = &p.u_validation {
            assert!(v.passed, "{:?}", v.failures);
        }
    }
    assert!((&total - atom).l2_norm() <= 1e-6 * atom.l2_norm());
    assert!(fact.norm_sum <= ATOM_NORM_SUM, "{}", fact.norm_sum);
}

#[test]
fn case_one_atoms_factor_exactly() {
    let g = Grid::default_2d();
    let ctx = FactorContext::new(g).unwrap();
    let opts = FactorizeOptions::default();
    let mut r = rng(31);
    for _ in 0..6 {
        let atom = closed_atom(&g, &mut r, 2, BallCase::I).unwrap();
        let fact = factor_atom_case1(&ctx, &atom.form, &atom.ball, 1, 1, &opts).unwrap();
        assert!(fact.pairs.iter().all(|p| p.factor.case() == BallCase::I));
        check_atom_factorization(&fact, &atom.form, 2);
    }
}

#[test]
fn case_two_atoms_factor_exactly() {
    let g = Grid::default_2d();
    let ctx = FactorContext::new(g).unwrap();
    let opts = FactorizeOptions::default();
    let mut r = rng(32);
    for _ in 0..6 {
        let atom = closed_atom(&g, &mut r, 2, BallCase::II).unwrap();
        let fact = factor_atom(&ctx, &atom.form, &atom.ball, 1, 1, &opts).unwrap();
        assert!(fact.pairs.iter().all(|p| p.factor == AxisFactor::Growing));
        check_atom_factorization(&fact, &atom.form, 2);
        assert!(factor_atom_case1(&ctx, &atom.form, &atom.ball, 1, 1, &opts).is_err());
    }
    let centered = Ball::new(&[0.0, 0.0], 2.0).unwrap();
    let atom = mohardy::atoms::make_atom(
        &g,
        &centered,
        &mohardy::growth::AdmissibleTriple::new(mohardy::GrowthFunction::theta(), 2.0, 0, 2).unwrap(),
        2,
        true,
        &Default::default(),
        &Default::default(),
    )
    .unwrap();
    let fact = factor_atom(&ctx, &atom.form, &atom.ball, 1, 1, &opts).unwrap();
    assert!(fact.pairs.iter().all(|p| p.factor.case() == BallCase::II));
    check_atom_factorization(&fact, &atom.form, 2);
}

#[test]
fn forced_case_two_also_reconstructs() {
    let g = Grid::default_2d();
    let ctx = FactorContext::new(g).unwrap();
    let atom = closed_atom(&g, &mut rng(33), 2, BallCase::I).unwrap();
    let fact = factor_atom_case2(&ctx, &atom.form, &atom.ball, 1, 1, &FactorizeOptions::default()).unwrap();
    check_atom_factorization(&fact, &atom.form, 2);
}

#[test]
fn three_dimensional_atoms_split_into_three_pairs() {
    let g = Grid::new(3, 32, 4.0).unwrap();
    let ctx = FactorContext::new(g).unwrap();
    let opts = FactorizeOptions::default();
    let atom = closed_atom(&g, &mut rng(34), 2, BallCase::II).unwrap();
    let fact = factor_atom(&ctx, &atom.form, &atom.ball, 1, 1, &opts).unwrap();
    assert_eq!(fact.pairs.len(), pair_count(3, 1, 1));
    assert!(fact.residual <= 1e-6);
    let atom = closed_atom(&g, &mut rng(35), 3, BallCase::II).unwrap();
    let fact = factor_atom(&ctx, &atom.form, &atom.ball, 1, 2, &opts).unwrap();
    assert_eq!(fact.pairs.len(), pair_count(3, 1, 2));
    assert!(fact.residual <= 1e-6);
}

#[test]
fn factorization_rejects_bad_degrees() {
    let g = Grid::default_2d();
    let ctx = FactorContext::new(g).unwrap();
    let atom = closed_atom(&g, &mut rng(36), 2, BallCase::II).unwrap();
    let opts = FactorizeOptions::default();
    assert!(factor_atom(&ctx, &atom.form, &atom.ball, 2, 1, &opts).is_err());
    assert!(factor_atom(&ctx, &atom.form, &atom.ball, 0, 2, &opts).is_err());
    let bad_r = FactorizeOptions { r: 2.5, ..opts };
    assert!(factor_atom(&ctx, &atom.form, &atom.ball, 1, 1, &bad_r).is_err());
    assert!(weak_factorize(&atom.form, 1, 2, &opts).is_err());
}

#[test]
fn weak_factorization_reconstructs_closed_fields() {
    let g = Grid::default_2d();
    let opts = FactorizeOptions::default();
    let f = closed_field(&g, &mut rng(41), 2, 3).unwrap();
    let wf = weak_factorize(&f, 1, 1, &opts).unwrap();
    let c = &wf.certificate;
    assert!(c.reconstruction_error <= 1e-3, "{}", c.reconstruction_error);
    assert!(c.max_closed_residual <= 1e-10);
    assert!(c.max_atom_residual <= 1e-6);
    assert_eq!(c.pairs, 2 * c.atoms);
    assert_eq!(c.case_counts[0] + c.case_counts[1], c.pairs);
    assert!(c.ratio.is_finite() && c.ratio > 0.0);
    let dir = tempfile::tempdir().unwrap();
    wf.save(dir.path()).unwrap();
    assert!(dir.path().join("pairs/000_u.dff").exists());
    assert!(dir.path().join("certificate.json").exists());
    let zero = weak_factorize(&Form::zeros(g, 2).unwrap(), 1, 1, &opts).unwrap();
    assert!(zero.pairs.is_empty());
}

#[test]
fn single_atom_input_factors_like_the_atom() {
    let g = Grid::default_2d();
    let opts = FactorizeOptions::default();
    let atom = closed_atom(&g, &mut rng(42), 2, BallCase::I).unwrap();
    let wf = weak_factorize(&atom.form, 1, 1, &opts).unwrap();
    assert!(wf.certificate.reconstruction_error <= 1e-3);
    assert!(wf.certificate.max_atom_residual <= 1e-6);
}

#[test]
fn scalar_factorization_yields_div_free_and_curl_free_fields() {
    let g = Grid::default_2d();
    let f = closed_field(&g, &mut rng(43), 2, 2).unwrap();
    let sf = scalar_weak_factorize(&g, &f.components()[0], &FactorizeOptions::default()).unwrap();
    assert!(sf.reconstruction_error <= 1e-3, "{}", sf.reconstruction_error);
    assert_eq!(sf.scalar_pairs.len(), sf.factorization.pairs.len());
    assert!(sf.scalar_pairs.len() <= 4 * sf.factorization.certificate.atoms);
    for vp in &sf.vector_pairs {
        assert!(vp.divergence_residual <= 1e-10, "{}", vp.divergence_residual);
        assert!(vp.curl_residual <= 1e-10, "{}", vp.curl_residual);
        let dot: Vec<f64> = (0..g.len()).map(|i| (0..2).map(|j| vp.field[j][i] * vp.gradient[j][i]).sum()).collect();
        assert!(dot.iter().all(|x| x.is_finite()));
    }
}

#[test]
fn unit_cube_splits_into_one_haar_pair() {
    let g = Grid::default_2d();
    let cube = GridCube { start: [32, 32, 0], side: 8 };
    let fact = l1_factorize(&g, &[(1.0, cube)], 1e-10).unwrap();
    assert_eq!(fact.pairs.len(), 1);
    let p = &fact.pairs[0];
    assert!(p.u.iter().sum::<f64>().abs() < 1e-12);
    for i in 0..g.len() {
        let x = g.point(i);
        let inside = (0..2).all(|a| x[a] > 0.0 && x[a] < 1.0);
        assert_eq!(p.u[i] * p.v[i], if inside { 1.0 } else { 0.0 });
    }
    assert_eq!(fact.reconstruction_error, 0.0);
    assert!(l1_factorize(&g, &[], 1e-10).unwrap().pairs.is_empty());
    assert!(l1_factorize(&g, &[(1.0, cube), (2.0, GridCube { start: [36, 36, 0], side: 4 })], 1e-10).is_err());
    assert!(l1_factorize(&g, &[(1.0, GridCube { start: [0, 0, 0], side: 3 })], 1e-10).is_err());
}

#[test]
fn simple_functions_factor_with_bounded_ratio() {
    let g = Grid::default_2d();
    let mut r = rng(44);
    for _ in 0..3 {
        let cubes = simple_function(&g, &mut r, 5).unwrap();
        let fact = l1_factorize(&g, &cubes, 1e-10).unwrap();
        assert_eq!(fact.pairs.len(), 5);
        assert!(fact.reconstruction_error < 1e-14);
        assert!(fact.ratio <= L1_RATIO, "{}", fact.ratio);
    }
}

#[test]
fn divcurl_degenerate_cases() {
    let g = Grid::default_2d();
    let balls = dyadic_balls(&g);
    let (u, _) = pair_spec(2, &mut rng(45)).render(&g).unwrap();
    let constant = Form::from_components(g, 1, vec![vec![2.0; g.len()], vec![0.0; g.len()]]).unwrap();
    let rep = divcurl_check(&u, &constant, &balls, 1e-8, 1e-10).unwrap();
    assert!((rep.bmo_plus_v - 2.0).abs() < 1e-12);
    assert!((rep.h1_u - h1_norm(&u, 1e-8).unwrap()).abs() < 1e-12);
    assert!(rep.ratio.is_finite() && rep.ratio > 0.0);
    let zero = Form::zeros(g, 1).unwrap();
    assert_eq!(divcurl_check(&zero, &constant, &balls, 1e-8, 1e-10).unwrap().ratio, 0.0);
    let top = Form::zeros(g, 2).unwrap();
    assert!(divcurl_check(&u, &top, &balls, 1e-8, 1e-10).is_err());
}

#[test]
fn divcurl_ratio_is_bounded_on_random_pairs() {
    let g = Grid::default_2d();
    let balls = dyadic_balls(&g);
    let mut r = rng(46);
    for _ in 0..20 {
        let (u, v) = pair_spec(2, &mut r).render(&g).unwrap();
        let rep = divcurl_check(&u, &v, &balls, 1e-8, 1e-10).unwrap();
        assert!(rep.ratio.is_finite() && rep.ratio <= DIVCURL_RATIO, "{}", rep.ratio);
        assert!(rep.d_residual <= 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn case_one_factor_dominates_the_lower_bound(c in 0.5f64..3.5, r in 0.05f64..1.0) {
        prop_assume!(r <= (c / 2.0).min(1.0));
        let f = axis_factor_case1(c, r).unwrap();
        let gamma = f.gamma().unwrap();
        prop_assert!(gamma >= GAMMA_RATIO * gamma_lower_bound(c, r));
        for s in [-0.999, -0.5, 0.0, 0.5, 0.999] {
            prop_assert_eq!(f.eval(c + s * r), gamma);
        }
        prop_assert!(f.eval(0.0) >= 1.0 - 1e-15 && f.eval(100.0) <= gamma + 1e-15);
    }
}
