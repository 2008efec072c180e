use mohardy::atoms::{d_residual, validate_atom, AtomTolerances};
use mohardy::factorize::BallCase;
use mohardy::fixtures::*;
use mohardy::forms::load_dff;
use mohardy::maximal::SpaceTimeField;
use mohardy::Grid;

#[test]
fn atom_fixtures_validate() {
    let g = Grid::default_2d();
    for (degree, case) in [(1, BallCase::I), (1, BallCase::II), (2, BallCase::I), (2, BallCase::II)] {
        let atom = closed_atom(&g, &mut rng(degree as u64), degree, case).unwrap();
        assert!(validate_atom(&atom, &AtomTolerances::default()).unwrap().passed);
    }
}

#[test]
fn fixture_files_round_trip() {
    let g = Grid::default_2d();
    let dir = tempfile::tempdir().unwrap();
    let params = FixtureParams { degree: 1, count: 3, case: None };
    let m = generate_fixture(&g, FixtureKind::ClosedField, &params, 7, dir.path()).unwrap();
    let field = load_dff(&dir.path().join(&m.files[0])).unwrap();
    assert_eq!(form_hash(&field), m.hashes[0]);
    assert!(d_residual(&field).unwrap() <= 1e-10);
    let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    let back: FixtureManifest = serde_json::from_str(&text).unwrap();
    assert_eq!(back.hashes, m.hashes);

    let params = FixtureParams { degree: 2, count: 1, case: Some(BallCase::I) };
    let m = generate_fixture(&g, FixtureKind::Atom, &params, 3, dir.path()).unwrap();
    assert!(m.ball.is_some());

    let m = generate_fixture(&g, FixtureKind::TentAtom, &FixtureParams::default(), 3, dir.path()).unwrap();
    let bytes = std::fs::read(dir.path().join("tent.stf")).unwrap();
    assert!(SpaceTimeField::read(bytes.as_slice()).is_ok());
    assert_eq!(m.files, vec!["tent.stf".to_string()]);

    let params = FixtureParams { degree: 2, count: 5, case: None };
    let m = generate_fixture(&g, FixtureKind::SimpleFunction, &params, 3, dir.path()).unwrap();
    assert_eq!(m.cubes.unwrap().len(), 5);
}

#[test]
fn seeds_give_distinct_fields_and_repeat_exactly() {
    let g = Grid::default_2d();
    let a = closed_field(&g, &mut rng(1), 1, 2).unwrap();
    let b = closed_field(&g, &mut rng(2), 1, 2).unwrap();
    let c = closed_field(&g, &mut rng(1), 1, 2).unwrap();
    assert_ne!(form_hash(&a), form_hash(&b));
    assert_eq!(form_hash(&a), form_hash(&c));
    let u = bmo_field(&g, &mut rng(1)).unwrap();
    let v = bmo_field(&g, &mut rng(2)).unwrap();
    assert_ne!(form_hash(&u), form_hash(&v));
}

#[test]
fn params_reject_unknown_fields() {
    assert!(serde_json::from_str::<FixtureParams>(r#"{"degree": 2, "radius": 1}"#).is_err());
    let p: FixtureParams = serde_json::from_str(r#"{"case": "II"}"#).unwrap();
    assert_eq!(p.degree, 1);
    assert_eq!(p.case, Some(BallCase::II));
    let k: FixtureKind = serde_json::from_str(r#""closed_field""#).unwrap();
    assert_eq!(k, FixtureKind::ClosedField);
}

#[test]
fn pair_specs_render_on_refined_grids() {
    let spec = pair_spec(2, &mut rng(4));
    let coarse = Grid::default_2d();
    let fine = Grid::new(2, 128, 4.0).unwrap();
    let (u, v) = spec.render(&coarse).unwrap();
    let (uf, vf) = spec.render(&fine).unwrap();
    assert_eq!(u.degree(), 1);
    assert_eq!(v.degree(), 1);
    assert!(d_residual(&u).unwrap() <= 1e-10 && d_residual(&uf).unwrap() <= 1e-10);
    assert!((v.max_abs() - vf.max_abs()).abs() <= 0.1 * v.max_abs());
}
