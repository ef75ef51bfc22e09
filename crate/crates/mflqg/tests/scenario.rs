use mflqg::scenario::{Scenario, ScenarioError, SimConfig, AL_SCENARIO};
use mflqg_core::cost::Kappa;
use mflqg_core::path::CoefficientPath;
use mflqg_core::problem::{KeyKind, KEYS};
use mflqg_core::reference::al_problem;
use mflqg_core::{DMatrix, Dims, Interpolation, MFLQProblem, TimeGrid};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every coefficient random: constants, time-varying paths and families.
fn random_problem(dims: Dims, steps: usize, interp: Interpolation, seed: u64) -> MFLQProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = TimeGrid::new(0.5 + seed as f64 % 3.0, steps).unwrap();
    let mut p = MFLQProblem::zeros(dims, grid, interp).unwrap();
    for spec in KEYS {
        let (r, c) = p.shape_of(spec.key).unwrap();
        // Leave some keys zero so the omission path is exercised.
        if rng.random_bool(0.2) {
            continue;
        }
        let path = |rng: &mut ChaCha8Rng| {
            if rng.random_bool(0.3) {
                let v: f64 = rng.random_range(-2.0..2.0);
                CoefficientPath::constant(DMatrix::from_element(r, c, v), steps + 1, interp)
            } else {
                let samples = (0..=steps).map(|_| DMatrix::from_fn(r, c, |_, _| rng.random_range(-2.0..2.0))).collect();
                CoefficientPath::from_samples(spec.key, samples, interp).unwrap()
            }
        };
        match spec.kind {
            KeyKind::Constant => {
                p.set_const(spec.key, DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))).unwrap()
            }
            KeyKind::Path => {
                let q = path(&mut rng);
                p.set_path(spec.key, q).unwrap()
            }
            KeyKind::FamilyW | KeyKind::FamilyWTilde => {
                let len = p.family_len(spec.key).unwrap();
                let fam = (0..len).map(|_| path(&mut rng)).collect();
                p.set_family(spec.key, fam).unwrap()
            }
        }
    }
    p
}

#[test]
fn embedded_scenario_is_the_reference_problem() {
    let s = Scenario::asset_liability();
    assert_eq!(s.problem, al_problem(1000).unwrap());
    assert!(s.is_asset_liability());
    assert_eq!(s.sim.paths, 20000);
    assert_eq!(s.sim.seed, 42);
    assert!(AL_SCENARIO.contains("[dynamics]"));
}

#[test]
fn regridding_keeps_the_reference_identity() {
    let s = Scenario::asset_liability().with_dt(1.0 / 256.0).unwrap();
    assert_eq!(s.problem.grid.steps(), 256);
    assert!(s.is_asset_liability());
    let mut t = Scenario::asset_liability();
    t.problem.set_scalar("M", 1.0).unwrap();
    assert!(!t.is_asset_liability());
}

#[test]
fn value_forms() {
    let text = r#"
        [problem]
        horizon = 2.0
        dt = 0.5
        n = 2
        k = 2
        [dynamics]
        a = 0.5
        b = [1.0, 2.0, 3.0, 4.0]
        c = [[0.1], [0.2]]
        bbar = { times = [0.0, 1.0], values = [[[0.0], [1.0]], [[2.0], [3.0]]] }
        [cost]
        B = [[1.0, 0.0], [0.0, 1.0]]
        [observation]
        h = 1.0
        [sim]
        seed = "18446744073709551615"
        kappa = "one"
    "#;
    let s = Scenario::parse(text).unwrap();
    let p = &s.problem;
    assert_eq!(p.grid.steps(), 4);
    assert_eq!(p.dynamics.drift.knot(0), &DMatrix::from_element(2, 2, 0.5));
    assert_eq!(p.dynamics.control_gain.knot(3), &DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    assert_eq!(p.dynamics.diffusion.knot(1), &DMatrix::from_column_slice(2, 1, &[0.1, 0.2]));
    // Held before and after the table, exact on it.
    let bbar: Vec<f64> = (0..5).map(|i| p.dynamics.offset.knot(i)[(1, 0)]).collect();
    assert_eq!(bbar, vec![1.0, 1.0, 3.0, 3.0, 3.0]);
    assert_eq!(s.sim.seed, u64::MAX);
    assert_eq!(s.sim.kappa, Kappa::One);
    let back = Scenario::parse(&s.to_toml()).unwrap();
    assert_eq!(back.problem, s.problem);
    assert_eq!(back.sim, s.sim);
}

#[test]
fn linear_tables_interpolate() {
    let text = r#"
        [problem]
        horizon = 1.0
        steps = 4
        interpolation = "piecewise-linear"
        [dynamics]
        a = { times = [0.0, 1.0], values = [0.0, 1.0] }
    "#;
    let s = Scenario::parse(text).unwrap();
    let a: Vec<f64> = (0..5).map(|i| s.problem.dynamics.drift.knot(i)[(0, 0)]).collect();
    assert_eq!(a, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
}

#[test]
fn bad_input_is_rejected() {
    for text in [
        "[nonsense]\nx = 1",
        "[dynamics]\nunknown_key = 1.0",
        "[dynamics]\nb = [1.0, 2.0]",
        "[problem]\nhorizon = 1.0\ndt = 0.3",
        "[problem]\nsteps = 0",
        "[sim]\npaths = 0",
        "[sim]\nkappa = \"two\"",
        "[dynamics]\na = \"x\"",
        "[dynamics]\na = { times = [0.5, 0.25], values = [1.0, 2.0] }",
        "not toml = = =",
    ] {
        assert!(Scenario::parse(text).is_err(), "accepted: {text}");
    }
    assert!(matches!(
        Scenario::load(std::path::Path::new("/definitely/missing.toml")),
        Err(ScenarioError::Io { .. })
    ));
}

#[test]
fn save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    let s = Scenario { problem: random_problem(Dims::scalar(), 7, Interpolation::PiecewiseLinear, 9), sim: SimConfig::default() };
    s.save(&path).unwrap();
    let back = Scenario::load(&path).unwrap();
    assert_eq!(back.problem, s.problem);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn round_trip_is_bitwise(
        seed in 0u64..1000,
        n in 1usize..3, m in 1usize..3, k in 1usize..3, r in 1usize..3, rt in 1usize..3,
        steps in 2usize..12,
        linear in any::<bool>(),
        paths in 1usize..100000,
        sim_seed in any::<u64>(),
    ) {
        let dims = Dims { state: n, value: m, control: k, state_noise: r, obs_noise: rt };
        let interp = if linear { Interpolation::PiecewiseLinear } else { Interpolation::PiecewiseConstantLeft };
        let sim = SimConfig { paths, seed: sim_seed, ..SimConfig::default() };
        let s = Scenario { problem: random_problem(dims, steps, interp, seed), sim };
        let back = Scenario::parse(&s.to_toml()).unwrap();
        prop_assert_eq!(&back.problem, &s.problem);
        prop_assert_eq!(&back.sim, &s.sim);
    }
}
