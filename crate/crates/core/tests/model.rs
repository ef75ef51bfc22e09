mod common;

use common::{random_gated, scalar};
use mflqg_core::problem::Dims;
use mflqg_core::reference::al_problem;
use mflqg_core::validate::{special_case_gate, validate};
use mflqg_core::*;
use proptest::prelude::*;

fn two_dim() -> MFLQProblem {
    let grid = TimeGrid::new(1.0, 20).unwrap();
    let dims = Dims { state: 2, value: 1, control: 2, state_noise: 1, obs_noise: 1 };
    let mut p = MFLQProblem::zeros(dims, grid, Interpolation::default()).unwrap();
    p.set_const("B", DMatrix::identity(2, 2)).unwrap();
    p.set_scalar("h", 1.0).unwrap();
    p
}

#[test]
fn example_report() {
    let r = validate(&al_problem(1000).unwrap()).unwrap();
    assert_eq!(r.a1_margin, 0.0);
    assert!(r.a1_ok());
    assert!(r.gate_ok);
    assert_eq!(r.b_min_eig, 1.0);
}

#[test]
fn a1_violation_is_flagged() {
    let mut p = two_dim();
    p.set_const("A", DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.0]))).unwrap();
    p.set_const("Abar", DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.0, -1.0]))).unwrap();
    let r = validate(&p).unwrap();
    assert!((r.a1_margin + 1.0).abs() < 1e-14);
    assert!(!r.a1_ok());
}

#[test]
fn a2_constant_by_hand() {
    let p = scalar(1.0, 10, &[("D", 1.0), ("B", 1.0), ("A", 0.0)]);
    assert!((validate(&p).unwrap().a2_constant - 1.0).abs() < 1e-15);
}

#[test]
fn gate_decisions() {
    assert!(special_case_gate(&al_problem(100).unwrap()).accepted());
    let mut p = al_problem(100).unwrap();
    p.set_scalar("M", 1.0).unwrap();
    let d = special_case_gate(&p);
    assert_eq!(d.violations, vec!["M".to_string()]);
    let mut p = al_problem(100).unwrap();
    p.set_scalar("gammatilde", 0.5).unwrap();
    let d = special_case_gate(&p);
    assert_eq!(d.violations.len(), 1);
    assert!(d.violations[0].starts_with("γ̃"));
    assert!(matches!(d.into_result(), Err(Error::GateViolation(_))));
    // β̄ is not gated.
    let mut p = al_problem(100).unwrap();
    p.set_scalar("betabar", 0.2).unwrap();
    assert!(special_case_gate(&p).accepted());
}

#[test]
fn hard_validation_failures() {
    let p = scalar(1.0, 10, &[("B", 0.0)]);
    assert!(matches!(validate(&p), Err(Error::NotPositiveDefinite { .. })));
    let p = scalar(1.0, 10, &[("h", 0.0)]);
    assert!(validate(&p).is_err());
    let p = scalar(1.0, 10, &[("sigma0", -1.0)]);
    assert!(validate(&p).is_err());
    let mut p = two_dim();
    p.set_const("A", DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])).unwrap();
    assert!(matches!(validate(&p), Err(Error::NotSymmetric { .. })));
}

#[test]
fn missing_blocks_default_to_zero_with_the_right_shape() {
    let p = al_problem(10).unwrap();
    assert_eq!(p.cost.utility_quadratic, DMatrix::zeros(1, 1));
    let mut q = al_problem(10).unwrap();
    assert!(matches!(
        q.set_const("b", DMatrix::zeros(2, 1)),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn validate_is_idempotent() {
    let p = random_gated(Dims { state: 2, value: 2, control: 2, state_noise: 2, obs_noise: 2 }, 50, 3);
    assert_eq!(validate(&p).unwrap(), validate(&p).unwrap());
}

fn rotation(theta: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn a1_margin_is_rotation_invariant(
        m in proptest::collection::vec(-1.0f64..1.0, 4),
        e in proptest::collection::vec(-1.0f64..1.0, 4),
        b in proptest::collection::vec(-1.0f64..1.0, 4),
        th_x in 0.0f64..6.3,
        th_u in 0.0f64..6.3,
    ) {
        let m = DMatrix::from_row_slice(2, 2, &m);
        let sum = &m + m.transpose();
        let e = DMatrix::from_row_slice(2, 2, &e);
        let b = DMatrix::from_row_slice(2, 2, &b);
        let bb = &b * b.transpose() + DMatrix::identity(2, 2);
        let build = |sum: &DMatrix<f64>, e: &DMatrix<f64>, bb: &DMatrix<f64>| {
            let mut p = two_dim();
            p.set_const("A", sum.clone()).unwrap();
            p.set_const("D", e.clone()).unwrap();
            p.set_const("B", bb.clone()).unwrap();
            validate(&p).unwrap().a1_margin
        };
        let (q, r) = (rotation(th_x), rotation(th_u));
        let mut sum_r = q.transpose() * &sum * &q;
        let mut bb_r = r.transpose() * &bb * &r;
        // Conjugation leaves roundoff asymmetry; the model enforces symmetry.
        linalg::symmetrize(&mut sum_r);
        linalg::symmetrize(&mut bb_r);
        let e_r = r.transpose() * &e * &q;
        let a = build(&sum, &e, &bb);
        let a_rot = build(&sum_r, &e_r, &bb_r);
        prop_assert!((a - a_rot).abs() <= 1e-10 * (1.0 + a.abs()));
    }
}
