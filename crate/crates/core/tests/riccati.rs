mod common;

use common::{max_knot_err, random_gated, scalar};
use mflqg_core::ode::{integrate_matrix_ode, Direction};
use mflqg_core::problem::Dims;
use mflqg_core::reference::{al_problem, al_reference};
use mflqg_core::riccati::*;
use mflqg_core::synthesis::reduce_cost;
use mflqg_core::*;
use proptest::prelude::*;

fn e(x: f64) -> f64 {
    x.exp()
}

#[test]
fn exponential_and_identity_flows() {
    let g = TimeGrid::new(1.0, 1000).unwrap();
    let id = integrate_matrix_ode(&g, DMatrix::identity(3, 3), Direction::Forward, "id", |_, y| y * 0.0, |_| {})
        .unwrap();
    assert!(id.values.iter().all(|v| *v == DMatrix::identity(3, 3)));
    let ex = integrate_matrix_ode(&g, DMatrix::from_element(1, 1, 1.0), Direction::Forward, "e", |_, y| y.clone(), |_| {})
        .unwrap();
    assert!((ex.values[1000][(0, 0)] - std::f64::consts::E).abs() < 1e-10);
}

#[test]
fn quadratic_escape_is_a_blow_up() {
    let g = TimeGrid::new(1.0, 1000).unwrap();
    let err = integrate_matrix_ode(&g, DMatrix::from_element(1, 1, 2.0), Direction::Forward, "x2", |_, y| y * y, |_| {})
        .unwrap_err();
    match err {
        Error::BlowUp { knot, .. } => assert!(g.time(knot) < 0.5, "tripped at t = {}", g.time(knot)),
        other => panic!("expected blow-up, got {other:?}"),
    }
}

#[test]
fn sigma_closed_form_with_corrected_denominator() {
    let p = al_problem(1000).unwrap();
    let (sigma, warnings) = solve_sigma(&p).unwrap();
    assert!(warnings.is_empty());
    let exact = |t: f64| 0.08 * (e(0.1 * t) - 1.0) / (e(0.1 * t) + 4.0);
    assert!(max_knot_err(&sigma, exact, &p.grid) <= 1e-8);
    assert!((sigma.last()[(0, 0)] - 1.6481e-3).abs() < 5e-8);
    assert!((0..p.grid.knots()).all(|i| sigma.knot(i)[(0, 0)] >= 0.0));
    // The printed −4 form is negative on the horizon.
    let printed = |t: f64| 0.08 * (e(0.1 * t) - 1.0) / (e(0.1 * t) - 4.0);
    assert!(printed(0.5) < 0.0);
}

#[test]
fn sigma_degenerate_cases() {
    let p = scalar(1.0, 200, &[("c", 0.0), ("f", 0.7)]);
    assert_eq!(solve_sigma(&p).unwrap().0.max_abs(), 0.0);
    let p = scalar(1.0, 200, &[("c", 1.0)]);
    let (s, _) = solve_sigma(&p).unwrap();
    assert!(max_knot_err(&s, |t| t, &p.grid) < 1e-14);
}

#[test]
fn chi_values() {
    let p = scalar(1.0, 1000, &[]);
    assert_eq!(chi(&p, 0.2, 0.9).unwrap(), DMatrix::identity(1, 1));
    let al = al_problem(1000).unwrap();
    assert!((chi(&al, 0.0, 1.0).unwrap()[(0, 0)] - 1.061_836_546_545_359_6).abs() < 1e-12);
    assert!((chi(&al, 0.4, 0.4).unwrap()[(0, 0)] - 1.0).abs() < 1e-15);
    assert!(matches!(chi(&al, 0.6, 0.3), Err(Error::Domain(_))));
}

#[test]
fn chi_composes_for_non_commuting_generators() {
    let p = random_gated(Dims { state: 1, value: 3, control: 1, state_noise: 1, obs_noise: 1 }, 1000, 11);
    let whole = chi(&p, 0.0, 0.8).unwrap();
    let split = chi(&p, 0.0, 0.3).unwrap() * chi(&p, 0.3, 0.8).unwrap();
    assert!((whole - split).amax() < 1e-10);
}

#[test]
fn phi_examples() {
    // Zero data.
    let p = scalar(1.0, 100, &[("b", 1.0)]);
    assert_eq!(solve_phi(&p).unwrap().max_abs(), 0.0);
    // Pure source A + Ā = I, b = 0: Φ = (1 − t)I.
    let grid = TimeGrid::new(1.0, 100).unwrap();
    let mut p = MFLQProblem::zeros(Dims { state: 2, value: 1, control: 1, state_noise: 1, obs_noise: 1 }, grid, Interpolation::default()).unwrap();
    p.set_const("A", DMatrix::identity(2, 2) * 0.25).unwrap();
    p.set_const("Abar", DMatrix::identity(2, 2) * 0.75).unwrap();
    p.set_scalar("B", 1.0).unwrap();
    p.set_scalar("h", 1.0).unwrap();
    let phi = solve_phi(&p).unwrap();
    for i in 0..grid.knots() {
        assert!((phi.knot(i) - DMatrix::identity(2, 2) * (1.0 - grid.time(i))).amax() < 1e-14);
    }
    // Bernoulli: Φ̇ = −0.12Φ + Φ², Φ(1) = 0.01; u = 1/Φ = 1/0.12 + (100 − 1/0.12)e^{0.12(t−1)}.
    let p = scalar(1.0, 1000, &[("a", 0.03), ("abar", 0.03), ("b", 1.0), ("H", 0.01)]);
    let phi = solve_phi(&p).unwrap();
    let exact = |t: f64| 1.0 / (1.0 / 0.12 + (100.0 - 1.0 / 0.12) * e(0.12 * (t - 1.0)));
    assert!(max_knot_err(&phi, exact, &p.grid) < 1e-12);
    assert!((phi.first()[(0, 0)] - 0.011_156_434_328_152_795).abs() < 1e-12);
    // With the variance penalty (H̄ = −H) the example has Φ ≡ 0.
    assert!(solve_phi(&al_problem(1000).unwrap()).unwrap().max_abs() < 1e-18);
}

#[test]
fn psi_examples() {
    let p = scalar(1.0, 200, &[("a", 0.3), ("b", 1.0), ("H", 1.0)]);
    let r = reduce_cost(&p).unwrap();
    let phi = solve_phi(&p).unwrap();
    assert_eq!(solve_psi(&p, &r, &phi).unwrap().max_abs(), 0.0);

    let al = al_problem(1000).unwrap();
    let r = reduce_cost(&al).unwrap();
    let phi = solve_phi(&al).unwrap();
    let psi = solve_psi(&al, &r, &phi).unwrap();
    assert!((psi.last()[(0, 0)] + e(0.06)).abs() < 1e-12);

    // b = 0, Φ ≡ 0: Ψ̇ + 0.2Ψ + F = 0, Ψ(1) = 0.3.
    let p = scalar(1.0, 1000, &[("a", 0.15), ("abar", 0.05), ("Ftilde", 0.5), ("Ltilde", 0.3)]);
    let r = reduce_cost(&p).unwrap();
    let phi = solve_phi(&p).unwrap();
    let psi = solve_psi(&p, &r, &phi).unwrap();
    let exact = |t: f64| 0.3 * e(0.2 * (1.0 - t)) + 0.5 / 0.2 * (e(0.2 * (1.0 - t)) - 1.0);
    assert!(max_knot_err(&psi, exact, &p.grid) < 1e-9);
}

#[test]
fn mean_state_examples() {
    let al = al_problem(1000).unwrap();
    let s = synthesize(&al).unwrap();
    let ex_ref = |t: f64| al_reference(t).unwrap().ex;
    assert!(max_knot_err(&s.bundle.ex, ex_ref, &al.grid) <= 1e-6);
    assert!((s.bundle.ex.last()[(0, 0)] - 3.2622).abs() < 1e-4);

    let p = scalar(1.0, 200, &[("a", 0.4), ("b", 1.0), ("H", 1.0), ("mu0", 0.0)]);
    assert_eq!(synthesize(&p).unwrap().bundle.ex.max_abs(), 0.0);

    // b = 0: Ėx = 0.5Ex + 0.2, Ex(0) = 1.5.
    let p = scalar(1.0, 1000, &[("a", 0.3), ("abar", 0.2), ("bbar", 0.2), ("mu0", 1.5), ("H", 1.0)]);
    let ex = synthesize(&p).unwrap().bundle.ex;
    let exact = |t: f64| 1.5 * e(0.5 * t) + 0.2 / 0.5 * (e(0.5 * t) - 1.0);
    assert!(max_knot_err(&ex, exact, &p.grid) < 1e-9);
}

#[test]
fn mean_costate_examples() {
    let al = al_problem(1000).unwrap();
    let b = synthesize(&al).unwrap().bundle;
    assert!(max_knot_err(&b.ep, |t| -e(0.06 * (2.0 - t)), &al.grid) <= 1e-6);
    assert!((b.ep.first()[(0, 0)] + 1.127_496_851_579_376_1).abs() < 1e-9);
    let z = DensePath::constant(DMatrix::zeros(1, 1), 10);
    let x = DensePath::constant(DMatrix::from_element(1, 1, 3.0), 10);
    assert_eq!(mean_costate(&z, &z, &x).max_abs(), 0.0);
}

#[test]
fn gamma_examples() {
    let al = al_problem(1000).unwrap();
    let gamma = solve_gamma(&al).unwrap();
    let exact = |t: f64| 0.06 * e(0.06 * (1.0 - t)) / (5.0 + e(0.06 * (1.0 - t)));
    assert!(max_knot_err(&gamma, exact, &al.grid) <= 1e-8);
    assert!((gamma.first()[(0, 0)] - 0.010_510_047_953_871_343).abs() < 1e-12);
    assert!((gamma.last()[(0, 0)] - 0.01).abs() < 1e-18);

    let p = scalar(1.0, 100, &[("a", 0.3), ("b", 1.0)]);
    assert_eq!(solve_gamma(&p).unwrap().max_abs(), 0.0);

    // Γ̇ = −2aΓ + Γ²/B, a = 0.5, B = 2, H = 3: 1/Γ = 0.5 + (1/3 − 0.5)e^{t−1}.
    let p = scalar(1.0, 1000, &[("a", 0.5), ("b", 1.0), ("B", 2.0), ("H", 3.0)]);
    let gamma = solve_gamma(&p).unwrap();
    let exact = |t: f64| 1.0 / (0.5 + (1.0 / 3.0 - 0.5) * e(t - 1.0));
    assert!(max_knot_err(&gamma, exact, &p.grid) < 1e-9);
}

#[test]
fn gamma_constant_term_uses_the_inverse_weight() {
    // Γ ≡ 0 is the solution exactly when the source A − DᵀB⁻¹D vanishes.
    // A = 1, D = 2, B = 4: DᵀB⁻¹D = 1 (while DᵀBD = 16). b = 0 keeps it linear.
    let p = scalar(1.0, 200, &[("A", 1.0), ("D", 2.0), ("B", 4.0), ("b", 0.0)]);
    assert!(solve_gamma(&p).unwrap().max_abs() < 1e-15);
}

#[test]
fn lambda_examples() {
    let al = al_problem(1000).unwrap();
    let b = synthesize(&al).unwrap().bundle;
    let lam = |t: f64| al_reference(t).unwrap().lambda;
    assert!(max_knot_err(&b.lambda, lam, &al.grid) <= 1e-7);
    // High-precision quadrature values of the variation-of-constants form.
    assert!((b.lambda.first()[(0, 0)] + 1.138_006_899_533_247).abs() < 1e-9);
    assert!((b.lambda.knot(500)[(0, 0)] + 1.115_854_136_251_997_8).abs() < 1e-9);
    assert!((lam(0.0) + 1.138_006_899_533_247).abs() < 1e-12);

    let p = scalar(1.0, 100, &[("a", 0.3), ("b", 1.0), ("H", 2.0)]);
    assert_eq!(synthesize(&p).unwrap().bundle.lambda.max_abs(), 0.0);
}

#[test]
fn k_det_is_the_deterministic_adjoint() {
    let al = al_problem(1000).unwrap();
    let b = synthesize(&al).unwrap().bundle;
    // N = −1 in the example's sign convention: k = −e^{0.06t}N = e^{0.06t}.
    assert!(max_knot_err(&b.k_det, |t| e(0.06 * t), &al.grid) < 1e-12);
}

/// Γ Bernoulli problem with fast rates, so RK4 error is far above roundoff.
fn stiff_gamma_error(steps: usize) -> f64 {
    let p = scalar(1.0, steps, &[("a", 5.0), ("b", 1.0), ("B", 0.1), ("H", 3.0)]);
    let gamma = solve_gamma(&p).unwrap();
    let (a, b) = (5.0, 0.1);
    let c = 1.0 / (2.0 * a * b);
    let exact = |t: f64| 1.0 / (c + (1.0 / 3.0 - c) * e(10.0 * (t - 1.0)));
    max_knot_err(&gamma, exact, &p.grid)
}

#[test]
fn rk4_is_fourth_order() {
    let errs: Vec<f64> = [250, 500, 1000].iter().map(|&n| stiff_gamma_error(n)).collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((14.0..18.5).contains(&ratio), "error ratio {ratio}, errors {errs:?}");
    }
}

#[test]
fn boundary_conditions_and_symmetry_on_random_problems() {
    for seed in 0..6 {
        let dims = Dims { state: 2, value: 2, control: 2, state_noise: 2, obs_noise: 2 };
        let p = random_gated(dims, 400, seed);
        let s = synthesize(&p).unwrap();
        let b = &s.bundle;
        let r = &s.reduced;
        let hh = &p.cost.terminal + &p.cost.terminal_mean;
        assert!((b.phi.last() - &hh).amax() < 1e-14);
        assert!((b.psi.last() - (&r.l + &r.lbar)).amax() < 1e-14);
        assert!((b.gamma.last() - &p.cost.terminal).amax() < 1e-14);
        let lam_t = &p.cost.terminal_mean * b.ex.last() + &r.l + &r.lbar;
        assert!((b.lambda.last() - lam_t).amax() < 1e-14);
        assert!((b.sigma.first() - &p.init.covariance).amax() < 1e-15);
        assert!((b.ex.first() - &p.init.mean).amax() < 1e-15);
        let ep_t = &hh * b.ex.last() + &r.l + &r.lbar;
        assert!((b.ep.last() - ep_t).amax() < 1e-10);
        for i in 0..p.grid.knots() {
            for m in [b.sigma.knot(i), b.phi.knot(i), b.gamma.knot(i)] {
                assert!((m - m.transpose()).amax() <= 1e-10);
            }
            assert!(linalg::min_eig(b.sigma.knot(i)).unwrap() >= -1e-10);
        }
    }
}

#[test]
fn ansatz_matches_shooting() {
    for seed in 20..26 {
        let dims = Dims { state: 2, value: 1, control: 2, state_noise: 1, obs_noise: 2 };
        let p = random_gated(dims, 1000, seed);
        let s = synthesize(&p).unwrap();
        let (xs, es) = shoot_mean_system(&p, &s.reduced, s.bundle.ep.first()).unwrap();
        for i in 0..p.grid.knots() {
            assert!((&xs[i] - s.bundle.ex.knot(i)).amax() <= 1e-6);
            assert!((&es[i] - s.bundle.ep.knot(i)).amax() <= 1e-6);
        }
    }
}

#[test]
fn blow_up_is_reported_with_its_stage() {
    let p = scalar(1.0, 1000, &[("A", -40.0), ("b", 1.0), ("H", 1.0)]);
    match synthesize(&p) {
        Err(Error::BlowUp { stage, .. }) => assert!(["Phi", "Gamma"].contains(&stage)),
        other => panic!("expected blow-up, got {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sigma_is_monotone_in_the_prior(s0 in 0.0f64..2.0, extra in 1e-3f64..2.0, a in -1.0f64..1.0,
                                      c in 0.0f64..1.0, f in 0.0f64..2.0) {
        let lo = scalar(1.0, 200, &[("a", a), ("c", c), ("f", f), ("sigma0", s0)]);
        let hi = scalar(1.0, 200, &[("a", a), ("c", c), ("f", f), ("sigma0", s0 + extra)]);
        let (sl, _) = solve_sigma(&lo).unwrap();
        let (sh, _) = solve_sigma(&hi).unwrap();
        for i in 0..lo.grid.knots() {
            prop_assert!(sh.knot(i)[(0, 0)] >= sl.knot(i)[(0, 0)]);
        }
    }

    #[test]
    fn gamma_is_psd(seed in 0u64..10_000, n in 1usize..3) {
        let dims = Dims { state: n, value: 1, control: n, state_noise: 1, obs_noise: 1 };
        let p = random_gated(dims, 200, seed);
        let gamma = solve_gamma(&p).unwrap();
        for i in 0..p.grid.knots() {
            prop_assert!(linalg::min_eig(gamma.knot(i)).unwrap() >= -1e-10);
        }
    }

    #[test]
    fn terminal_costate_identity(a in -0.5f64..0.5, abar in -0.5f64..0.5, h in 0.0f64..2.0,
                                 hbar in -0.5f64..0.5, l in -1.0f64..1.0, mu0 in -2.0f64..2.0) {
        let p = scalar(1.0, 200, &[("a", a), ("abar", abar), ("b", 1.0), ("H", h), ("Hbar", hbar),
                                   ("Ltilde", l), ("mu0", mu0), ("bbar", 0.1)]);
        prop_assume!(h + hbar >= 0.0);
        let s = synthesize(&p).unwrap();
        let b = &s.bundle;
        let target = (h + hbar) * b.ex.last()[(0, 0)] + l;
        prop_assert!((b.ep.last()[(0, 0)] - target).abs() <= 1e-10);
    }
}
