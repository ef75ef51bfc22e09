#![allow(dead_code)]

use mflqg_core::path::CoefficientPath;
use mflqg_core::problem::Dims;
use mflqg_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scalar problem on `[0, horizon]` with the listed coefficients set.
pub fn scalar(horizon: f64, steps: usize, pairs: &[(&str, f64)]) -> MFLQProblem {
    let grid = TimeGrid::new(horizon, steps).unwrap();
    let mut p = MFLQProblem::zeros(Dims::scalar(), grid, Interpolation::default()).unwrap();
    p.set_scalar("B", 1.0).unwrap();
    p.set_scalar("h", 1.0).unwrap();
    for (k, v) in pairs {
        p.set_scalar(k, *v).unwrap();
    }
    p
}

pub fn max_knot_err(path: &DensePath, f: impl Fn(f64) -> f64, grid: &TimeGrid) -> f64 {
    (0..grid.knots()).map(|i| (path.knot(i)[(0, 0)] - f(grid.time(i))).abs()).fold(0.0, f64::max)
}

fn mat(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

fn psd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DMatrix<f64> {
    let m = mat(rng, n, n, scale);
    &m * m.transpose()
}

/// Smoothly time-varying path `m0 + sin(t) m1`.
fn wavy(rng: &mut ChaCha8Rng, p: &MFLQProblem, r: usize, c: usize, scale: f64) -> CoefficientPath {
    let m0 = mat(rng, r, c, scale);
    let m1 = mat(rng, r, c, scale * 0.5);
    let samples = p.grid.times().map(|t| &m0 + &m1 * t.sin()).collect();
    CoefficientPath::from_samples("wavy", samples, p.interpolation).unwrap()
}

/// Random gated problem (M = 0, γ-family zero) with PD B, invertible h and
/// PSD cost weights satisfying the mean-field convexity condition. Coefficients vary smoothly in time and
/// use piecewise-linear interpolation.
pub fn random_gated(dims: Dims, steps: usize, seed: u64) -> MFLQProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = TimeGrid::new(1.0, steps).unwrap();
    let mut p = MFLQProblem::zeros(dims, grid, Interpolation::PiecewiseLinear).unwrap();
    let (n, m, k, r, rt) = (dims.state, dims.value, dims.control, dims.state_noise, dims.obs_noise);
    for (key, rows, cols, scale) in [
        ("a", n, n, 0.4),
        ("abar", n, n, 0.2),
        ("b", n, k, 0.8),
        ("bbar", n, 1, 0.3),
        ("c", n, r, 0.3),
        ("alpha", m, n, 0.3),
        ("alphabar", m, n, 0.3),
        ("beta", m, m, 0.2),
        ("betabar", m, m, 0.1),
        ("psi", m, k, 0.5),
        ("psibar", m, 1, 0.3),
        ("f", rt, n, 0.6),
        ("fbar", rt, n, 0.2),
        ("g", rt, 1, 0.2),
        ("Ftilde", n, 1, 0.3),
        ("Fbartilde", n, 1, 0.3),
        ("Gtilde", k, 1, 0.3),
    ] {
        let path = wavy(&mut rng, &p, rows, cols, scale);
        p.set_path(key, path).unwrap();
    }
    // Cost weights: A ⪰ 0, A + Ā ⪰ 0, B ≻ 0; D small relative to B.
    let a = psd(&mut rng, n, 0.6);
    let abar = psd(&mut rng, n, 0.3) * 0.5 - &a * 0.3;
    let b = psd(&mut rng, k, 0.5) + DMatrix::identity(k, k);
    let d = mat(&mut rng, k, n, 0.1);
    let dbar = mat(&mut rng, k, n, 0.1);
    let big_a = &a + d.transpose() * b.clone().try_inverse().unwrap() * &d * 2.0;
    let dd = &d + &dbar;
    let big_abar = &abar + dd.transpose() * b.clone().try_inverse().unwrap() * &dd * 2.0;
    p.set_const("A", big_a).unwrap();
    p.set_const("Abar", big_abar).unwrap();
    p.set_const("B", b).unwrap();
    p.set_const("D", d).unwrap();
    p.set_const("Dbar", dbar).unwrap();
    let h = DMatrix::identity(rt, rt) * 0.6 + mat(&mut rng, rt, rt, 0.1);
    p.set_const("h", h).unwrap();
    let hh = psd(&mut rng, n, 0.5);
    p.set_const("H", hh.clone()).unwrap();
    p.set_const("Hbar", psd(&mut rng, n, 0.3) - &hh * 0.5).unwrap();
    for key in ["Ltilde", "Lbartilde"] {
        p.set_const(key, mat(&mut rng, n, 1, 0.3)).unwrap();
    }
    p.set_const("rho", mat(&mut rng, m, n, 0.4)).unwrap();
    p.set_const("rhobar", mat(&mut rng, m, n, 0.4)).unwrap();
    p.set_const("N", mat(&mut rng, m, 1, 0.5)).unwrap();
    p.set_const("mu0", mat(&mut rng, n, 1, 1.0)).unwrap();
    p.set_const("sigma0", psd(&mut rng, n, 0.4)).unwrap();
    p
}
