//! Closed-form reference solution of the asset-liability example.
//!
//! Data: `a = ā = 0.03`, `b = 1`, `b̄ = 0.01`, `c = 0.04`, `β = 0.06`,
//! `ψ = 1`, `ρ = 1`, `f = 0.1`, `h = 0.1`, `B = 1`, `H = 0.01`, `μ0 = 1`,
//! `σ0 = 0`, `T = 1`. The variance penalty `H(x_T − Ex_T)²` becomes
//! `H = 0.01`, `H̄ = −0.01`, and the reward `−2·y_0` becomes `N = −1`.
//!
//! Two printed closed forms are corrected here: the filter variance has
//! denominator `e^{0.1t} + 4` and the control offset is `e^{0.06t}`.

use libm::exp;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::path::Interpolation;
use crate::problem::{Dims, MFLQProblem};

/// Coefficients of the example as `(key, value)` pairs; everything else is zero.
pub const AL_COEFFICIENTS: &[(&str, f64)] = &[
    ("mu0", 1.0),
    ("sigma0", 0.0),
    ("a", 0.03),
    ("abar", 0.03),
    ("b", 1.0),
    ("bbar", 0.01),
    ("c", 0.04),
    ("beta", 0.06),
    ("psi", 1.0),
    ("rho", 1.0),
    ("f", 0.1),
    ("h", 0.1),
    ("B", 1.0),
    ("H", 0.01),
    ("Hbar", -0.01),
    ("N", -1.0),
];

/// The example on a grid of `steps` steps over `[0, 1]`.
pub fn al_problem(steps: usize) -> Result<MFLQProblem> {
    let grid = TimeGrid::new(1.0, steps)?;
    let mut p = MFLQProblem::zeros(Dims::scalar(), grid, Interpolation::default())?;
    for (k, v) in AL_COEFFICIENTS {
        p.set_scalar(k, *v)?;
    }
    Ok(p)
}

/// Closed-form values at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlReference {
    pub t: f64,
    pub ex: f64,
    pub ep: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub lambda: f64,
    /// Offset of the optimal law, `−Λ + e^{0.06t}`.
    pub offset: f64,
    /// `χ_0^t = e^{0.06t}`.
    pub chi: f64,
}

fn ex(t: f64) -> f64 {
    exp(0.06 * t)
        * (1.0 + t + 25.0 / 3.0 * exp(0.12) * (1.0 - exp(-0.12 * t)) + (1.0 - exp(-0.06 * t)) / 6.0)
}

fn ep(t: f64) -> f64 {
    -exp(0.06 * (2.0 - t))
}

fn w(t: f64) -> f64 {
    exp(0.06 * (1.0 - t))
}

fn gamma(t: f64) -> f64 {
    0.06 * w(t) / (5.0 + w(t))
}

fn sigma(t: f64) -> f64 {
    0.08 * (exp(0.1 * t) - 1.0) / (exp(0.1 * t) + 4.0)
}

fn theta1(t: f64) -> f64 {
    0.03 * ex(t) + exp(0.06 * t) + 0.01
}

fn theta2(t: f64) -> f64 {
    -0.03 * exp(0.06 * (2.0 - t))
}

/// `exp(∫_t^s (0.03 − Γ) dr)` in closed form.
fn transport(t: f64, s: f64) -> f64 {
    exp(0.03 * (s - t)) * (5.0 + w(s)) / (5.0 + w(t))
}

const GL_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// Composite 5-point Gauss–Legendre on `[lo, hi]`.
fn gauss(lo: f64, hi: f64, panels: usize, f: impl Fn(f64) -> f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let width = (hi - lo) / panels as f64;
    let mut acc = 0.0;
    for j in 0..panels {
        let a = lo + j as f64 * width;
        let mid = a + 0.5 * width;
        for (x, wt) in GL_NODES.iter().zip(GL_WEIGHTS) {
            acc += wt * f(mid + 0.5 * width * x);
        }
    }
    0.5 * width * acc
}

/// Closed-form Λ by variation of constants and Gauss–Legendre quadrature.
fn lambda(t: f64) -> f64 {
    let terminal = -(0.01 * ex(1.0) + exp(0.06)) * transport(t, 1.0);
    let source = gauss(t, 1.0, 64, |s| (gamma(s) * theta1(s) + theta2(s)) * transport(t, s));
    terminal + source
}

/// Reference record at `t ∈ [0, 1]`.
pub fn al_reference(t: f64) -> Result<AlReference> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfHorizon { t, horizon: 1.0 });
    }
    let lam = lambda(t);
    Ok(AlReference {
        t,
        ex: ex(t),
        ep: ep(t),
        gamma: gamma(t),
        sigma: sigma(t),
        theta1: theta1(t),
        theta2: theta2(t),
        lambda: lam,
        offset: -lam + exp(0.06 * t),
        chi: exp(0.06 * t),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_values() {
        let r0 = al_reference(0.0).unwrap();
        assert_eq!(r0.ex, 1.0);
        assert!((r0.ep + exp(0.12)).abs() < 1e-15);
        assert_eq!(r0.sigma, 0.0);
        assert!((r0.gamma - 0.010_510_047_953_871_343).abs() < 1e-15);
        let r1 = al_reference(1.0).unwrap();
        assert!((r1.gamma - 0.01).abs() < 1e-16);
        assert!((r1.ex - 3.262_152_655_652_034_4).abs() < 1e-13);
        assert!((r1.sigma - 0.001_648_068_905_247_012_3).abs() < 1e-16);
        assert!((r1.lambda + 0.01 * r1.ex + exp(0.06)).abs() < 1e-14);
        assert!(al_reference(1.5).is_err());
    }

    #[test]
    fn gauss_is_exact_on_polynomials() {
        let v = gauss(0.0, 1.0, 3, |x| x * x * x * x);
        assert!((v - 0.2).abs() < 1e-15);
    }
}
