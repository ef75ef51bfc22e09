//! Cost reduction, optimal feedback law, Hamiltonian and the stationarity
//! residual for the gated special case.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::coeffs::Coeffs;
use crate::error::{Error, Result};
use crate::grid::StepPoint;
use crate::path::DensePath;
use crate::problem::MFLQProblem;
use crate::riccati::{chi_from_origin, solve_bundle, RiccatiBundle};
use crate::validate::special_case_gate;

/// Cost data after eliminating `y_0` through the χ transform:
///
/// ```text
/// F = F̃ + (χ_0^t α)ᵀN    F̄ = F̄̃ + (χ_0^t ᾱ)ᵀN    G = G̃ + (χ_0^t ψ)ᵀN
/// L = L̃ + (χ_0^T ρ)ᵀN    L̄ = L̄̃ + (χ_0^T ρ̄)ᵀN    J0 = ∫ Nᵀ χ_0^t ψ̄ dt
/// ```
#[derive(Debug, Clone)]
pub struct ReducedCost {
    pub f: DensePath,
    pub fbar: DensePath,
    pub g: DensePath,
    pub l: DMatrix<f64>,
    pub lbar: DMatrix<f64>,
    pub j0: f64,
    /// χ_0^t
    pub chi0: DensePath,
    /// N, kept for the adjoint.
    pub utility_linear: DMatrix<f64>,
}

/// Step-local trapezoid of a scalar integrand given at step start and end.
pub fn trapezoid(dt: f64, steps: usize, mut f: impl FnMut(StepPoint) -> f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..steps {
        acc += 0.5 * (f(StepPoint::start(i)) + f(StepPoint::end(i)));
    }
    acc * dt
}

/// Step-local Simpson rule using the start, midpoint and end of each step.
pub fn simpson(dt: f64, steps: usize, mut f: impl FnMut(StepPoint) -> f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..steps {
        acc += f(StepPoint::start(i)) + 4.0 * f(StepPoint::mid(i)) + f(StepPoint::end(i));
    }
    acc * dt / 6.0
}

pub fn reduce_cost(p: &MFLQProblem) -> Result<ReducedCost> {
    special_case_gate(p).into_result()?;
    let chi0 = chi_from_origin(p);
    let n = &p.cost.utility_linear;
    let steps = p.grid.steps();
    let lift = |tilde: &crate::path::CoefficientPath, coupling: &crate::path::CoefficientPath| {
        DensePath::tabulate(steps, |sp| tilde.at(sp) + (chi0.at(sp) * coupling.at(sp)).transpose() * n)
    };
    let f = lift(&p.cost.state_linear, &p.bsde.state_coupling);
    let fbar = lift(&p.cost.state_mean_linear, &p.bsde.mean_state_coupling);
    let g = lift(&p.cost.control_linear, &p.bsde.control_coupling);
    let chi_t = chi0.last();
    let l = &p.cost.terminal_linear + (chi_t * &p.bsde.terminal).transpose() * n;
    let lbar = &p.cost.terminal_mean_linear + (chi_t * &p.bsde.mean_terminal).transpose() * n;
    let j0 = trapezoid(p.grid.step(), steps, |sp| (n.transpose() * chi0.at(sp) * p.bsde.offset.at(sp))[(0, 0)]);
    Ok(ReducedCost { f, fbar, g, l, lbar, j0, chi0, utility_linear: n.clone() })
}

/// Optimal feedback `u = K_x x̂ + K_m Ex + u_0` with
/// `K_x = −B⁻¹(bᵀΓ + D)`, `K_m = −B⁻¹D̄`, `u_0 = −B⁻¹(bᵀΛ + G)`.
#[derive(Debug, Clone)]
pub struct FeedbackLaw {
    pub gain_filter: DensePath,
    pub gain_mean: DensePath,
    pub offset: DensePath,
}

impl FeedbackLaw {
    pub fn steps(&self) -> usize {
        self.offset.steps()
    }

    /// Law with all gains and the offset zero.
    pub fn zero(k: usize, n: usize, steps: usize) -> Self {
        Self {
            gain_filter: DensePath::constant(DMatrix::zeros(k, n), steps),
            gain_mean: DensePath::constant(DMatrix::zeros(k, n), steps),
            offset: DensePath::constant(DMatrix::zeros(k, 1), steps),
        }
    }

    pub fn at(&self, sp: StepPoint, xhat: &DMatrix<f64>, ex: &DMatrix<f64>) -> DMatrix<f64> {
        self.gain_filter.at(sp) * xhat + self.gain_mean.at(sp) * ex + self.offset.at(sp)
    }

    /// Same gains, offset shifted by a constant vector.
    pub fn with_offset_shift(&self, shift: &DMatrix<f64>) -> Self {
        Self {
            gain_filter: self.gain_filter.clone(),
            gain_mean: self.gain_mean.clone(),
            offset: self.offset.map(|o| o + shift),
        }
    }
}

pub fn feedback_law(p: &MFLQProblem, reduced: &ReducedCost, bundle: &RiccatiBundle) -> FeedbackLaw {
    let steps = p.grid.steps();
    let mut gf = (Vec::new(), Vec::new(), Vec::new());
    let mut gm = (Vec::new(), Vec::new(), Vec::new());
    let mut off = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..steps {
        for (slot, sp) in [(0, StepPoint::start(i)), (1, StepPoint::mid(i)), (2, StepPoint::end(i))] {
            let c = Coeffs::at(p, sp);
            let kx = -(&c.binv * (c.b.transpose() * bundle.gamma.at(sp) + &c.d));
            let km = -(&c.binv * &c.dbar);
            let u0 = -(&c.binv * (c.b.transpose() * bundle.lambda.at(sp) + reduced.g.at(sp)));
            let push = |t: &mut (Vec<_>, Vec<_>, Vec<_>), v| match slot {
                0 => t.0.push(v),
                1 => t.1.push(v),
                _ => t.2.push(v),
            };
            push(&mut gf, kx);
            push(&mut gm, km);
            push(&mut off, u0);
        }
    }
    FeedbackLaw {
        gain_filter: DensePath::new(gf.0, gf.1, gf.2),
        gain_mean: DensePath::new(gm.0, gm.1, gm.2),
        offset: DensePath::new(off.0, off.1, off.2),
    }
}

/// Everything the synthesis produces.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub reduced: ReducedCost,
    pub bundle: RiccatiBundle,
    pub law: FeedbackLaw,
}

/// Gate, reduce, solve and assemble the optimal law.
pub fn synthesize(p: &MFLQProblem) -> Result<Synthesis> {
    let reduced = reduce_cost(p)?;
    let bundle = solve_bundle(p, &reduced)?;
    let law = feedback_law(p, &reduced, &bundle);
    Ok(Synthesis { reduced, bundle, law })
}

/// `u = K_x(t) x̂ + K_m(t) Ex + u_0(t)`.
pub fn evaluate_control(
    p: &MFLQProblem,
    law: &FeedbackLaw,
    xhat: &DMatrix<f64>,
    ex: &DMatrix<f64>,
    t: f64,
) -> Result<DMatrix<f64>> {
    let sp = p.grid.locate(t)?;
    Ok(law.at(sp, xhat, ex))
}

/// Arguments of the Hamiltonian. `z`, `zbar`, `q` hold one column per
/// component of w; `zt`, `ztbar` one per component of w̃.
#[derive(Debug, Clone)]
pub struct HamiltonianArgs {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub z: Vec<DMatrix<f64>>,
    pub zt: Vec<DMatrix<f64>>,
    pub xbar: DMatrix<f64>,
    pub ybar: DMatrix<f64>,
    pub zbar: Vec<DMatrix<f64>>,
    pub ztbar: Vec<DMatrix<f64>>,
    pub v: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    /// n×r
    pub q: DMatrix<f64>,
}

impl HamiltonianArgs {
    pub fn zeros(p: &MFLQProblem) -> Self {
        let d = p.dims;
        let col = |r| DMatrix::zeros(r, 1);
        Self {
            x: col(d.state),
            y: col(d.value),
            z: (0..d.state_noise).map(|_| col(d.value)).collect(),
            zt: (0..d.obs_noise).map(|_| col(d.value)).collect(),
            xbar: col(d.state),
            ybar: col(d.value),
            zbar: (0..d.state_noise).map(|_| col(d.value)).collect(),
            ztbar: (0..d.obs_noise).map(|_| col(d.value)).collect(),
            v: col(d.control),
            k: col(d.value),
            p: col(d.state),
            q: DMatrix::zeros(d.state, d.state_noise),
        }
    }
}

fn check_args(pr: &MFLQProblem, a: &HamiltonianArgs) -> Result<()> {
    let d = pr.dims;
    let shapes: [(&str, &DMatrix<f64>, usize, usize); 9] = [
        ("x", &a.x, d.state, 1),
        ("y", &a.y, d.value, 1),
        ("xbar", &a.xbar, d.state, 1),
        ("ybar", &a.ybar, d.value, 1),
        ("v", &a.v, d.control, 1),
        ("k", &a.k, d.value, 1),
        ("p", &a.p, d.state, 1),
        ("q", &a.q, d.state, d.state_noise),
        ("N", &pr.cost.utility_linear, d.value, 1),
    ];
    for (key, m, r, c) in shapes {
        if m.shape() != (r, c) {
            return Err(Error::DimensionMismatch {
                key: key.into(),
                expected_rows: r,
                expected_cols: c,
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
    }
    let fam = [(&a.z, d.state_noise), (&a.zbar, d.state_noise), (&a.zt, d.obs_noise), (&a.ztbar, d.obs_noise)];
    for (v, len) in fam {
        if v.len() != len || v.iter().any(|m| m.shape() != (d.value, 1)) {
            return Err(Error::Domain("z-type argument has wrong column count or shape".into()));
        }
    }
    Ok(())
}

/// LQ Hamiltonian
///
/// ```text
/// H = ⟨ax + āx̄ + bv + b̄, p⟩ + ⟨c, q⟩
///   − ⟨αx + ᾱx̄ + βy + β̄ȳ + Σγ_j z_j + Σγ̄_j z̄_j + Σγ̃_j z̃_j + Σγ̄̃_j z̄̃_j + ψv + ψ̄, k⟩
///   + ½[⟨Ax,x⟩ + ⟨Āx̄,x̄⟩ + ⟨Bv,v⟩ + 2⟨Dx,v⟩ + 2⟨D̄x̄,v⟩ + 2⟨F̃,x⟩ + 2⟨F̄̃,x̄⟩ + 2⟨G̃,v⟩]
/// ```
pub fn hamiltonian(pr: &MFLQProblem, t: f64, a: &HamiltonianArgs) -> Result<f64> {
    check_args(pr, a)?;
    let sp = pr.grid.locate(t)?;
    let c = Coeffs::at(pr, sp);
    let bs = &pr.bsde;
    let drift = &c.a * &a.x + &c.abar * &a.xbar + &c.b * &a.v + &c.bbar;
    let mut gen = bs.state_coupling.at(sp) * &a.x
        + bs.mean_state_coupling.at(sp) * &a.xbar
        + bs.value_coupling.at(sp) * &a.y
        + bs.mean_value_coupling.at(sp) * &a.ybar
        + bs.control_coupling.at(sp) * &a.v
        + bs.offset.at(sp);
    for (fam, args) in [
        (&bs.z_coupling, &a.z),
        (&bs.mean_z_coupling, &a.zbar),
        (&bs.ztilde_coupling, &a.zt),
        (&bs.mean_ztilde_coupling, &a.ztbar),
    ] {
        for (g, z) in fam.iter().zip(args) {
            gen += g.at(sp) * z;
        }
    }
    let cs = &pr.cost;
    let running = a.x.dot(&(&c.big_a * &a.x))
        + a.xbar.dot(&(&c.big_abar * &a.xbar))
        + a.v.dot(&(&c.big_b * &a.v))
        + 2.0 * a.v.dot(&(&c.d * &a.x))
        + 2.0 * a.v.dot(&(&c.dbar * &a.xbar))
        + 2.0 * cs.state_linear.at(sp).dot(&a.x)
        + 2.0 * cs.state_mean_linear.at(sp).dot(&a.xbar)
        + 2.0 * cs.control_linear.at(sp).dot(&a.v);
    Ok(drift.dot(&a.p) + c.c.dot(&a.q) - gen.dot(&a.k) + 0.5 * running)
}

/// `∂H/∂v = bᵀp − ψᵀk + Bv + Dx + D̄x̄ + G̃`.
pub fn hamiltonian_v_gradient(pr: &MFLQProblem, t: f64, a: &HamiltonianArgs) -> Result<DMatrix<f64>> {
    check_args(pr, a)?;
    let sp = pr.grid.locate(t)?;
    let c = Coeffs::at(pr, sp);
    Ok(c.b.transpose() * &a.p - pr.bsde.control_coupling.at(sp).transpose() * &a.k
        + &c.big_b * &a.v
        + &c.d * &a.x
        + &c.dbar * &a.xbar
        + pr.cost.control_linear.at(sp))
}

/// Filtered first-order condition with `p̂ = Γx̂ + Λ` and the deterministic
/// adjoint folded into `G`: `B u + (bᵀΓ + D) x̂ + D̄ Ex + bᵀΛ + G`.
pub fn stationarity_residual(
    pr: &MFLQProblem,
    reduced: &ReducedCost,
    bundle: &RiccatiBundle,
    t: f64,
    xhat: &DMatrix<f64>,
    ex: &DMatrix<f64>,
    u: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    special_case_gate(pr).into_result()?;
    let sp = pr.grid.locate(t)?;
    Ok(stationarity_residual_at(pr, reduced, bundle, sp, xhat, ex, u))
}

/// [`stationarity_residual`] at a step point.
pub fn stationarity_residual_at(
    pr: &MFLQProblem,
    reduced: &ReducedCost,
    bundle: &RiccatiBundle,
    sp: StepPoint,
    xhat: &DMatrix<f64>,
    ex: &DMatrix<f64>,
    u: &DMatrix<f64>,
) -> DMatrix<f64> {
    let c = Coeffs::at(pr, sp);
    &c.big_b * u
        + (c.b.transpose() * bundle.gamma.at(sp) + &c.d) * xhat
        + &c.dbar * ex
        + c.b.transpose() * bundle.lambda.at(sp)
        + reduced.g.at(sp)
}
