//! Deterministic layer: filter covariance, mean-field Riccati pair, filter
//! Riccati pair and the χ transform.
//!
//! Solve order: Σ forward, then (after cost reduction) Φ and Ψ backward,
//! Ex forward, Ep = ΦEx + Ψ, Γ backward, Λ backward.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::coeffs::Coeffs;
use crate::error::{Error, Result};
use crate::grid::{StepPoint, TimeGrid};
use crate::linalg::{asymmetry, min_eig, symmetrize};
use crate::ode::{integrate_matrix_ode, Direction};
use crate::path::DensePath;
use crate::problem::MFLQProblem;
use crate::synthesis::ReducedCost;

/// Grid-sampled solutions of every deterministic equation.
#[derive(Debug, Clone)]
pub struct RiccatiBundle {
    pub grid: TimeGrid,
    pub sigma: DensePath,
    pub phi: DensePath,
    pub psi: DensePath,
    pub ex: DensePath,
    pub ep: DensePath,
    pub gamma: DensePath,
    pub lambda: DensePath,
    /// Deterministic adjoint `k_t = −(χ_0^t)ᵀ N` under the gate.
    pub k_det: DensePath,
    pub warnings: Vec<String>,
}

fn sym(m: &mut DMatrix<f64>) {
    symmetrize(m)
}

fn no_proj(_: &mut DMatrix<f64>) {}

/// One RK4 step of `Ẋ = X (β + β̄)` across step `i` from `X = I`, optionally
/// stopping at the midpoint.
fn chi_step(p: &MFLQProblem, i: usize, half: bool) -> DMatrix<f64> {
    let m = p.dims.value;
    let gen = |frac: f64| {
        let sp = StepPoint { step: i, frac };
        p.bsde.value_coupling.at(sp) + p.bsde.mean_value_coupling.at(sp)
    };
    let (h, f_mid, f_end) = if half {
        (0.5 * p.grid.step(), 0.25, 0.5)
    } else {
        (p.grid.step(), 0.5, 1.0)
    };
    let x = DMatrix::<f64>::identity(m, m);
    let k1 = &x * gen(0.0);
    let k2 = (&x + &k1 * (0.5 * h)) * gen(f_mid);
    let k3 = (&x + &k2 * (0.5 * h)) * gen(f_mid);
    let k4 = (&x + &k3 * h) * gen(f_end);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// `χ_0^t` at every step start, midpoint and end, as cumulative products of
/// one-step factors.
pub fn chi_from_origin(p: &MFLQProblem) -> DensePath {
    let n = p.grid.steps();
    let m = p.dims.value;
    let mut start = Vec::with_capacity(n);
    let mut mid = Vec::with_capacity(n);
    let mut end = Vec::with_capacity(n);
    let mut acc = DMatrix::<f64>::identity(m, m);
    for i in 0..n {
        start.push(acc.clone());
        mid.push(&acc * chi_step(p, i, true));
        acc = &acc * chi_step(p, i, false);
        end.push(acc.clone());
    }
    DensePath::new(start, mid, end)
}

/// `χ_t^s`, the solution at `s` of `Ẋ = X(β+β̄)` with `X(t) = I`, by RK4
/// substeps aligned with the grid.
pub fn chi(p: &MFLQProblem, t: f64, s: f64) -> Result<DMatrix<f64>> {
    if t > s {
        return Err(Error::Domain(format!("chi needs t <= s, got t = {t}, s = {s}")));
    }
    let m = p.dims.value;
    let mut x = DMatrix::<f64>::identity(m, m);
    if t == s {
        return Ok(x);
    }
    let grid = &p.grid;
    let a = grid.locate(t)?;
    let b = grid.locate(s)?;
    let gen = |step: usize, frac: f64| {
        let sp = StepPoint { step, frac };
        p.bsde.value_coupling.at(sp) + p.bsde.mean_value_coupling.at(sp)
    };
    for step in a.step..=b.step {
        let lo = if step == a.step { a.frac } else { 0.0 };
        let hi = if step == b.step { b.frac } else { 1.0 };
        if hi <= lo {
            continue;
        }
        let h = (hi - lo) * grid.step();
        let fm = 0.5 * (lo + hi);
        let k1 = &x * gen(step, lo);
        let k2 = (&x + &k1 * (0.5 * h)) * gen(step, fm);
        let k3 = (&x + &k2 * (0.5 * h)) * gen(step, fm);
        let k4 = (&x + &k3 * h) * gen(step, hi);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    Ok(x)
}

/// Filter error covariance:
/// `Σ̇ = aΣ + Σaᵀ − Σ fᵀ(h⁻¹)ᵀh⁻¹ f Σ + c cᵀ`, `Σ(0) = σ0`.
pub fn solve_sigma(p: &MFLQProblem) -> Result<(DensePath, Vec<String>)> {
    let sol = integrate_matrix_ode(
        &p.grid,
        p.init.covariance.clone(),
        Direction::Forward,
        "Sigma",
        |sp, s| {
            let a = p.dynamics.drift.at(sp);
            let c = p.dynamics.diffusion.at(sp);
            let f = p.observation.sensor.at(sp);
            let h = p.observation.noise.at(sp);
            let hhinv = (&h * h.transpose()).try_inverse().expect("h invertible (validated)");
            &a * s + s * a.transpose() - s * f.transpose() * hhinv * f * s + &c * c.transpose()
        },
        sym,
    )?;
    let mut warnings = Vec::new();
    if let Some((i, e)) = sol
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| (i, min_eig(v).unwrap_or(f64::NAN)))
        .find(|(_, e)| !(*e >= -1e-8))
    {
        warnings.push(format!("Sigma not positive semidefinite at knot {i} (smallest eigenvalue {e:e})"));
    }
    Ok((sol.into_dense(p.grid.step()), warnings))
}

/// Mean-field Riccati equation, backward from `Φ(T) = H + H̄`.
pub fn solve_phi(p: &MFLQProblem) -> Result<DensePath> {
    let terminal = &p.cost.terminal + &p.cost.terminal_mean;
    let sol = integrate_matrix_ode(
        &p.grid,
        terminal,
        Direction::Backward,
        "Phi",
        |sp, phi| {
            let c = Coeffs::at(p, sp);
            let aa = &c.a + &c.abar;
            let dd = &c.d + &c.dbar;
            let ddt_binv = dd.transpose() * &c.binv;
            let left = &aa - &c.b * &c.binv * &dd;
            let right = aa.transpose() - &ddt_binv * c.b.transpose();
            -(phi * left + right * phi - phi * &c.r * phi + &c.big_a + &c.big_abar - ddt_binv * dd)
        },
        sym,
    )?;
    Ok(sol.into_dense(p.grid.step()))
}

/// Linear companion of Φ, backward from `Ψ(T) = L + L̄`.
pub fn solve_psi(p: &MFLQProblem, reduced: &ReducedCost, phi: &DensePath) -> Result<DensePath> {
    let terminal = &reduced.l + &reduced.lbar;
    let sol = integrate_matrix_ode(
        &p.grid,
        terminal,
        Direction::Backward,
        "Psi",
        |sp, psi| {
            let c = Coeffs::at(p, sp);
            let ph = phi.at(sp);
            let g = reduced.g.at(sp);
            let ff = reduced.f.at(sp) + reduced.fbar.at(sp);
            let aa = &c.a + &c.abar;
            let dd = &c.d + &c.dbar;
            let ddt_binv = dd.transpose() * &c.binv;
            let coef = aa.transpose() - &ddt_binv * c.b.transpose() - &ph * &c.r;
            let src = &ph * (&c.bbar - &c.b * &c.binv * &g) - ddt_binv * &g + ff;
            -(coef * psi + src)
        },
        no_proj,
    )?;
    Ok(sol.into_dense(p.grid.step()))
}

/// Closed-loop mean state, forward from `Ex(0) = μ0`.
pub fn solve_mean_state(
    p: &MFLQProblem,
    reduced: &ReducedCost,
    phi: &DensePath,
    psi: &DensePath,
) -> Result<DensePath> {
    let sol = integrate_matrix_ode(
        &p.grid,
        p.init.mean.clone(),
        Direction::Forward,
        "Ex",
        |sp, ex| {
            let c = Coeffs::at(p, sp);
            let g = reduced.g.at(sp);
            let aa = &c.a + &c.abar;
            let dd = &c.d + &c.dbar;
            let coef = aa - &c.b * &c.binv * dd - &c.r * phi.at(sp);
            coef * ex - &c.r * psi.at(sp) - &c.b * &c.binv * g + &c.bbar
        },
        no_proj,
    )?;
    Ok(sol.into_dense(p.grid.step()))
}

/// `Ep = Φ Ex + Ψ` pointwise.
pub fn mean_costate(phi: &DensePath, psi: &DensePath, ex: &DensePath) -> DensePath {
    phi.zip_with(ex, |a, b| a * b).zip_with(psi, |a, b| a + b)
}

/// Filter Riccati equation, backward from `Γ(T) = H`.
pub fn solve_gamma(p: &MFLQProblem) -> Result<DensePath> {
    let sol = integrate_matrix_ode(
        &p.grid,
        p.cost.terminal.clone(),
        Direction::Backward,
        "Gamma",
        |sp, gm| {
            let c = Coeffs::at(p, sp);
            let dt_binv = c.d.transpose() * &c.binv;
            let left = &c.a - &c.b * &c.binv * &c.d;
            let right = c.a.transpose() - &dt_binv * c.b.transpose();
            -(gm * left + right * gm - gm * &c.r * gm + &c.big_a - dt_binv * &c.d)
        },
        sym,
    )?;
    Ok(sol.into_dense(p.grid.step()))
}

/// Source terms `θ1`, `θ2` of the Λ equation at one step point.
pub fn thetas(
    c: &Coeffs,
    reduced: &ReducedCost,
    sp: StepPoint,
    ex: &DMatrix<f64>,
    ep: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let g = reduced.g.at(sp);
    let theta1 = (&c.abar - &c.b * &c.binv * &c.dbar) * ex - &c.b * &c.binv * &g + &c.bbar;
    let dt = c.d.transpose();
    let dbt = c.dbar.transpose();
    let quad = &c.big_abar - &dt * &c.binv * &c.dbar - &dbt * &c.binv * &c.d - &dbt * &c.binv * &c.dbar;
    let theta2 = quad * ex + (c.abar.transpose() - &dbt * &c.binv * c.b.transpose()) * ep
        - (&c.d + &c.dbar).transpose() * &c.binv * &g
        + reduced.f.at(sp)
        + reduced.fbar.at(sp);
    (theta1, theta2)
}

/// Linear companion of Γ, backward from `Λ(T) = H̄ Ex(T) + L + L̄`.
pub fn solve_lambda(
    p: &MFLQProblem,
    reduced: &ReducedCost,
    gamma: &DensePath,
    ex: &DensePath,
    ep: &DensePath,
) -> Result<DensePath> {
    let terminal = &p.cost.terminal_mean * ex.last() + &reduced.l + &reduced.lbar;
    let sol = integrate_matrix_ode(
        &p.grid,
        terminal,
        Direction::Backward,
        "Lambda",
        |sp, lam| {
            let c = Coeffs::at(p, sp);
            let gm = gamma.at(sp);
            let (t1, t2) = thetas(&c, reduced, sp, &ex.at(sp), &ep.at(sp));
            let coef = c.a.transpose() - c.d.transpose() * &c.binv * c.b.transpose() - &gm * &c.r;
            -(coef * lam + gm * t1 + t2)
        },
        no_proj,
    )?;
    Ok(sol.into_dense(p.grid.step()))
}

/// Runs the whole deterministic pipeline in dependency order.
pub fn solve_bundle(p: &MFLQProblem, reduced: &ReducedCost) -> Result<RiccatiBundle> {
    let (sigma, mut warnings) = solve_sigma(p)?;
    let phi = solve_phi(p)?;
    let psi = solve_psi(p, reduced, &phi)?;
    let ex = solve_mean_state(p, reduced, &phi, &psi)?;
    let ep = mean_costate(&phi, &psi, &ex);
    let gamma = solve_gamma(p)?;
    let lambda = solve_lambda(p, reduced, &gamma, &ex, &ep)?;
    let n = reduced.utility_linear.clone();
    let k_det = reduced.chi0.map(|x| -(x.transpose() * &n));
    for (name, path) in [("Phi", &phi), ("Gamma", &gamma)] {
        let worst = path.knot_values().iter().map(asymmetry).fold(0.0_f64, f64::max);
        if worst > 1e-8 {
            warnings.push(format!("{name} asymmetry {worst:e}"));
        }
    }
    Ok(RiccatiBundle { grid: p.grid, sigma, phi, psi, ex, ep, gamma, lambda, k_det, warnings })
}

/// Integrates the coupled mean system directly, forward from `(μ0, ep0)`:
///
/// ```text
/// Ėx = [a+ā − bB⁻¹(D+D̄)]Ex − bB⁻¹bᵀEp − bB⁻¹G + b̄
/// Ėp = −[A+Ā − (D+D̄)ᵀB⁻¹(D+D̄)]Ex − [(a+ā)ᵀ − (D+D̄)ᵀB⁻¹bᵀ]Ep + (D+D̄)ᵀB⁻¹G − F − F̄
/// ```
///
/// Used to check the affine ansatz `Ep = ΦEx + Ψ` independently.
pub fn shoot_mean_system(
    p: &MFLQProblem,
    reduced: &ReducedCost,
    ep0: &DMatrix<f64>,
) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    let n = p.dims.state;
    let mut init = DMatrix::zeros(2 * n, 1);
    init.view_mut((0, 0), (n, 1)).copy_from(&p.init.mean);
    init.view_mut((n, 0), (n, 1)).copy_from(ep0);
    let sol = integrate_matrix_ode(
        &p.grid,
        init,
        Direction::Forward,
        "mean system",
        |sp, z| {
            let c = Coeffs::at(p, sp);
            let x = z.rows(0, n).into_owned();
            let e = z.rows(n, n).into_owned();
            let g = reduced.g.at(sp);
            let aa = &c.a + &c.abar;
            let dd = &c.d + &c.dbar;
            let bbinv = &c.b * &c.binv;
            let ddt_binv = dd.transpose() * &c.binv;
            let dx = (&aa - &bbinv * &dd) * &x - &c.r * &e - &bbinv * &g + &c.bbar;
            let de = -(&c.big_a + &c.big_abar - &ddt_binv * &dd) * &x
                - (aa.transpose() - &ddt_binv * c.b.transpose()) * &e
                + &ddt_binv * &g
                - reduced.f.at(sp)
                - reduced.fbar.at(sp);
            let mut out = DMatrix::zeros(2 * n, 1);
            out.view_mut((0, 0), (n, 1)).copy_from(&dx);
            out.view_mut((n, 0), (n, 1)).copy_from(&de);
            out
        },
        no_proj,
    )?;
    let xs = sol.values.iter().map(|z| z.rows(0, n).into_owned()).collect();
    let es = sol.values.iter().map(|z| z.rows(n, n).into_owned()).collect();
    Ok((xs, es))
}
