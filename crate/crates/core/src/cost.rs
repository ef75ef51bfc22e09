//! Analytic cost of the optimal law and of arbitrary affine feedback laws.
//!
//! Two independent routes are provided. [`analytic_cost`] evaluates the
//! closed-form expression in Γ, Λ, Σ and Ex term by term. [`moment_cost`]
//! propagates the mean and covariance of the filter under any affine law
//! and integrates the expected running cost directly. On the optimal law the
//! two agree to quadrature accuracy, which guards the long closed form.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::coeffs::Coeffs;
use crate::error::Result;
use crate::grid::StepPoint;
use crate::linalg::symmetrize;
use crate::ode::{integrate_matrix_ode, Direction};
use crate::path::DensePath;
use crate::problem::MFLQProblem;
use crate::riccati::RiccatiBundle;
use crate::synthesis::{simpson, trapezoid, FeedbackLaw, ReducedCost};

/// Weight on the terminal filter-error term `tr(H Σ_T)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kappa {
    /// ½, from the law of total expectation on `½E⟨Hx_T, x_T⟩`.
    Half,
    /// 1, as the closed form is sometimes printed.
    One,
}

impl Kappa {
    pub fn value(self) -> f64 {
        match self {
            Kappa::Half => 0.5,
            Kappa::One => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Quadrature {
    /// Step-local trapezoid on the knots.
    Trapezoid,
    /// Step-local Simpson using the dense midpoints.
    #[default]
    Simpson,
}

fn integrate(p: &MFLQProblem, q: Quadrature, f: impl FnMut(StepPoint) -> f64) -> f64 {
    match q {
        Quadrature::Trapezoid => trapezoid(p.grid.step(), p.grid.steps(), f),
        Quadrature::Simpson => simpson(p.grid.step(), p.grid.steps(), f),
    }
}

/// Named cost terms in a fixed order, plus the total.
#[derive(Debug, Clone, PartialEq)]
pub struct CostTerms {
    pub terms: Vec<(String, f64)>,
    pub total: f64,
}

impl CostTerms {
    fn from_terms(terms: Vec<(String, f64)>) -> Self {
        let total = terms.iter().map(|(_, v)| v).sum();
        Self { terms, total }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

/// Closed-form optimal cost. With `e = Ex`, `R = bB⁻¹bᵀ`, `S = Σfᵀ(h⁻¹)ᵀ`:
///
/// ```text
/// J = ½∫⟨[(2D+D̄)ᵀB⁻¹D̄ − Ā − 2āᵀΓ]e, e⟩ − ½⟨H̄e_T, e_T⟩
///   + ∫⟨D̄ᵀB⁻¹bᵀΓe − ΓbB⁻¹G − ΓRΛ, e⟩ + ∫⟨bᵀΓe, B⁻¹(bᵀΛ + G)⟩
///   + ½∫⟨Λ, 2b̄ − 2bB⁻¹G − RΛ⟩ − ½∫⟨G, B⁻¹G⟩
///   + ½⟨Γ_0μ0, μ0⟩ + ⟨Λ_0, μ0⟩ + ½∫tr(SᵀΓS)
///   + J0 + ½∫tr(AΣ) + κ tr(HΣ_T)
/// ```
pub fn analytic_cost(
    p: &MFLQProblem,
    reduced: &ReducedCost,
    bundle: &RiccatiBundle,
    kappa: Kappa,
    quad: Quadrature,
) -> CostTerms {
    let b = bundle;
    let mu0 = &p.init.mean;
    let mean_quadratic = 0.5
        * integrate(p, quad, |sp| {
            let c = Coeffs::at(p, sp);
            let e = b.ex.at(sp);
            let m = (&c.d * 2.0 + &c.dbar).transpose() * &c.binv * &c.dbar
                - &c.big_abar
                - c.abar.transpose() * b.gamma.at(sp) * 2.0;
            e.dot(&(m * &e))
        });
    let e_t = b.ex.last();
    let terminal_mean = -0.5 * e_t.dot(&(&p.cost.terminal_mean * e_t));
    let mean_cross = integrate(p, quad, |sp| {
        let c = Coeffs::at(p, sp);
        let e = b.ex.at(sp);
        let gm = b.gamma.at(sp);
        let v = c.dbar.transpose() * &c.binv * c.b.transpose() * &gm * &e
            - &gm * &c.b * &c.binv * reduced.g.at(sp)
            - &gm * &c.r * b.lambda.at(sp);
        v.dot(&e)
    });
    let feedback_coupling = integrate(p, quad, |sp| {
        let c = Coeffs::at(p, sp);
        let l = c.b.transpose() * b.gamma.at(sp) * b.ex.at(sp);
        let rr = &c.binv * (c.b.transpose() * b.lambda.at(sp) + reduced.g.at(sp));
        l.dot(&rr)
    });
    let lambda_running = 0.5
        * integrate(p, quad, |sp| {
            let c = Coeffs::at(p, sp);
            let lam = b.lambda.at(sp);
            let v = &c.bbar * 2.0 - &c.b * &c.binv * reduced.g.at(sp) * 2.0 - &c.r * &lam;
            lam.dot(&v)
        });
    let g_running = -0.5
        * integrate(p, quad, |sp| {
            let c = Coeffs::at(p, sp);
            let g = reduced.g.at(sp);
            g.dot(&(&c.binv * &g))
        });
    let initial = 0.5 * mu0.dot(&(b.gamma.first() * mu0)) + b.lambda.first().dot(mu0);
    let filter_trace = 0.5
        * integrate(p, quad, |sp| {
            let c = Coeffs::at(p, sp);
            let s = c.innovation_loading(&b.sigma.at(sp));
            (s.transpose() * b.gamma.at(sp) * s).trace()
        });
    let trace_running = 0.5
        * integrate(p, quad, |sp| (p.cost.state.at(sp) * b.sigma.at(sp)).trace());
    let trace_terminal = kappa.value() * (&p.cost.terminal * b.sigma.last()).trace();
    CostTerms::from_terms(alloc::vec![
        ("mean_quadratic".into(), mean_quadratic),
        ("terminal_mean".into(), terminal_mean),
        ("mean_cross".into(), mean_cross),
        ("feedback_coupling".into(), feedback_coupling),
        ("lambda_running".into(), lambda_running),
        ("g_running".into(), g_running),
        ("initial".into(), initial),
        ("filter_trace".into(), filter_trace),
        ("J0".into(), reduced.j0),
        ("trace_running".into(), trace_running),
        ("trace_terminal".into(), trace_terminal),
    ])
}

/// Expected running integrand of the reduced cost given the mean `e` and
/// covariance `P` of x̂ under `u = K_x x̂ + K_m e + u_0`.
fn moment_integrand(
    c: &Coeffs,
    reduced: &ReducedCost,
    sp: StepPoint,
    law: &FeedbackLaw,
    e: &DMatrix<f64>,
    pcov: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
) -> f64 {
    let kx = law.gain_filter.at(sp);
    let ubar = (&kx + law.gain_mean.at(sp)) * e + law.offset.at(sp);
    let cov_x = pcov + sigma;
    let v = e.dot(&(&c.big_a * e))
        + (&c.big_a * &cov_x).trace()
        + e.dot(&(&c.big_abar * e))
        + ubar.dot(&(&c.big_b * &ubar))
        + (&c.big_b * &kx * pcov * kx.transpose()).trace()
        + 2.0 * (ubar.dot(&(&c.d * e)) + (&c.d * pcov * kx.transpose()).trace())
        + 2.0 * ubar.dot(&(&c.dbar * e))
        + 2.0 * (reduced.f.at(sp) + reduced.fbar.at(sp)).dot(e)
        + 2.0 * reduced.g.at(sp).dot(&ubar);
    0.5 * v
}

fn moment_terminal(p: &MFLQProblem, reduced: &ReducedCost, e: &DMatrix<f64>, cov_x: &DMatrix<f64>) -> f64 {
    let h = &p.cost.terminal;
    0.5 * (e.dot(&(h * e))
        + (h * cov_x).trace()
        + e.dot(&(&p.cost.terminal_mean * e))
        + 2.0 * (&reduced.l + &reduced.lbar).dot(e))
}

/// Mean and filter covariance of the closed loop under an affine law.
#[derive(Debug, Clone)]
pub struct Moments {
    /// E x̂ = E x.
    pub mean: DensePath,
    /// Cov(x̂); `Cov(x) = P + Σ`.
    pub cov: DensePath,
}

/// RK4 propagation of `ė = (a + ā + b(K_x + K_m))e + b u_0 + b̄` and
/// `Ṗ = (a + bK_x)P + P(a + bK_x)ᵀ + S Sᵀ`, `P(0) = 0`.
pub fn closed_loop_moments(p: &MFLQProblem, sigma: &DensePath, law: &FeedbackLaw) -> Result<Moments> {
    let n = p.dims.state;
    let mut init = DMatrix::zeros(n, n + 1);
    init.column_mut(0).copy_from(&p.init.mean.column(0));
    let sol = integrate_matrix_ode(
        &p.grid,
        init,
        Direction::Forward,
        "moments",
        |sp, z| {
            let c = Coeffs::at(p, sp);
            let e = z.columns(0, 1).into_owned();
            let pc = z.columns(1, n).into_owned();
            let kx = law.gain_filter.at(sp);
            let acl = &c.a + &c.b * &kx;
            let de = (&c.a + &c.abar + &c.b * (&kx + law.gain_mean.at(sp))) * &e
                + &c.b * law.offset.at(sp)
                + &c.bbar;
            let s = c.innovation_loading(&sigma.at(sp));
            let dp = &acl * &pc + &pc * acl.transpose() + &s * s.transpose();
            let mut out = DMatrix::zeros(n, n + 1);
            out.columns_mut(0, 1).copy_from(&de);
            out.columns_mut(1, n).copy_from(&dp);
            out
        },
        |z| {
            let mut pc = z.columns(1, n).into_owned();
            symmetrize(&mut pc);
            z.columns_mut(1, n).copy_from(&pc);
        },
    )?;
    let dense = sol.into_dense(p.grid.step());
    Ok(Moments {
        mean: dense.map(|z| z.columns(0, 1).into_owned()),
        cov: dense.map(|z| z.columns(1, n).into_owned()),
    })
}

/// Expected cost of an arbitrary affine law from its first two moments.
/// The terminal filter-error weight is ½ by construction.
pub fn moment_cost(
    p: &MFLQProblem,
    reduced: &ReducedCost,
    sigma: &DensePath,
    law: &FeedbackLaw,
    quad: Quadrature,
) -> Result<CostTerms> {
    let mo = closed_loop_moments(p, sigma, law)?;
    let running = integrate(p, quad, |sp| {
        let c = Coeffs::at(p, sp);
        moment_integrand(&c, reduced, sp, law, &mo.mean.at(sp), &mo.cov.at(sp), &sigma.at(sp))
    });
    let terminal = moment_terminal(p, reduced, mo.mean.last(), &(mo.cov.last() + sigma.last()));
    Ok(CostTerms::from_terms(alloc::vec![
        ("running".into(), running),
        ("terminal".into(), terminal),
        ("J0".into(), reduced.j0),
    ]))
}

/// Cost of the Euler-discretized mean flow `e_{i+1} = e_i + dt(...)` with
/// knot trapezoid. For noise-free scenarios (c = 0, σ0 = 0) this is exactly
/// what a single simulated path computes.
pub fn euler_mean_cost(p: &MFLQProblem, reduced: &ReducedCost, law: &FeedbackLaw) -> f64 {
    let dt = p.grid.step();
    let steps = p.grid.steps();
    let n = p.dims.state;
    let zero = DMatrix::zeros(n, n);
    let mut e = p.init.mean.clone();
    let mut acc = 0.0;
    let mut prev = {
        let sp = StepPoint::start(0);
        moment_integrand(&Coeffs::at(p, sp), reduced, sp, law, &e, &zero, &zero)
    };
    for i in 0..steps {
        let sp = StepPoint::start(i);
        let c = Coeffs::at(p, sp);
        let u = law.at(sp, &e, &e);
        e = &e + (&c.a * &e + &c.abar * &e + &c.b * u + &c.bbar) * dt;
        let knot = if i + 1 < steps { StepPoint::start(i + 1) } else { StepPoint::end(i) };
        let cur = moment_integrand(&Coeffs::at(p, knot), reduced, knot, law, &e, &zero, &zero);
        acc += 0.5 * dt * (prev + cur);
        prev = cur;
    }
    acc + moment_terminal(p, reduced, &e, &zero) + reduced.j0
}
