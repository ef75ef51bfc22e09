//! Structural assumption checks and the special-case gate.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, condition_number, max_eig, min_eig};
use crate::path::CoefficientPath;
use crate::problem::MFLQProblem;

/// Smallest eigenvalue accepted for `B`.
pub const B_MIN_EIG: f64 = 1e-10;
/// Tolerance for symmetry of the symmetric coefficients.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// A gated coefficient counts as zero below this max-norm.
pub const GATE_TOL: f64 = 1e-14;
/// `a1_margin` at or above this marks the mean-field convexity condition as satisfied.
pub const A1_TOL: f64 = -1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    /// min over knots of λ_min(A + Ā − (D+D̄)ᵀB⁻¹(D+D̄)).
    pub a1_margin: f64,
    /// max over knots of λ_max(DᵀB⁻¹D − A).
    pub a2_constant: f64,
    /// min over knots of λ_min(B).
    pub b_min_eig: f64,
    /// max over knots of the 2-norm condition number of h.
    pub h_max_condition: f64,
    pub gate_ok: bool,
    pub messages: Vec<String>,
}

impl AssumptionReport {
    pub fn a1_ok(&self) -> bool {
        self.a1_margin >= A1_TOL
    }
}

/// Outcome of the special-case gate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GateDecision {
    /// Offending coefficients as `symbol (key)`.
    pub violations: Vec<String>,
}

impl GateDecision {
    pub fn accepted(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.accepted() {
            Ok(())
        } else {
            Err(Error::GateViolation(self.violations))
        }
    }
}

/// Accepts iff `M` and the whole γ-family vanish. β and β̄ are not gated.
pub fn special_case_gate(problem: &MFLQProblem) -> GateDecision {
    let mut violations = Vec::new();
    if crate::linalg::max_norm(&problem.cost.utility_quadratic) > GATE_TOL {
        violations.push("M".to_string());
    }
    for (key, symbol) in [
        ("gamma", "γ"),
        ("gammabar", "γ̄"),
        ("gammatilde", "γ̃"),
        ("gammabartilde", "γ̄̃"),
    ] {
        let worst = problem
            .family(key)
            .expect("family key")
            .iter()
            .map(CoefficientPath::max_abs)
            .fold(0.0_f64, f64::max);
        if !(worst <= GATE_TOL) {
            violations.push(format!("{symbol} ({key})"));
        }
    }
    GateDecision { violations }
}

fn check_symmetric(key: &str, knot: usize, m: &DMatrix<f64>) -> Result<()> {
    let a = asymmetry(m);
    if a > SYMMETRY_TOL {
        return Err(Error::NotSymmetric { key: key.to_string(), knot, asymmetry: a });
    }
    Ok(())
}

fn eig_or(key: &str, knot: usize, v: Option<f64>) -> Result<f64> {
    v.ok_or_else(|| Error::Eigen { key: key.to_string(), knot })
}

/// Eigenvalue sweep over all knots.
///
/// Hard failures: asymmetric symmetric coefficients, `B` not positive
/// definite, `h` singular, `σ0` not PSD. Semidefiniteness of `A`, `H`, `M`,
/// `A+Ā` and `H+H̄` is reported in `messages` but not enforced, so that
/// ill-posed data reaches the solvers and fails there with a blow-up.
pub fn validate(problem: &MFLQProblem) -> Result<AssumptionReport> {
    let c = &problem.cost;
    let knots = problem.grid.knots();
    let mut messages = Vec::new();

    for (key, m) in [
        ("sigma0", &problem.init.covariance),
        ("H", &c.terminal),
        ("Hbar", &c.terminal_mean),
        ("M", &c.utility_quadratic),
    ] {
        check_symmetric(key, 0, m)?;
    }
    let s0 = eig_or("sigma0", 0, min_eig(&problem.init.covariance))?;
    if s0 < -1e-12 {
        return Err(Error::Domain(format!(
            "sigma0 is not positive semidefinite (smallest eigenvalue {s0:e})"
        )));
    }
    let hh = &c.terminal + &c.terminal_mean;
    for (name, m) in [("H", &c.terminal), ("H+Hbar", &hh), ("M", &c.utility_quadratic)] {
        let e = eig_or(name, 0, min_eig(m))?;
        if e < -1e-12 {
            messages.push(format!("{name} is not positive semidefinite (smallest eigenvalue {e:e})"));
        }
    }

    let mut a1_margin = f64::INFINITY;
    let mut a2_constant = f64::NEG_INFINITY;
    let mut b_min = f64::INFINITY;
    let mut h_cond = 0.0_f64;
    let mut a_psd_warned = false;
    let mut sum_psd_warned = false;

    for i in 0..knots {
        let a = c.state.knot(i);
        let abar = c.state_mean.knot(i);
        let b = c.control.knot(i);
        let d = c.cross.knot(i);
        let dbar = c.cross_mean.knot(i);
        check_symmetric("A", i, a)?;
        check_symmetric("Abar", i, abar)?;
        check_symmetric("B", i, b)?;

        let be = eig_or("B", i, min_eig(b))?;
        b_min = b_min.min(be);
        if be < B_MIN_EIG {
            return Err(Error::NotPositiveDefinite { key: "B".to_string(), knot: i, min_eig: be });
        }
        let binv = b.clone().try_inverse().ok_or(Error::Singular { key: "B".to_string(), knot: i })?;

        let h = problem.observation.noise.knot(i);
        if h.clone().try_inverse().is_none() {
            return Err(Error::Singular { key: "h".to_string(), knot: i });
        }
        let cond = condition_number(h);
        if !cond.is_finite() || cond > 1e14 {
            return Err(Error::Singular { key: "h".to_string(), knot: i });
        }
        h_cond = h_cond.max(cond);

        let dd = d + dbar;
        let a1 = a + abar - dd.transpose() * &binv * &dd;
        a1_margin = a1_margin.min(eig_or("A1", i, min_eig(&a1))?);
        let a2 = d.transpose() * &binv * d - a;
        a2_constant = a2_constant.max(eig_or("A2", i, max_eig(&a2))?);

        if !a_psd_warned && eig_or("A", i, min_eig(a))? < -1e-12 {
            messages.push(format!("A is not positive semidefinite at knot {i}"));
            a_psd_warned = true;
        }
        if !sum_psd_warned && eig_or("A+Abar", i, min_eig(&(a + abar)))? < -1e-12 {
            messages.push(format!("A+Abar is not positive semidefinite at knot {i}"));
            sum_psd_warned = true;
        }
    }

    if a1_margin < A1_TOL {
        messages.push(format!("mean-field convexity condition violated: margin {a1_margin:e}"));
    }
    messages.push(format!("cross-term constant max eig(D'B^-1 D - A) = {a2_constant:e}"));
    let gate = special_case_gate(problem);
    for v in &gate.violations {
        messages.push(format!("gate: {v} is nonzero"));
    }

    Ok(AssumptionReport {
        a1_margin,
        a2_constant,
        b_min_eig: b_min,
        h_max_condition: h_cond,
        gate_ok: gate.accepted(),
        messages,
    })
}
