//! Pointwise snapshot of the problem coefficients used by the solvers.

use nalgebra::DMatrix;

use crate::grid::StepPoint;
use crate::problem::MFLQProblem;

/// Coefficients of the forward state, observation and cost at one step point,
/// with the derived products every Riccati right-hand side needs.
#[derive(Debug, Clone)]
pub struct Coeffs {
    pub a: DMatrix<f64>,
    pub abar: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub bbar: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub fbar: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub big_a: DMatrix<f64>,
    pub big_abar: DMatrix<f64>,
    pub big_b: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub dbar: DMatrix<f64>,
    /// B⁻¹
    pub binv: DMatrix<f64>,
    /// b B⁻¹ bᵀ
    pub r: DMatrix<f64>,
    /// fᵀ (h hᵀ)⁻¹ f
    pub info: DMatrix<f64>,
    /// (h hᵀ)⁻¹
    pub hhinv: DMatrix<f64>,
}

impl Coeffs {
    /// Panics if `B` or `h` is singular; run validation first.
    pub fn at(p: &MFLQProblem, sp: StepPoint) -> Self {
        let b = p.dynamics.control_gain.at(sp);
        let big_b = p.cost.control.at(sp);
        let binv = big_b.clone().try_inverse().expect("B invertible (validated)");
        let f = p.observation.sensor.at(sp);
        let h = p.observation.noise.at(sp);
        let hhinv = (&h * h.transpose()).try_inverse().expect("h invertible (validated)");
        let r = &b * &binv * b.transpose();
        let info = f.transpose() * &hhinv * &f;
        Self {
            a: p.dynamics.drift.at(sp),
            abar: p.dynamics.mean_drift.at(sp),
            bbar: p.dynamics.offset.at(sp),
            c: p.dynamics.diffusion.at(sp),
            fbar: p.observation.mean_sensor.at(sp),
            g: p.observation.offset.at(sp),
            big_a: p.cost.state.at(sp),
            big_abar: p.cost.state_mean.at(sp),
            d: p.cost.cross.at(sp),
            dbar: p.cost.cross_mean.at(sp),
            b,
            big_b,
            binv,
            f,
            h,
            r,
            info,
            hhinv,
        }
    }

    /// Filter gain `Σ fᵀ (h hᵀ)⁻¹` for a given error covariance.
    pub fn kalman_gain(&self, sigma: &DMatrix<f64>) -> DMatrix<f64> {
        sigma * self.f.transpose() * &self.hhinv
    }

    /// Innovation loading `S = Σ fᵀ (h⁻¹)ᵀ`, so that `dx̂ = ... + S dw̄`.
    pub fn innovation_loading(&self, sigma: &DMatrix<f64>) -> DMatrix<f64> {
        let hinv = self.h.clone().try_inverse().expect("h invertible (validated)");
        sigma * self.f.transpose() * hinv.transpose()
    }
}
