//! Fixed-step classical RK4 for matrix-valued ODEs on a [`TimeGrid`].

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::{StepPoint, TimeGrid};
use crate::linalg::max_norm;
use crate::path::DensePath;

/// Samples whose max-norm exceeds this are treated as finite-time escape.
pub const BLOW_UP_NORM: f64 = 1e12;

/// Largest `dt · L` tolerated, with `L` the local Lipschitz estimate from the
/// two midpoint stages. Beyond the real-axis stability limit of RK4 the step
/// no longer resolves the solution, which for Riccati equations means the
/// solution is escaping.
pub const MAX_STEP_LIPSCHITZ: f64 = 2.785;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// From `t = 0` with an initial value.
    Forward,
    /// From `t = T` with a terminal value.
    Backward,
}

/// Knot values plus the right-hand side at both ends of every step.
#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub values: Vec<DMatrix<f64>>,
    pub d_start: Vec<DMatrix<f64>>,
    pub d_end: Vec<DMatrix<f64>>,
}

impl OdeSolution {
    /// Dense representation with Hermite midpoints.
    pub fn into_dense(self, dt: f64) -> DensePath {
        DensePath::hermite(self.values, &self.d_start, &self.d_end, dt)
    }
}

/// Lipschitz check between the two midpoint stages, which share a time so
/// the difference quotient only sees the state dependence.
fn resolution(
    stage: &'static str,
    knot: usize,
    h: f64,
    y: &DMatrix<f64>,
    (y2, k2): (&DMatrix<f64>, &DMatrix<f64>),
    (y3, k3): (&DMatrix<f64>, &DMatrix<f64>),
) -> Result<()> {
    let dy = max_norm(&(y3 - y2));
    if dy > 1e-12 * (1.0 + max_norm(y)) {
        let hl = h * max_norm(&(k3 - k2)) / dy;
        if hl > MAX_STEP_LIPSCHITZ {
            return Err(Error::BlowUp { stage, knot, norm: max_norm(y3) });
        }
    }
    Ok(())
}

fn guard(stage: &'static str, knot: usize, m: &DMatrix<f64>) -> Result<()> {
    let norm = max_norm(m);
    if norm > BLOW_UP_NORM {
        return Err(Error::BlowUp { stage, knot, norm });
    }
    Ok(())
}

/// Integrates `ẋ = rhs(sp, x)` over the grid.
///
/// `rhs` is evaluated at step-local points, so piecewise-constant data stays
/// on its own step. `project` is applied after every step (symmetrization).
/// Any stage or knot value beyond [`BLOW_UP_NORM`] or non-finite, or a step
/// whose Lipschitz estimate exceeds [`MAX_STEP_LIPSCHITZ`], aborts with
/// [`Error::BlowUp`] tagged with `stage` and the knot the step started from.
pub fn integrate_matrix_ode(
    grid: &TimeGrid,
    boundary: DMatrix<f64>,
    direction: Direction,
    stage: &'static str,
    mut rhs: impl FnMut(StepPoint, &DMatrix<f64>) -> DMatrix<f64>,
    mut project: impl FnMut(&mut DMatrix<f64>),
) -> Result<OdeSolution> {
    let n = grid.steps();
    let h = grid.step();
    let mut values: Vec<DMatrix<f64>> = alloc::vec![DMatrix::zeros(0, 0); n + 1];
    let mut d_start = alloc::vec![DMatrix::zeros(0, 0); n];
    let mut d_end = alloc::vec![DMatrix::zeros(0, 0); n];
    let mut y = boundary;
    project(&mut y);
    match direction {
        Direction::Forward => {
            guard(stage, 0, &y)?;
            values[0] = y.clone();
            for i in 0..n {
                let k1 = rhs(StepPoint::start(i), &y);
                guard(stage, i, &k1)?;
                let y2 = &y + &k1 * (0.5 * h);
                guard(stage, i, &y2)?;
                let k2 = rhs(StepPoint::mid(i), &y2);
                let y3 = &y + &k2 * (0.5 * h);
                guard(stage, i, &y3)?;
                let k3 = rhs(StepPoint::mid(i), &y3);
                resolution(stage, i, h, &y, (&y2, &k2), (&y3, &k3))?;
                let y4 = &y + &k3 * h;
                guard(stage, i, &y4)?;
                let k4 = rhs(StepPoint::end(i), &y4);
                guard(stage, i, &k4)?;
                let mut next = &y + (k1.clone() + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
                project(&mut next);
                guard(stage, i + 1, &next)?;
                d_start[i] = k1;
                d_end[i] = rhs(StepPoint::end(i), &next);
                values[i + 1] = next.clone();
                y = next;
            }
        }
        Direction::Backward => {
            guard(stage, n, &y)?;
            values[n] = y.clone();
            for i in (0..n).rev() {
                let k1 = rhs(StepPoint::end(i), &y);
                guard(stage, i + 1, &k1)?;
                let y2 = &y - &k1 * (0.5 * h);
                guard(stage, i, &y2)?;
                let k2 = rhs(StepPoint::mid(i), &y2);
                let y3 = &y - &k2 * (0.5 * h);
                guard(stage, i, &y3)?;
                let k3 = rhs(StepPoint::mid(i), &y3);
                resolution(stage, i + 1, h, &y, (&y2, &k2), (&y3, &k3))?;
                let y4 = &y - &k3 * h;
                guard(stage, i, &y4)?;
                let k4 = rhs(StepPoint::start(i), &y4);
                guard(stage, i, &k4)?;
                let mut next = &y - (k1.clone() + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
                project(&mut next);
                guard(stage, i, &next)?;
                d_end[i] = k1;
                d_start[i] = rhs(StepPoint::start(i), &next);
                values[i] = next.clone();
                y = next;
            }
        }
    }
    Ok(OdeSolution { values, d_start, d_end })
}
