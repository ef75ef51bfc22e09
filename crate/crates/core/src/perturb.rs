//! Fixed-process perturbations of a simulated closed loop.
//!
//! A direction `v` is an observation-adapted process read off the base path
//! (a time function, a linear function of the base filter, or its block
//! projection). The perturbed control `u + εv` drives the state
//! `x + εδx` with `dδx = (a δx + ā δm + b v)dt`, where `δm = Eδx` follows the
//! same Euler recursion with `Ev` in place of `v`. Because `v` does not react
//! to `ε`, the cost along a path is an exact quadratic in `ε`, and the pathwise
//! difference against the base cost uses common random numbers by
//! construction.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::gemv_acc;
use crate::projection::BlockProjector;
use crate::simulate::{ClosedLoopPlan, CostScratch, PathRecord};

/// Perturbation direction.
#[derive(Debug, Clone)]
pub enum Direction {
    /// Deterministic `v(t_i)`, one k-vector per knot.
    TimeFunction(Vec<DMatrix<f64>>),
    /// `v = K (x̂ − E x̂)` when `centered`, else `v = K x̂`.
    Filter { gain: DMatrix<f64>, centered: bool },
    /// Block projection (first block zero) of `K x̂`.
    ProjectedFilter { gain: DMatrix<f64>, blocks: usize },
}

impl Direction {
    /// The constant direction `v ≡ value`.
    pub fn constant(grid: &TimeGrid, value: &DMatrix<f64>) -> Self {
        Direction::TimeFunction((0..grid.knots()).map(|_| value.clone()).collect())
    }

    /// Deterministic direction `v(t) = f(t)`.
    pub fn time_function(grid: &TimeGrid, f: impl Fn(f64) -> DMatrix<f64>) -> Self {
        Direction::TimeFunction(grid.times().map(f).collect())
    }

    /// Short label for reports.
    pub fn label(&self) -> alloc::string::String {
        match self {
            Direction::TimeFunction(_) => "time function".into(),
            Direction::Filter { centered: false, .. } => "K xhat".into(),
            Direction::Filter { centered: true, .. } => "K (xhat - E xhat)".into(),
            Direction::ProjectedFilter { blocks, .. } => alloc::format!("K xhat projected on {blocks} blocks"),
        }
    }
}

/// Per-direction deterministic data: `Ev` and `δm` per knot. Expectations of
/// filter-based directions use the exact Euler mean of the filter, so `δm` is
/// exactly `Eδx` on the grid.
#[derive(Debug, Clone)]
pub struct PerturbationPlan {
    direction: Direction,
    n: usize,
    k: usize,
    steps: usize,
    gain: Vec<f64>,
    projector: Option<BlockProjector>,
    mean_v: Vec<f64>,
    dm: Vec<f64>,
    filter_mean: Vec<f64>,
}

impl PerturbationPlan {
    pub fn new(plan: &ClosedLoopPlan, grid: &TimeGrid, direction: Direction) -> Result<Self> {
        let (n, k, steps) = (plan.n, plan.k, plan.steps);
        if grid.steps() != steps {
            return Err(Error::GridMismatch { expected: steps, got: grid.steps() });
        }
        let check_gain = |g: &DMatrix<f64>| {
            if g.shape() != (k, n) {
                return Err(Error::DimensionMismatch {
                    key: "direction gain".into(),
                    expected_rows: k,
                    expected_cols: n,
                    rows: g.nrows(),
                    cols: g.ncols(),
                });
            }
            Ok(g.as_slice().to_vec())
        };
        let mut mean_v = alloc::vec![0.0; (steps + 1) * k];
        let m = plan.discrete_mean();
        let m_at = |i: usize| &m[i * n..(i + 1) * n];
        let mut gain = Vec::new();
        let mut projector = None;
        match &direction {
            Direction::TimeFunction(v) => {
                if v.len() != steps + 1 {
                    return Err(Error::GridMismatch { expected: steps + 1, got: v.len() });
                }
                for (i, vi) in v.iter().enumerate() {
                    if vi.len() != k {
                        return Err(Error::DimensionMismatch {
                            key: "direction".into(),
                            expected_rows: k,
                            expected_cols: 1,
                            rows: vi.nrows(),
                            cols: vi.ncols(),
                        });
                    }
                    mean_v[i * k..(i + 1) * k].copy_from_slice(vi.as_slice());
                }
            }
            Direction::Filter { gain: g, centered } => {
                gain = check_gain(g)?;
                if !centered {
                    for i in 0..=steps {
                        gemv_acc(&mut mean_v[i * k..(i + 1) * k], &gain, m_at(i));
                    }
                }
            }
            Direction::ProjectedFilter { gain: g, blocks } => {
                gain = check_gain(g)?;
                let proj = BlockProjector::new(grid, *blocks)?;
                let mut kex = alloc::vec![0.0; steps * k];
                for i in 0..steps {
                    gemv_acc(&mut kex[i * k..(i + 1) * k], &gain, m_at(i));
                }
                let mut avg = alloc::vec![0.0; blocks * k];
                proj.project(&kex, k, &alloc::vec![0.0; k], &mut avg, &mut mean_v[..steps * k]);
                // Terminal knot carries the last step's value.
                mean_v.copy_within((steps - 1) * k..steps * k, steps * k);
                projector = Some(proj);
            }
        }
        // δm_{i+1} = δm_i + ((a+ā) δm_i + b Ev_i) dt.
        let mut dm = alloc::vec![0.0; (steps + 1) * n];
        for i in 0..steps {
            let (a, abar, b) = plan.drift_coefficients(i);
            let (cur, next) = dm.split_at_mut((i + 1) * n);
            let cur = &cur[i * n..];
            let next = &mut next[..n];
            let mut drift = alloc::vec![0.0; n];
            gemv_acc(&mut drift, a, cur);
            gemv_acc(&mut drift, abar, cur);
            gemv_acc(&mut drift, b, &mean_v[i * k..(i + 1) * k]);
            for ((nx, c), d) in next.iter_mut().zip(cur).zip(&drift) {
                *nx = c + d * plan.dt;
            }
        }
        Ok(Self { direction, n, k, steps, gain, projector, mean_v, dm, filter_mean: m })
    }

    pub fn direction(&self) -> &Direction {
        &self.direction
    }

    /// `E v` at knot `i`.
    pub fn mean_direction(&self, i: usize) -> &[f64] {
        &self.mean_v[i * self.k..(i + 1) * self.k]
    }

    /// Exact Euler mean of the filter at knot `i`.
    pub fn filter_mean(&self, i: usize) -> &[f64] {
        &self.filter_mean[i * self.n..(i + 1) * self.n]
    }

    /// `δm` at knot `i`.
    pub fn mean_shift(&self, i: usize) -> &[f64] {
        &self.dm[i * self.n..(i + 1) * self.n]
    }

    /// Writes the direction along the base path into `v` (`knots × k`).
    fn sample(&self, rec: &PathRecord, s: &mut PerturbScratch) {
        let (k, steps) = (self.k, self.steps);
        match &self.direction {
            Direction::TimeFunction(_) => s.v.copy_from_slice(&self.mean_v),
            Direction::Filter { centered, .. } => {
                for i in 0..=steps {
                    let xh = rec.xhat_at(i);
                    let dst = &mut s.v[i * k..(i + 1) * k];
                    dst.iter_mut().for_each(|x| *x = 0.0);
                    if *centered {
                        for ((c, x), e) in s.centered.iter_mut().zip(xh).zip(self.filter_mean(i)) {
                            *c = x - e;
                        }
                        gemv_acc(dst, &self.gain, &s.centered);
                    } else {
                        gemv_acc(dst, &self.gain, xh);
                    }
                }
            }
            Direction::ProjectedFilter { blocks, .. } => {
                let proj = self.projector.as_ref().expect("projector built with the plan");
                s.kx.iter_mut().for_each(|x| *x = 0.0);
                for i in 0..steps {
                    gemv_acc(&mut s.kx[i * k..(i + 1) * k], &self.gain, rec.xhat_at(i));
                }
                s.avg.resize(blocks * k, 0.0);
                proj.project(&s.kx, k, &s.nu, &mut s.avg, &mut s.v[..steps * k]);
                s.v.copy_within((steps - 1) * k..steps * k, steps * k);
            }
        }
    }
}

/// Caller-owned buffers for [`perturbed_cost_deltas`].
#[derive(Debug, Clone)]
pub struct PerturbScratch {
    v: Vec<f64>,
    dx: Vec<f64>,
    kx: Vec<f64>,
    avg: Vec<f64>,
    nu: Vec<f64>,
    centered: Vec<f64>,
    drift: Vec<f64>,
    x: Vec<f64>,
    u: Vec<f64>,
    e: Vec<f64>,
    cost: CostScratch,
}

impl PerturbScratch {
    pub fn new(plan: &ClosedLoopPlan) -> Self {
        let (n, k, steps) = (plan.n, plan.k, plan.steps);
        Self {
            v: alloc::vec![0.0; (steps + 1) * k],
            dx: alloc::vec![0.0; (steps + 1) * n],
            kx: alloc::vec![0.0; steps * k],
            avg: Vec::new(),
            nu: alloc::vec![0.0; k],
            centered: alloc::vec![0.0; n],
            drift: alloc::vec![0.0; n],
            x: alloc::vec![0.0; n],
            u: alloc::vec![0.0; k],
            e: alloc::vec![0.0; n],
            cost: CostScratch::new(n, k),
        }
    }
}

/// Pathwise cost of the base path shifted by `ε` along the direction, without
/// `J0`. The control is held over each step, as the Euler state recursion
/// uses it, so step `i` contributes `½dt[ℓ(x_i, u_i, e_i) + ℓ(x_{i+1}, u_i,
/// e_{i+1})]` and the terminal-knot control plays no role.
fn shifted_cost(plan: &ClosedLoopPlan, pp: &PerturbationPlan, rec: &PathRecord, eps: f64, s: &mut PerturbScratch) -> f64 {
    let (n, k, steps, dt) = (plan.n, plan.k, plan.steps, plan.dt);
    let mut cost = 0.0;
    for i in 0..=steps {
        for c in 0..n {
            s.x[c] = rec.x_at(i)[c] + eps * s.dx[i * n + c];
            s.e[c] = plan.mean_at(i)[c] + eps * pp.dm[i * n + c];
        }
        if i > 0 {
            // Right end of step i−1 with the control of step i−1 still in force.
            cost += 0.5 * dt * plan.running(i, &s.x, &s.u, &s.e, &mut s.cost);
        }
        if i == steps {
            break;
        }
        for c in 0..k {
            s.u[c] = rec.u_at(i)[c] + eps * s.v[i * k + c];
        }
        cost += 0.5 * dt * plan.running(i, &s.x, &s.u, &s.e, &mut s.cost);
    }
    cost + plan.terminal(&s.x, &s.e, &mut s.cost)
}

/// For a base path already simulated into `rec` (observation mode), writes
/// `J_path[u + ε v] − J_path[u]` for every `ε` into `out`.
pub fn perturbed_cost_deltas(
    plan: &ClosedLoopPlan,
    pp: &PerturbationPlan,
    rec: &PathRecord,
    epsilons: &[f64],
    out: &mut [f64],
    s: &mut PerturbScratch,
) {
    let (n, k, steps, dt) = (plan.n, plan.k, plan.steps, plan.dt);
    pp.sample(rec, s);
    // δx_{i+1} = δx_i + (a δx_i + ā δm_i + b v_i) dt, δx_0 = 0.
    s.dx[..n].iter_mut().for_each(|x| *x = 0.0);
    for i in 0..steps {
        let (a, abar, b) = plan.drift_coefficients(i);
        s.drift.iter_mut().for_each(|x| *x = 0.0);
        gemv_acc(&mut s.drift, a, &s.dx[i * n..(i + 1) * n]);
        gemv_acc(&mut s.drift, abar, &pp.dm[i * n..(i + 1) * n]);
        gemv_acc(&mut s.drift, b, &s.v[i * k..(i + 1) * k]);
        for c in 0..n {
            s.dx[(i + 1) * n + c] = s.dx[i * n + c] + s.drift[c] * dt;
        }
    }
    let base = shifted_cost(plan, pp, rec, 0.0, s);
    for (o, &eps) in out.iter_mut().zip(epsilons) {
        *o = shifted_cost(plan, pp, rec, eps, s) - base;
    }
}
