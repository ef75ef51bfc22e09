//! Per-path Euler–Maruyama kernels.
//!
//! A [`ClosedLoopPlan`] flattens every coefficient the inner loop touches into
//! contiguous column-major arrays indexed by step, so a path costs no
//! allocation beyond the caller-owned [`PathRecord`]. All controls are affine
//! in the filter, `u = K_x x̂ + u_0(t)`, where `u_0` already contains the
//! mean-field part `K_m Ex`. Ex is the deterministic closed-loop mean of the
//! same law, not an ensemble average.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::coeffs::Coeffs;
use crate::cost::closed_loop_moments;
use crate::error::{Error, Result};
use crate::grid::StepPoint;
use crate::linalg::{gemv_acc, psd_sqrt};
use crate::noise::NoiseSlab;
use crate::path::DensePath;
use crate::problem::MFLQProblem;
use crate::synthesis::{FeedbackLaw, ReducedCost};

/// Coefficient sample point for knot `i`: the start of step `i`, or the end
/// of the last step for the terminal knot.
pub fn knot_point(i: usize, steps: usize) -> StepPoint {
    if i < steps {
        StepPoint::start(i)
    } else {
        StepPoint::end(steps - 1)
    }
}

/// Flat column-major table of one matrix per step or knot.
#[derive(Debug, Clone, Default)]
struct Table {
    len: usize,
    data: Vec<f64>,
}

impl Table {
    fn build(count: usize, mut f: impl FnMut(usize) -> DMatrix<f64>) -> Self {
        let mut data = Vec::new();
        let mut len = 0;
        for i in 0..count {
            let m = f(i);
            len = m.len();
            data.extend_from_slice(m.as_slice());
        }
        Self { len, data }
    }

    #[inline]
    fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.len..(i + 1) * self.len]
    }
}

/// Everything a path kernel needs for one affine law.
#[derive(Debug, Clone)]
pub struct ClosedLoopPlan {
    pub n: usize,
    pub k: usize,
    pub r: usize,
    pub rt: usize,
    pub steps: usize,
    pub dt: f64,
    mu0: Vec<f64>,
    sigma0_sqrt: Vec<f64>,
    // per step
    a: Table,
    abar: Table,
    drift0: Table,
    b: Table,
    c: Table,
    f: Table,
    obs0: Table,
    h: Table,
    hinv: Table,
    kgain: Table,
    sload: Table,
    // per knot
    kx: Table,
    u0: Table,
    cost_a: Table,
    cost_abar: Table,
    cost_b: Table,
    cost_d: Table,
    cost_dbar: Table,
    cost_f: Table,
    cost_fbar: Table,
    cost_g: Table,
    term_h: Vec<f64>,
    term_hbar: Vec<f64>,
    term_l: Vec<f64>,
    term_lbar: Vec<f64>,
    /// Deterministic closed-loop mean at each knot.
    pub mean: Vec<DMatrix<f64>>,
}

impl ClosedLoopPlan {
    /// Plan for `law`, whose closed-loop mean is computed here by RK4.
    pub fn new(
        p: &MFLQProblem,
        reduced: &ReducedCost,
        sigma: &DensePath,
        law: &FeedbackLaw,
    ) -> Result<Self> {
        let moments = closed_loop_moments(p, sigma, law)?;
        let mean = moments.mean.knot_values();
        Self::with_mean(p, reduced, sigma, law, mean)
    }

    /// Plan with an externally supplied mean path (one value per knot).
    pub fn with_mean(
        p: &MFLQProblem,
        reduced: &ReducedCost,
        sigma: &DensePath,
        law: &FeedbackLaw,
        mean: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let steps = p.grid.steps();
        if mean.len() != steps + 1 {
            return Err(Error::GridMismatch { expected: steps + 1, got: mean.len() });
        }
        if law.steps() != steps || sigma.steps() != steps {
            return Err(Error::GridMismatch { expected: steps + 1, got: law.steps() + 1 });
        }
        let d = p.dims;
        let coeff_steps: Vec<Coeffs> = (0..steps).map(|i| Coeffs::at(p, StepPoint::start(i))).collect();
        let coeff_knots: Vec<Coeffs> = (0..=steps).map(|i| Coeffs::at(p, knot_point(i, steps))).collect();
        let cs = &coeff_steps;
        let ck = &coeff_knots;
        let sig = |i: usize| sigma.knot(i).clone();
        let kp = |i| knot_point(i, steps);
        let sqrt0 = psd_sqrt(&p.init.covariance)
            .ok_or_else(|| Error::Domain("sigma0 has non-finite entries".into()))?;
        Ok(Self {
            n: d.state,
            k: d.control,
            r: d.state_noise,
            rt: d.obs_noise,
            steps,
            dt: p.grid.step(),
            mu0: p.init.mean.as_slice().to_vec(),
            sigma0_sqrt: sqrt0.as_slice().to_vec(),
            a: Table::build(steps, |i| cs[i].a.clone()),
            abar: Table::build(steps, |i| cs[i].abar.clone()),
            drift0: Table::build(steps, |i| &cs[i].abar * &mean[i] + &cs[i].bbar),
            b: Table::build(steps, |i| cs[i].b.clone()),
            c: Table::build(steps, |i| cs[i].c.clone()),
            f: Table::build(steps, |i| cs[i].f.clone()),
            obs0: Table::build(steps, |i| &cs[i].fbar * &mean[i] + &cs[i].g),
            h: Table::build(steps, |i| cs[i].h.clone()),
            hinv: Table::build(steps, |i| cs[i].h.clone().try_inverse().expect("h invertible")),
            kgain: Table::build(steps, |i| cs[i].kalman_gain(&sig(i))),
            sload: Table::build(steps, |i| cs[i].innovation_loading(&sig(i))),
            kx: Table::build(steps + 1, |i| law.gain_filter.at(kp(i))),
            u0: Table::build(steps + 1, |i| law.gain_mean.at(kp(i)) * &mean[i] + law.offset.at(kp(i))),
            cost_a: Table::build(steps + 1, |i| ck[i].big_a.clone()),
            cost_abar: Table::build(steps + 1, |i| ck[i].big_abar.clone()),
            cost_b: Table::build(steps + 1, |i| ck[i].big_b.clone()),
            cost_d: Table::build(steps + 1, |i| ck[i].d.clone()),
            cost_dbar: Table::build(steps + 1, |i| ck[i].dbar.clone()),
            cost_f: Table::build(steps + 1, |i| reduced.f.at(kp(i))),
            cost_fbar: Table::build(steps + 1, |i| reduced.fbar.at(kp(i))),
            cost_g: Table::build(steps + 1, |i| reduced.g.at(kp(i))),
            term_h: p.cost.terminal.as_slice().to_vec(),
            term_hbar: p.cost.terminal_mean.as_slice().to_vec(),
            term_l: reduced.l.as_slice().to_vec(),
            term_lbar: reduced.lbar.as_slice().to_vec(),
            mean,
        })
    }

    /// Adds a deterministic open-loop term `extra[i]` (one k-vector per knot)
    /// to the control offset.
    pub fn add_open_loop(&mut self, extra: &[DMatrix<f64>]) {
        for (i, v) in extra.iter().enumerate().take(self.steps + 1) {
            let len = self.u0.len;
            for (dst, src) in self.u0.data[i * len..(i + 1) * len].iter_mut().zip(v.iter()) {
                *dst += src;
            }
        }
    }

    /// Exact expectation of the Euler state (and filter) per knot,
    /// `knots × n`. The estimation error `x − x̂` has zero mean step by step,
    /// so both follow `m_{i+1} = m_i + ((a + b K_x) m_i + ā Ex_i + b u_0 + b̄) dt`.
    /// It differs from the RK4 mean by the Euler bias.
    pub fn discrete_mean(&self) -> Vec<f64> {
        let (n, k) = (self.n, self.k);
        let mut m = alloc::vec![0.0; (self.steps + 1) * n];
        m[..n].copy_from_slice(&self.mu0);
        let mut u = alloc::vec![0.0; k];
        let mut drift = alloc::vec![0.0; n];
        for i in 0..self.steps {
            let (cur, next) = m.split_at_mut((i + 1) * n);
            let cur = &cur[i * n..];
            u.copy_from_slice(self.u0.get(i));
            gemv_acc(&mut u, self.kx.get(i), cur);
            drift.copy_from_slice(self.drift0.get(i));
            gemv_acc(&mut drift, self.a.get(i), cur);
            gemv_acc(&mut drift, self.b.get(i), &u);
            for ((nx, c), d) in next[..n].iter_mut().zip(cur).zip(&drift) {
                *nx = c + d * self.dt;
            }
        }
        m
    }

    /// Reduced running integrand at knot `i` for state `x`, control `u` and
    /// mean `e`:
    /// `½[⟨Ax,x⟩ + ⟨Āe,e⟩ + ⟨Bu,u⟩ + 2⟨Dx,u⟩ + 2⟨D̄e,u⟩ + 2⟨F,x⟩ + 2⟨F̄,e⟩ + 2⟨G,u⟩]`.
    #[inline]
    pub fn running(&self, i: usize, x: &[f64], u: &[f64], e: &[f64], s: &mut CostScratch) -> f64 {
        let quad = |m: &[f64], v: &[f64], w: &[f64], tmp: &mut [f64]| {
            tmp.iter_mut().for_each(|t| *t = 0.0);
            gemv_acc(tmp, m, v);
            dot(tmp, w)
        };
        let xax = quad(self.cost_a.get(i), x, x, &mut s.n);
        let eae = quad(self.cost_abar.get(i), e, e, &mut s.n);
        let ubu = quad(self.cost_b.get(i), u, u, &mut s.k);
        let udx = quad(self.cost_d.get(i), x, u, &mut s.k);
        let ude = quad(self.cost_dbar.get(i), e, u, &mut s.k);
        let lin = dot(self.cost_f.get(i), x) + dot(self.cost_fbar.get(i), e) + dot(self.cost_g.get(i), u);
        0.5 * (xax + eae + ubu + 2.0 * (udx + ude + lin))
    }

    /// `½[⟨Hx,x⟩ + ⟨H̄e,e⟩ + 2⟨L,x⟩ + 2⟨L̄,e⟩]`.
    #[inline]
    pub fn terminal(&self, x: &[f64], e: &[f64], s: &mut CostScratch) -> f64 {
        s.n.iter_mut().for_each(|t| *t = 0.0);
        gemv_acc(&mut s.n, &self.term_h, x);
        let xhx = dot(&s.n, x);
        s.n.iter_mut().for_each(|t| *t = 0.0);
        gemv_acc(&mut s.n, &self.term_hbar, e);
        let ehe = dot(&s.n, e);
        0.5 * (xhx + ehe + 2.0 * (dot(&self.term_l, x) + dot(&self.term_lbar, e)))
    }

    /// Mean at knot `i` as a slice.
    pub fn mean_at(&self, i: usize) -> &[f64] {
        self.mean[i].as_slice()
    }

    /// Step-`i` coefficient slices `(a, ā, b)` in column-major order.
    pub fn drift_coefficients(&self, i: usize) -> (&[f64], &[f64], &[f64]) {
        (self.a.get(i), self.abar.get(i), self.b.get(i))
    }
}

/// Scratch vectors for cost evaluation.
#[derive(Debug, Clone)]
pub struct CostScratch {
    n: Vec<f64>,
    k: Vec<f64>,
}

impl CostScratch {
    pub fn new(n: usize, k: usize) -> Self {
        Self { n: alloc::vec![0.0; n], k: alloc::vec![0.0; k] }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// How the filter is driven.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FilterMode {
    /// Truth and observation are simulated; the filter reads `dY`.
    #[default]
    Observation,
    /// The filter is driven by fresh innovation increments taken from the
    /// `w̃` slots of the slab; no truth is simulated.
    Innovation,
}

/// One path on the knots. Buffers are reused across paths.
#[derive(Debug, Clone)]
pub struct PathRecord {
    pub knots: usize,
    pub n: usize,
    pub k: usize,
    pub rt: usize,
    /// Truth, `knots × n` row-major by knot.
    pub x: Vec<f64>,
    /// Observation, `knots × r̃`.
    pub y: Vec<f64>,
    /// Filter, `knots × n`.
    pub xhat: Vec<f64>,
    /// Control, `knots × k`.
    pub u: Vec<f64>,
    /// Innovation increments, `steps × r̃`.
    pub wbar: Vec<f64>,
    /// Reduced cost of the path, without `J0`.
    pub cost: f64,
    scratch_n: Vec<f64>,
    scratch_n2: Vec<f64>,
    scratch_cost: CostScratch,
    scratch_rt: Vec<f64>,
    scratch_rt2: Vec<f64>,
}

impl PathRecord {
    pub fn new(plan: &ClosedLoopPlan) -> Self {
        let knots = plan.steps + 1;
        Self {
            knots,
            n: plan.n,
            k: plan.k,
            rt: plan.rt,
            x: alloc::vec![0.0; knots * plan.n],
            y: alloc::vec![0.0; knots * plan.rt],
            xhat: alloc::vec![0.0; knots * plan.n],
            u: alloc::vec![0.0; knots * plan.k],
            wbar: alloc::vec![0.0; plan.steps * plan.rt],
            cost: 0.0,
            scratch_n: alloc::vec![0.0; plan.n],
            scratch_n2: alloc::vec![0.0; plan.n],
            scratch_cost: CostScratch::new(plan.n, plan.k),
            scratch_rt: alloc::vec![0.0; plan.rt],
            scratch_rt2: alloc::vec![0.0; plan.rt],
        }
    }

    pub fn x_at(&self, i: usize) -> &[f64] {
        &self.x[i * self.n..(i + 1) * self.n]
    }

    pub fn xhat_at(&self, i: usize) -> &[f64] {
        &self.xhat[i * self.n..(i + 1) * self.n]
    }

    pub fn y_at(&self, i: usize) -> &[f64] {
        &self.y[i * self.rt..(i + 1) * self.rt]
    }

    pub fn u_at(&self, i: usize) -> &[f64] {
        &self.u[i * self.k..(i + 1) * self.k]
    }

    pub fn wbar_at(&self, step: usize) -> &[f64] {
        &self.wbar[step * self.rt..(step + 1) * self.rt]
    }
}

/// `u = K_x x̂ + u_0` at knot `i`.
#[inline]
fn control(plan: &ClosedLoopPlan, i: usize, xhat: &[f64], u: &mut [f64]) {
    u.copy_from_slice(plan.u0.get(i));
    gemv_acc(u, plan.kx.get(i), xhat);
}

/// Simulates truth, observation, filter and control for one path, and the
/// path's reduced cost. In [`FilterMode::Innovation`] only the filter,
/// control and cost (evaluated on x̂) are produced.
pub fn simulate_path(plan: &ClosedLoopPlan, noise: &NoiseSlab, mode: FilterMode, rec: &mut PathRecord) -> Result<()> {
    let (n, k, rt, dt) = (plan.n, plan.k, plan.rt, plan.dt);
    let steps = plan.steps;
    // x(0) = μ0 + σ0^{1/2} z, x̂(0) = μ0, Y(0) = 0.
    {
        let x0 = &mut rec.x[..n];
        x0.copy_from_slice(&plan.mu0);
        gemv_acc(x0, &plan.sigma0_sqrt, &noise.x0);
        rec.xhat[..n].copy_from_slice(&plan.mu0);
        rec.y[..rt].iter_mut().for_each(|v| *v = 0.0);
    }
    let mut cost = 0.0;
    let mut prev_running = 0.0;
    for i in 0..=steps {
        let u = &mut rec.u[i * k..(i + 1) * k];
        control(plan, i, &rec.xhat[i * n..(i + 1) * n], u);
        let eval_x = match mode {
            FilterMode::Observation => &rec.x[i * n..(i + 1) * n],
            FilterMode::Innovation => &rec.xhat[i * n..(i + 1) * n],
        };
        let run = plan.running(i, eval_x, u, plan.mean[i].as_slice(), &mut rec.scratch_cost);
        if i > 0 {
            cost += 0.5 * dt * (prev_running + run);
        }
        prev_running = run;
        if i == steps {
            cost += plan.terminal(eval_x, plan.mean[i].as_slice(), &mut rec.scratch_cost);
            break;
        }
        let u = &rec.u[i * k..(i + 1) * k];
        // Shared drift part b u + ā Ex + b̄.
        let common = &mut rec.scratch_n2;
        common.copy_from_slice(plan.drift0.get(i));
        gemv_acc(common, plan.b.get(i), u);

        let (cur, next) = rec.xhat.split_at_mut((i + 1) * n);
        let xh = &cur[i * n..];
        let xh_next = &mut next[..n];
        match mode {
            FilterMode::Observation => {
                let (xc, xn) = rec.x.split_at_mut((i + 1) * n);
                let x = &xc[i * n..];
                let x_next = &mut xn[..n];
                // Observation increment dY = (f x + f̄Ex + g)dt + h dw̃.
                let dy = &mut rec.scratch_rt;
                dy.iter_mut().for_each(|v| *v = 0.0);
                gemv_acc(dy, plan.f.get(i), x);
                for (d, o) in dy.iter_mut().zip(plan.obs0.get(i)) {
                    *d = (*d + o) * dt;
                }
                gemv_acc(dy, plan.h.get(i), noise.dwt(i));
                let (yc, yn) = rec.y.split_at_mut((i + 1) * rt);
                for ((yn, yc), d) in yn[..rt].iter_mut().zip(&yc[i * rt..]).zip(dy.iter()) {
                    *yn = yc + d;
                }
                // Truth.
                let drift = &mut rec.scratch_n;
                drift.copy_from_slice(common);
                gemv_acc(drift, plan.a.get(i), x);
                for ((xn, xc), d) in x_next.iter_mut().zip(x).zip(drift.iter()) {
                    *xn = xc + d * dt;
                }
                gemv_acc(x_next, plan.c.get(i), noise.dw(i));
                // Innovation dY − (f x̂ + f̄Ex + g)dt.
                let pred = dy;
                let fx = &mut rec.scratch_rt2;
                fx.iter_mut().for_each(|v| *v = 0.0);
                gemv_acc(fx, plan.f.get(i), xh);
                for ((p, f), o) in pred.iter_mut().zip(fx.iter()).zip(plan.obs0.get(i)) {
                    *p -= (f + o) * dt;
                }
                let wb = &mut rec.wbar[i * rt..(i + 1) * rt];
                wb.iter_mut().for_each(|v| *v = 0.0);
                gemv_acc(wb, plan.hinv.get(i), pred);
                // Filter.
                let drift = &mut rec.scratch_n;
                drift.copy_from_slice(common);
                gemv_acc(drift, plan.a.get(i), xh);
                for ((xn, xc), d) in xh_next.iter_mut().zip(xh).zip(drift.iter()) {
                    *xn = xc + d * dt;
                }
                gemv_acc(xh_next, plan.kgain.get(i), pred);
                if !x_next.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFiniteState { step: i + 1 });
                }
            }
            FilterMode::Innovation => {
                let dwb = noise.dwt(i);
                rec.wbar[i * rt..(i + 1) * rt].copy_from_slice(dwb);
                let drift = &mut rec.scratch_n;
                drift.copy_from_slice(common);
                gemv_acc(drift, plan.a.get(i), xh);
                for ((xn, xc), d) in xh_next.iter_mut().zip(xh).zip(drift.iter()) {
                    *xn = xc + d * dt;
                }
                gemv_acc(xh_next, plan.sload.get(i), dwb);
            }
        }
        if !xh_next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteState { step: i + 1 });
        }
    }
    rec.cost = cost;
    Ok(())
}

/// Truth and observation under a deterministic open-loop control path
/// (`v[i]` is the control on step `i`) and a given mean path `ex[i]`.
/// Returns `(x, Y)` per knot.
pub fn simulate_truth_open_loop(
    p: &MFLQProblem,
    v: &[DMatrix<f64>],
    ex: &[DMatrix<f64>],
    noise: &NoiseSlab,
) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    let steps = p.grid.steps();
    let dt = p.grid.step();
    if v.len() < steps || ex.len() != steps + 1 {
        return Err(Error::GridMismatch { expected: steps + 1, got: ex.len() });
    }
    let sqrt0 = psd_sqrt(&p.init.covariance).ok_or_else(|| Error::Domain("sigma0".into()))?;
    let z0 = DMatrix::from_column_slice(p.dims.state, 1, &noise.x0);
    let mut x = &p.init.mean + sqrt0 * z0;
    let mut y = DMatrix::zeros(p.dims.obs_noise, 1);
    let mut xs = Vec::with_capacity(steps + 1);
    let mut ys = Vec::with_capacity(steps + 1);
    xs.push(x.clone());
    ys.push(y.clone());
    for i in 0..steps {
        let c = Coeffs::at(p, StepPoint::start(i));
        let dw = DMatrix::from_column_slice(p.dims.state_noise, 1, noise.dw(i));
        let dwt = DMatrix::from_column_slice(p.dims.obs_noise, 1, noise.dwt(i));
        let dy = (&c.f * &x + &c.fbar * &ex[i] + &c.g) * dt + &c.h * dwt;
        let dx = (&c.a * &x + &c.abar * &ex[i] + &c.b * &v[i] + &c.bbar) * dt + &c.c * dw;
        x += dx;
        y += dy;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: i + 1 });
        }
        xs.push(x.clone());
        ys.push(y.clone());
    }
    Ok((xs, ys))
}

/// Kalman–Bucy filter in innovation form applied to a given observation
/// path: `dx̂ = (a x̂ + ā Ex + b u + b̄)dt + Σfᵀ(hhᵀ)⁻¹[dY − (f x̂ + f̄Ex + g)dt]`.
/// Returns x̂ per knot and the innovation increments `h⁻¹[dY − ...]` per step.
pub fn kalman_filter(
    p: &MFLQProblem,
    sigma: &DensePath,
    y: &[DMatrix<f64>],
    u: &[DMatrix<f64>],
    ex: &[DMatrix<f64>],
) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    let steps = p.grid.steps();
    for len in [y.len(), ex.len()] {
        if len != steps + 1 {
            return Err(Error::GridMismatch { expected: steps + 1, got: len });
        }
    }
    if u.len() < steps || sigma.steps() != steps {
        return Err(Error::GridMismatch { expected: steps + 1, got: u.len() });
    }
    let dt = p.grid.step();
    let mut xh = p.init.mean.clone();
    let mut xs = Vec::with_capacity(steps + 1);
    let mut wb = Vec::with_capacity(steps);
    xs.push(xh.clone());
    for i in 0..steps {
        let c = Coeffs::at(p, StepPoint::start(i));
        let innov = &y[i + 1] - &y[i] - (&c.f * &xh + &c.fbar * &ex[i] + &c.g) * dt;
        let hinv = c.h.clone().try_inverse().expect("h invertible");
        wb.push(&hinv * &innov);
        xh = &xh
            + (&c.a * &xh + &c.abar * &ex[i] + &c.b * &u[i] + &c.bbar) * dt
            + c.kalman_gain(sigma.knot(i)) * innov;
        xs.push(xh.clone());
    }
    Ok((xs, wb))
}

/// Deterministic Euler mean of the control-free state,
/// `e_{i+1} = e_i + ((a + ā)e_i + b̄)dt`.
pub fn euler_free_mean(p: &MFLQProblem) -> Vec<DMatrix<f64>> {
    let steps = p.grid.steps();
    let dt = p.grid.step();
    let mut e = p.init.mean.clone();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(e.clone());
    for i in 0..steps {
        let c = Coeffs::at(p, StepPoint::start(i));
        e = &e + ((&c.a + &c.abar) * &e + &c.bbar) * dt;
        out.push(e.clone());
    }
    out
}

/// Backward-separation check on one path: simulates the control-free pair
/// `(x⁰, Y⁰)`, the deterministic control-driven pair `(x¹, Y¹)` started at 0,
/// and the full `(x^v, Y^v)` on the same noise. The control path `v` is
/// treated as deterministic, so `Ex¹ = x¹` and `Ex^v = Ex⁰ + x¹`. Returns the
/// max over knots of `|x^v − x⁰ − x¹|_∞ + |Y^v − Y⁰ − Y¹|_∞`.
pub fn decomposition_deviation(p: &MFLQProblem, v: &[DMatrix<f64>], noise: &NoiseSlab) -> Result<f64> {
    let steps = p.grid.steps();
    let dt = p.grid.step();
    let (n, k, rt) = (p.dims.state, p.dims.control, p.dims.obs_noise);
    let zero_v: Vec<DMatrix<f64>> = (0..steps).map(|_| DMatrix::zeros(k, 1)).collect();
    let e0 = euler_free_mean(p);
    let (x0, y0) = simulate_truth_open_loop(p, &zero_v, &e0, noise)?;
    let mut x1 = DMatrix::zeros(n, 1);
    let mut y1 = DMatrix::zeros(rt, 1);
    let mut x1s = Vec::with_capacity(steps + 1);
    let mut y1s = Vec::with_capacity(steps + 1);
    x1s.push(x1.clone());
    y1s.push(y1.clone());
    for i in 0..steps {
        let c = Coeffs::at(p, StepPoint::start(i));
        let dy = (&c.f * &x1 + &c.fbar * &x1) * dt;
        x1 = &x1 + (&c.a * &x1 + &c.abar * &x1 + &c.b * &v[i]) * dt;
        y1 += dy;
        x1s.push(x1.clone());
        y1s.push(y1.clone());
    }
    let ev: Vec<DMatrix<f64>> = e0.iter().zip(&x1s).map(|(a, b)| a + b).collect();
    let (xv, yv) = simulate_truth_open_loop(p, v, &ev, noise)?;
    let mut worst = 0.0_f64;
    for i in 0..=steps {
        let dx = (&xv[i] - &x0[i] - &x1s[i]).amax();
        let dy = (&yv[i] - &y0[i] - &y1s[i]).amax();
        worst = worst.max(dx + dy);
    }
    Ok(worst)
}

/// Euler–Maruyama for the adjoint
/// `dk = (βᵀk + β̄ᵀEk)dt + Σ_j(γ_jᵀk + γ̄_jᵀEk)dw_j + Σ_j(γ̃_jᵀk + γ̄̃_jᵀEk)dw̃_j`,
/// `k_0 = −M y_0 − N`, with `Ek` from RK4 of `Ėk = (β + β̄)ᵀEk`.
pub fn simulate_k(p: &MFLQProblem, noise: &NoiseSlab, y0: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
    let steps = p.grid.steps();
    let dt = p.grid.step();
    let bs = &p.bsde;
    let k0 = -(&p.cost.utility_quadratic * y0) - &p.cost.utility_linear;
    let ek = crate::ode::integrate_matrix_ode(
        &p.grid,
        k0.clone(),
        crate::ode::Direction::Forward,
        "Ek",
        |sp, e| (bs.value_coupling.at(sp) + bs.mean_value_coupling.at(sp)).transpose() * e,
        |_| {},
    )?
    .values;
    let mut k = k0;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(k.clone());
    for i in 0..steps {
        let sp = StepPoint::start(i);
        let e = &ek[i];
        let mut dk = (bs.value_coupling.at(sp).transpose() * &k + bs.mean_value_coupling.at(sp).transpose() * e) * dt;
        for (j, dw) in noise.dw(i).iter().enumerate() {
            dk += (bs.z_coupling[j].at(sp).transpose() * &k + bs.mean_z_coupling[j].at(sp).transpose() * e) * *dw;
        }
        for (j, dw) in noise.dwt(i).iter().enumerate() {
            dk += (bs.ztilde_coupling[j].at(sp).transpose() * &k
                + bs.mean_ztilde_coupling[j].at(sp).transpose() * e)
                * *dw;
        }
        k += dk;
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: i + 1 });
        }
        out.push(k.clone());
    }
    Ok(out)
}

/// Checks the setting in which `y_0` has the dual representation through η:
/// α, ᾱ, β, β̄, γ̄, γ̄̃ all vanish.
pub fn eta_precondition(p: &MFLQProblem) -> Result<()> {
    let bs = &p.bsde;
    let mut bad = Vec::new();
    for (name, path) in [
        ("alpha", &bs.state_coupling),
        ("alphabar", &bs.mean_state_coupling),
        ("beta", &bs.value_coupling),
        ("betabar", &bs.mean_value_coupling),
    ] {
        if path.max_abs() > crate::validate::GATE_TOL {
            bad.push(name);
        }
    }
    for (name, fam) in [("gammabar", &bs.mean_z_coupling), ("gammabartilde", &bs.mean_ztilde_coupling)] {
        if fam.iter().any(|q| q.max_abs() > crate::validate::GATE_TOL) {
            bad.push(name);
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::Precondition(alloc::format!("η representation needs zero {}", bad.join(", "))))
    }
}

/// Per-path η sample. Simulates `dη = Σ_j γ_jᵀη dw_j + Σ_j γ̃_jᵀη dw̃_j`,
/// `η_0 = 1`, along an already simulated path `rec` (same noise), and
/// returns `(⟨η_T, ρx_T + ρ̄Ex_T⟩ + ∫⟨η, ψu + ψ̄⟩dt, η_T)`.
pub fn eta_sample(
    p: &MFLQProblem,
    plan: &ClosedLoopPlan,
    rec: &PathRecord,
    noise: &NoiseSlab,
) -> (f64, DMatrix<f64>) {
    let steps = p.grid.steps();
    let dt = p.grid.step();
    let m = p.dims.value;
    let bs = &p.bsde;
    let mut eta = DMatrix::from_element(m, 1, 1.0);
    let mut integral = 0.0;
    let psi_term = |i: usize, eta: &DMatrix<f64>| {
        let sp = knot_point(i, steps);
        let u = DMatrix::from_column_slice(p.dims.control, 1, rec.u_at(i));
        eta.dot(&(bs.control_coupling.at(sp) * u + bs.offset.at(sp)))
    };
    let mut prev = psi_term(0, &eta);
    for i in 0..steps {
        let sp = StepPoint::start(i);
        let mut d = DMatrix::zeros(m, 1);
        for (j, dw) in noise.dw(i).iter().enumerate() {
            d += bs.z_coupling[j].at(sp).transpose() * &eta * *dw;
        }
        for (j, dw) in noise.dwt(i).iter().enumerate() {
            d += bs.ztilde_coupling[j].at(sp).transpose() * &eta * *dw;
        }
        eta += d;
        let cur = psi_term(i + 1, &eta);
        integral += 0.5 * dt * (prev + cur);
        prev = cur;
    }
    let x_t = DMatrix::from_column_slice(p.dims.state, 1, rec.x_at(steps));
    let e_t = &plan.mean[steps];
    let terminal = eta.dot(&(&bs.terminal * x_t + &bs.mean_terminal * e_t));
    (terminal + integral, eta)
}
