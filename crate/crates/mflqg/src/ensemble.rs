//! Parallel Monte Carlo ensembles.
//!
//! Paths are grouped into fixed chunks of consecutive path ids. Chunks run on
//! a rayon pool and each accumulates its own sums in path order; the chunk
//! results are then folded in chunk order. Neither the chunk boundaries nor
//! the fold order depend on the worker count, so every statistic is
//! bit-identical however many workers run.

use mflqg_core::noise::NoiseSlab;
use mflqg_core::simulate::{simulate_path, ClosedLoopPlan, FilterMode, PathRecord};
use rayon::prelude::*;

/// Paths per work item.
pub const CHUNK: usize = 128;

/// Worker count: `MFLQG_WORKERS` when set to a positive integer, otherwise
/// the machine's available parallelism.
pub fn workers() -> usize {
    std::env::var("MFLQG_WORKERS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|w| *w >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Runs `f` on a pool of `workers()` threads.
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(workers()).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Per-path extra output computed right after a path is simulated.
pub trait Probe: Sync {
    type Scratch;
    /// Values written per path.
    fn width(&self) -> usize;
    fn scratch(&self, plan: &ClosedLoopPlan) -> Self::Scratch;
    fn observe(&self, rec: &PathRecord, noise: &NoiseSlab, scratch: &mut Self::Scratch, out: &mut [f64]);
}

/// No extra output.
pub struct NoProbe;

impl Probe for NoProbe {
    type Scratch = ();
    fn width(&self) -> usize {
        0
    }
    fn scratch(&self, _: &ClosedLoopPlan) {}
    fn observe(&self, _: &PathRecord, _: &NoiseSlab, _: &mut (), _: &mut [f64]) {}
}

#[derive(Debug, Clone, Copy)]
pub struct EnsembleConfig {
    pub paths: usize,
    pub seed: u64,
    pub mode: FilterMode,
    /// Leading paths whose full records are kept.
    pub record: usize,
}

/// Aggregates of one ensemble.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub paths: usize,
    pub seed: u64,
    pub knots: usize,
    pub n: usize,
    pub rt: usize,
    pub dt: f64,
    /// Per-knot sums over paths, `knots × n`.
    pub sum_x: Vec<f64>,
    pub sum_x2: Vec<f64>,
    pub sum_xhat: Vec<f64>,
    pub sum_xhat2: Vec<f64>,
    /// Per-knot sums of `|x − x̂|²` (and of its square, for the error bar).
    pub sum_err2: Vec<f64>,
    pub sum_err4: Vec<f64>,
    /// Reduced path cost without `J0`, per path.
    pub costs: Vec<f64>,
    /// `w̄(T)` per path, `paths × r̃`.
    pub wbar_terminal: Vec<f64>,
    /// Realized quadratic variation `Σ(Δw̄)²` per path, `paths × r̃`.
    pub wbar_qv: Vec<f64>,
    /// Probe output, `paths × width`.
    pub probe: Vec<f64>,
    pub probe_width: usize,
    /// Full records of the first `record` paths, with their path ids.
    pub recorded: Vec<(u64, PathRecord)>,
}

struct Chunk {
    sum_x: Vec<f64>,
    sum_x2: Vec<f64>,
    sum_xhat: Vec<f64>,
    sum_xhat2: Vec<f64>,
    sum_err2: Vec<f64>,
    sum_err4: Vec<f64>,
    costs: Vec<f64>,
    wbar_terminal: Vec<f64>,
    wbar_qv: Vec<f64>,
    probe: Vec<f64>,
    recorded: Vec<(u64, PathRecord)>,
}

fn add(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn run_chunk<P: Probe>(
    plan: &ClosedLoopPlan,
    cfg: &EnsembleConfig,
    probe: &P,
    ids: std::ops::Range<usize>,
) -> mflqg_core::Result<Chunk> {
    let (n, rt, knots) = (plan.n, plan.rt, plan.steps + 1);
    let mut c = Chunk {
        sum_x: vec![0.0; knots * n],
        sum_x2: vec![0.0; knots * n],
        sum_xhat: vec![0.0; knots * n],
        sum_xhat2: vec![0.0; knots * n],
        sum_err2: vec![0.0; knots],
        sum_err4: vec![0.0; knots],
        costs: Vec::with_capacity(ids.len()),
        wbar_terminal: Vec::with_capacity(ids.len() * rt),
        wbar_qv: Vec::with_capacity(ids.len() * rt),
        probe: vec![0.0; ids.len() * probe.width()],
        recorded: Vec::new(),
    };
    let mut rec = PathRecord::new(plan);
    let mut slab = NoiseSlab::empty(plan.steps, n, plan.r, rt);
    let mut scratch = probe.scratch(plan);
    let w = probe.width();
    for (slot, id) in ids.enumerate() {
        slab.fill(cfg.seed, id as u64, plan.dt);
        simulate_path(plan, &slab, cfg.mode, &mut rec)?;
        for i in 0..knots {
            let (x, xh) = (rec.x_at(i), rec.xhat_at(i));
            let mut e2 = 0.0;
            for j in 0..n {
                c.sum_x[i * n + j] += x[j];
                c.sum_x2[i * n + j] += x[j] * x[j];
                c.sum_xhat[i * n + j] += xh[j];
                c.sum_xhat2[i * n + j] += xh[j] * xh[j];
                e2 += (x[j] - xh[j]).powi(2);
            }
            c.sum_err2[i] += e2;
            c.sum_err4[i] += e2 * e2;
        }
        c.costs.push(rec.cost);
        let mut term = vec![0.0; rt];
        let mut qv = vec![0.0; rt];
        for s in 0..plan.steps {
            for (j, d) in rec.wbar_at(s).iter().enumerate() {
                term[j] += d;
                qv[j] += d * d;
            }
        }
        c.wbar_terminal.extend_from_slice(&term);
        c.wbar_qv.extend_from_slice(&qv);
        if w > 0 {
            probe.observe(&rec, &slab, &mut scratch, &mut c.probe[slot * w..(slot + 1) * w]);
        }
        if (id) < cfg.record {
            c.recorded.push((id as u64, rec.clone()));
        }
    }
    Ok(c)
}

/// Simulates `cfg.paths` closed-loop paths of `plan`.
pub fn run_ensemble<P: Probe>(plan: &ClosedLoopPlan, cfg: &EnsembleConfig, probe: &P) -> mflqg_core::Result<Ensemble> {
    if cfg.paths == 0 {
        return Err(mflqg_core::Error::EmptyEnsemble);
    }
    let ranges: Vec<_> = (0..cfg.paths).step_by(CHUNK).map(|s| s..(s + CHUNK).min(cfg.paths)).collect();
    let chunks: Vec<_> =
        with_pool(|| ranges.into_par_iter().map(|r| run_chunk(plan, cfg, probe, r)).collect::<Vec<_>>());
    let (n, rt, knots) = (plan.n, plan.rt, plan.steps + 1);
    let mut e = Ensemble {
        paths: cfg.paths,
        seed: cfg.seed,
        knots,
        n,
        rt,
        dt: plan.dt,
        sum_x: vec![0.0; knots * n],
        sum_x2: vec![0.0; knots * n],
        sum_xhat: vec![0.0; knots * n],
        sum_xhat2: vec![0.0; knots * n],
        sum_err2: vec![0.0; knots],
        sum_err4: vec![0.0; knots],
        costs: Vec::with_capacity(cfg.paths),
        wbar_terminal: Vec::with_capacity(cfg.paths * rt),
        wbar_qv: Vec::with_capacity(cfg.paths * rt),
        probe: Vec::with_capacity(cfg.paths * probe.width()),
        probe_width: probe.width(),
        recorded: Vec::new(),
    };
    for c in chunks {
        let c = c?;
        add(&mut e.sum_x, &c.sum_x);
        add(&mut e.sum_x2, &c.sum_x2);
        add(&mut e.sum_xhat, &c.sum_xhat);
        add(&mut e.sum_xhat2, &c.sum_xhat2);
        add(&mut e.sum_err2, &c.sum_err2);
        add(&mut e.sum_err4, &c.sum_err4);
        e.costs.extend(c.costs);
        e.wbar_terminal.extend(c.wbar_terminal);
        e.wbar_qv.extend(c.wbar_qv);
        e.probe.extend(c.probe);
        e.recorded.extend(c.recorded);
    }
    Ok(e)
}

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut s, mut s2) = (0.0, 0.0, 0.0);
    let xs: Vec<f64> = xs.into_iter().collect();
    for x in &xs {
        n += 1.0;
        s += x;
    }
    let m = s / n;
    for x in &xs {
        s2 += (x - m) * (x - m);
    }
    if n < 2.0 {
        return (m, 0.0);
    }
    (m, (s2 / (n - 1.0) / n).sqrt())
}

/// Sample variance and its standard error under normality, `var·√(2/(N−1))`.
pub fn var_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (v, v * (2.0 / (n - 1.0)).sqrt())
}

impl Ensemble {
    fn stat(&self, sum: &[f64], sum2: &[f64], i: usize, j: usize) -> (f64, f64) {
        let n = self.paths as f64;
        let m = sum[i * self.n + j] / n;
        let var = ((sum2[i * self.n + j] / n - m * m) * n / (n - 1.0)).max(0.0);
        (m, (var / n).sqrt())
    }

    /// Mean and standard error of component `j` of x at knot `i`.
    pub fn mean_x(&self, i: usize, j: usize) -> (f64, f64) {
        self.stat(&self.sum_x, &self.sum_x2, i, j)
    }

    pub fn mean_xhat(&self, i: usize, j: usize) -> (f64, f64) {
        self.stat(&self.sum_xhat, &self.sum_xhat2, i, j)
    }

    /// Mean and standard error of `|x − x̂|²` at knot `i`.
    pub fn filter_mse(&self, i: usize) -> (f64, f64) {
        let n = self.paths as f64;
        let m = self.sum_err2[i] / n;
        let var = ((self.sum_err4[i] / n - m * m) * n / (n - 1.0)).max(0.0);
        (m, (var / n).sqrt())
    }

    /// Mean and standard error of the path cost plus `j0`.
    pub fn cost(&self, j0: f64) -> (f64, f64) {
        let (m, se) = mean_se(self.costs.iter().copied());
        (m + j0, se)
    }

    /// Column `c` of the probe output.
    pub fn probe_column(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        self.probe.chunks(self.probe_width).map(move |row| row[c])
    }
}

/// Statistics of the innovation process per component.
#[derive(Debug, Clone, serde::Serialize)]
pub struct InnovationComponent {
    pub mean_terminal: f64,
    pub mean_terminal_se: f64,
    pub var_terminal: f64,
    pub var_terminal_se: f64,
    pub quadratic_variation: f64,
    pub quadratic_variation_se: f64,
}

/// Sample mean and variance of `w̄(T)` (expected 0 and T) and the mean
/// realized quadratic variation (expected T), per component.
pub fn innovation_diagnostics(e: &Ensemble) -> mflqg_core::Result<Vec<InnovationComponent>> {
    if e.paths < 2 {
        return Err(mflqg_core::Error::EmptyEnsemble);
    }
    Ok((0..e.rt)
        .map(|j| {
            let term: Vec<f64> = e.wbar_terminal.chunks(e.rt).map(|r| r[j]).collect();
            let (m, mse) = mean_se(term.iter().copied());
            let (v, vse) = var_se(&term);
            let (q, qse) = mean_se(e.wbar_qv.chunks(e.rt).map(|r| r[j]));
            InnovationComponent {
                mean_terminal: m,
                mean_terminal_se: mse,
                var_terminal: v,
                var_terminal_se: vse,
                quadratic_variation: q,
                quadratic_variation_se: qse,
            }
        })
        .collect())
}
