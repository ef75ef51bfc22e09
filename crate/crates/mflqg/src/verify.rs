//! Verification harness: Monte Carlo cost, optimality sweeps, first
//! variation scaling, backward separation, filter statistics, stationarity,
//! the mean-field lift, the η representation and the closed-form reference.
//!
//! Every check produces a [`Check`] with the statistic that was compared, the
//! threshold it was compared against and a pass flag. Monte Carlo
//! comparisons use three standard errors, quadratic scaling uses 5%,
//! algebraic identities use 1e−12.

use mflqg_core::cost::{analytic_cost, closed_loop_moments, Kappa, Quadrature};
use mflqg_core::grid::StepPoint;
use mflqg_core::noise::{stream_rng, NoiseSlab, AUX_STREAM_BASE};
use mflqg_core::perturb::{perturbed_cost_deltas, Direction, PerturbScratch, PerturbationPlan};
use mflqg_core::problem::{KeyKind, KEYS};
use mflqg_core::projection::piecewise_projection;
use mflqg_core::reference::al_reference;
use mflqg_core::riccati::chi_from_origin;
use mflqg_core::simulate::{decomposition_deviation, eta_precondition, eta_sample, knot_point};
use mflqg_core::simulate::{ClosedLoopPlan, FilterMode, PathRecord};
use mflqg_core::synthesis::stationarity_residual_at;
use mflqg_core::{synthesize, DMatrix, Dims, Error, FeedbackLaw, Interpolation, MFLQProblem, Synthesis, TimeGrid};
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::ensemble::{innovation_diagnostics, mean_se, run_ensemble, Ensemble, EnsembleConfig, NoProbe, Probe};
use crate::errata;

type Result<T> = std::result::Result<T, Error>;

/// Outcome of one comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub statistic: f64,
    pub threshold: f64,
    pub detail: String,
}

impl Check {
    fn at_most(name: &str, statistic: f64, threshold: f64, detail: String) -> Self {
        Self { name: name.into(), passed: statistic <= threshold, statistic, threshold, detail }
    }

    pub fn status(&self) -> &'static str {
        if self.passed {
            "PASS"
        } else {
            "FAIL"
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub paths: usize,
    pub seed: u64,
    /// Step of the Monte Carlo grids.
    pub mc_dt: f64,
    /// Paths for the decomposition check.
    pub decomposition_paths: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { paths: 20000, seed: 42, mc_dt: 1.0 / 256.0, decomposition_paths: 100 }
    }
}

impl VerifyOptions {
    fn ensemble(&self, paths: usize) -> EnsembleConfig {
        EnsembleConfig { paths, seed: self.seed, mode: FilterMode::Observation, record: 0 }
    }
}

fn max_rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn fmt(x: f64) -> String {
    format!("{x:.6e}")
}

fn on_grid(p: &MFLQProblem, dt: f64) -> Result<MFLQProblem> {
    let grid = TimeGrid::with_step(p.grid.horizon(), dt)?;
    if grid == p.grid {
        return Ok(p.clone());
    }
    p.regrid(grid)
}

fn plan_for(p: &MFLQProblem, s: &Synthesis, law: &FeedbackLaw) -> Result<ClosedLoopPlan> {
    ClosedLoopPlan::new(p, &s.reduced, &s.bundle.sigma, law)
}

fn scalar_at(path: &mflqg_core::DensePath, i: usize) -> f64 {
    path.knot(i)[(0, 0)]
}

// ---------------------------------------------------------------------------
// Closed-form reference (asset-liability example only)

/// Numerical and closed-form values at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub t: f64,
    pub ex: f64,
    pub ex_ref: f64,
    pub ep: f64,
    pub ep_ref: f64,
    pub gamma: f64,
    pub gamma_ref: f64,
    pub sigma: f64,
    pub sigma_ref: f64,
    pub offset: f64,
    pub offset_ref: f64,
}

/// Comparison table at `t = 0, 0.1, …, 1` for the asset-liability example.
pub fn al_comparison(p: &MFLQProblem, s: &Synthesis) -> Result<Vec<ComparisonRow>> {
    let steps = p.grid.steps();
    (0..=10)
        .map(|j| {
            let i = j * steps / 10;
            let t = p.grid.time(i);
            let r = al_reference(t.min(1.0))?;
            let b = &s.bundle;
            Ok(ComparisonRow {
                t,
                ex: scalar_at(&b.ex, i),
                ex_ref: r.ex,
                ep: scalar_at(&b.ep, i),
                ep_ref: r.ep,
                gamma: scalar_at(&b.gamma, i),
                gamma_ref: r.gamma,
                sigma: scalar_at(&b.sigma, i),
                sigma_ref: r.sigma,
                offset: scalar_at(&s.law.offset, i),
                offset_ref: r.offset,
            })
        })
        .collect()
}

fn max_knot_err(p: &MFLQProblem, path: &mflqg_core::DensePath, f: impl Fn(f64) -> f64) -> f64 {
    (0..p.grid.knots()).map(|i| (scalar_at(path, i) - f(p.grid.time(i))).abs()).fold(0.0, f64::max)
}

fn reference(t: f64) -> mflqg_core::reference::AlReference {
    al_reference(t.clamp(0.0, 1.0)).expect("clamped into the horizon")
}

/// Γ against its closed form on the knots.
pub fn gamma_check(p: &MFLQProblem, s: &Synthesis) -> Check {
    let err = max_knot_err(p, &s.bundle.gamma, |t| reference(t).gamma);
    Check::at_most("gamma closed form", err, 1e-8, format!("max |Γ − Γ_ref| = {}", fmt(err)))
}

/// Mean state and mean costate against their closed forms, and the value
/// of the mean state at the horizon against its four printed digits.
pub fn mean_trajectory_check(p: &MFLQProblem, s: &Synthesis) -> Check {
    let ep = max_knot_err(p, &s.bundle.ep, |t| -(0.06 * (2.0 - t)).exp());
    let ex = max_knot_err(p, &s.bundle.ex, |t| reference(t).ex);
    let ex_t = s.bundle.ex.last()[(0, 0)];
    let spot = (ex_t - 3.2622).abs();
    let stat = ep.max(ex);
    let mut c = Check::at_most(
        "mean trajectories",
        stat,
        1e-6,
        format!("max |Ep + e^(0.06(2−t))| = {}, max |Ex − Ex_ref| = {}, Ex(1) = {ex_t:.10}", fmt(ep), fmt(ex)),
    );
    // 3.2622 is given to four decimals.
    c.passed &= spot <= 5e-5;
    c
}

/// Σ against the corrected closed form, positivity, the value at the
/// horizon and presence of the erratum.
pub fn sigma_check(p: &MFLQProblem, s: &Synthesis, errata_text: &str) -> Check {
    let err = max_knot_err(p, &s.bundle.sigma, |t| reference(t).sigma);
    let min = (0..p.grid.knots()).map(|i| scalar_at(&s.bundle.sigma, i)).fold(f64::INFINITY, f64::min);
    let s_t = s.bundle.sigma.last()[(0, 0)];
    let noted = errata_text.contains(errata::SIGMA_PRINTED);
    let mut c = Check::at_most(
        "filter variance closed form",
        err,
        1e-8,
        format!("max |Σ − Σ_ref| = {}, min Σ = {}, Σ(1) = {s_t:.8e}, erratum emitted: {noted}", fmt(err), fmt(min)),
    );
    c.passed &= min >= 0.0 && (s_t - 1.6481e-3).abs() <= 5e-8 && noted;
    c
}

// ---------------------------------------------------------------------------
// Monte Carlo cost

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub analytic_terms: Vec<(String, f64)>,
    pub j_analytic: f64,
    /// The same closed form with the terminal trace weight 1.
    pub j_analytic_kappa_one: f64,
    pub j_mc: f64,
    pub stderr: f64,
    pub path_count: usize,
    pub dt: f64,
}

impl CostEstimate {
    fn z(&self, j: f64) -> f64 {
        (j - self.j_mc).abs() / self.stderr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub kappa_used: f64,
    pub scenario: CostEstimate,
    /// Present when the two trace weights cannot be told apart on the
    /// scenario itself.
    pub adjudication: Option<CostEstimate>,
}

/// Monte Carlo and closed-form cost of the synthesized law on `p`.
pub fn cost_estimate(p: &MFLQProblem, opts: &VerifyOptions) -> Result<CostEstimate> {
    let s = synthesize(p)?;
    let plan = plan_for(p, &s, &s.law)?;
    let e = run_ensemble(&plan, &opts.ensemble(opts.paths), &NoProbe)?;
    let (j_mc, stderr) = e.cost(s.reduced.j0);
    let half = analytic_cost(p, &s.reduced, &s.bundle, Kappa::Half, Quadrature::Simpson);
    let one = analytic_cost(p, &s.reduced, &s.bundle, Kappa::One, Quadrature::Simpson);
    Ok(CostEstimate {
        analytic_terms: half.terms.clone(),
        j_analytic: half.total,
        j_analytic_kappa_one: one.total,
        j_mc,
        stderr,
        path_count: opts.paths,
        dt: p.grid.step(),
    })
}

/// The scenario with `H = I`, `H̄ = −I`, `σ0 = 0.25·I`, where the terminal
/// filter error is large enough for the trace weight to show.
pub fn adjudication_problem(p: &MFLQProblem) -> Result<MFLQProblem> {
    let n = p.dims.state;
    let mut q = p.clone();
    q.set_const("H", DMatrix::identity(n, n))?;
    q.set_const("Hbar", -DMatrix::identity(n, n))?;
    q.set_const("sigma0", DMatrix::identity(n, n) * 0.25)?;
    Ok(q)
}

/// Criterion: the closed form with weight ½ matches Monte Carlo and the
/// weight 1 does not, on the scenario or, when the weights are closer than
/// Monte Carlo resolution there, on [`adjudication_problem`].
pub fn cost_consistency(p: &MFLQProblem, opts: &VerifyOptions) -> Result<(CostReport, Check)> {
    let p = on_grid(p, opts.mc_dt)?;
    let scen = cost_estimate(&p, opts)?;
    let resolvable = (scen.j_analytic - scen.j_analytic_kappa_one).abs() > 3.0 * scen.stderr;
    let adjudication = if resolvable { None } else { Some(cost_estimate(&adjudication_problem(&p)?, opts)?) };
    let decisive = adjudication.as_ref().unwrap_or(&scen);
    let z_half = scen.z(scen.j_analytic);
    let passed = z_half <= 3.0 && decisive.z(decisive.j_analytic) <= 3.0 && decisive.z(decisive.j_analytic_kappa_one) > 3.0;
    let mut detail = format!(
        "J_mc = {} ± {}, J(κ=½) = {} ({z_half:.2}σ), J(κ=1) = {} ({:.2}σ)",
        fmt(scen.j_mc),
        fmt(scen.stderr),
        fmt(scen.j_analytic),
        fmt(scen.j_analytic_kappa_one),
        scen.z(scen.j_analytic_kappa_one)
    );
    if let Some(a) = &adjudication {
        detail += &format!(
            "; weights unresolvable, adjudication: J_mc = {} ± {}, κ=½ {:.2}σ, κ=1 {:.2}σ",
            fmt(a.j_mc),
            fmt(a.stderr),
            a.z(a.j_analytic),
            a.z(a.j_analytic_kappa_one)
        );
    }
    let check = Check { name: "cost consistency".into(), passed, statistic: z_half, threshold: 3.0, detail };
    Ok((CostReport { kappa_used: 0.5, scenario: scen, adjudication }, check))
}

// ---------------------------------------------------------------------------
// Optimality

/// Cost differences along several directions, all evaluated on each base
/// path (common random numbers).
struct Sweep<'a> {
    plan: &'a ClosedLoopPlan,
    plans: Vec<PerturbationPlan>,
    epsilons: Vec<f64>,
}

impl<'a> Sweep<'a> {
    fn new(plan: &'a ClosedLoopPlan, grid: &TimeGrid, dirs: Vec<Direction>, epsilons: &[f64]) -> Result<Self> {
        let plans = dirs.into_iter().map(|d| PerturbationPlan::new(plan, grid, d)).collect::<Result<_>>()?;
        Ok(Self { plan, plans, epsilons: epsilons.to_vec() })
    }

    fn run(&self, cfg: &EnsembleConfig) -> Result<Ensemble> {
        run_ensemble(self.plan, cfg, self)
    }
}

impl Probe for Sweep<'_> {
    type Scratch = PerturbScratch;

    fn width(&self) -> usize {
        self.plans.len() * self.epsilons.len()
    }

    fn scratch(&self, plan: &ClosedLoopPlan) -> PerturbScratch {
        PerturbScratch::new(plan)
    }

    fn observe(&self, rec: &PathRecord, _: &NoiseSlab, s: &mut PerturbScratch, out: &mut [f64]) {
        let ne = self.epsilons.len();
        for (d, pp) in self.plans.iter().enumerate() {
            perturbed_cost_deltas(self.plan, pp, rec, &self.epsilons, &mut out[d * ne..(d + 1) * ne], s);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionResult {
    pub direction: String,
    pub deltas: Vec<f64>,
    pub stderr: Vec<f64>,
    /// `ΔJ/ε²` per ε.
    pub scaling_ratios: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub epsilons: Vec<f64>,
    pub paths: usize,
    pub directions: Vec<DirectionResult>,
    /// Variance of the pathwise difference for the first direction at the
    /// middle ε, and the variance the same difference would have with
    /// independent seeds.
    pub crn_variance: f64,
    pub independent_variance: f64,
}

impl OptimalityReport {
    /// Most negative `ΔJ / stderr` over all cells.
    pub fn worst_z(&self) -> f64 {
        self.directions
            .iter()
            .flat_map(|d| d.deltas.iter().zip(&d.stderr).map(|(m, s)| m / s.max(f64::MIN_POSITIVE)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest max/min spread of the scaling ratios; infinite when a ratio is
    /// not positive.
    pub fn worst_spread(&self) -> f64 {
        self.directions.iter().map(|d| ratio_spread(&d.scaling_ratios)).fold(0.0, f64::max)
    }
}

fn ratio_spread(r: &[f64]) -> f64 {
    let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Sweep directions: constants `±1`, `sin 2πt/T`, `cos 2πt/T`, `t/T`, two
/// block indicators, `K x̂`, `±K(x̂ − E x̂)` at unit RMS and `K x̂` projected
/// on 4 and 16 blocks. `K` has all entries 1.
pub fn sweep_directions(p: &MFLQProblem, s: &Synthesis) -> Result<Vec<Direction>> {
    let (n, k) = (p.dims.state, p.dims.control);
    let grid = &p.grid;
    let horizon = grid.horizon();
    let ones = DMatrix::from_element(k, 1, 1.0);
    let tau = std::f64::consts::TAU;
    let gain = DMatrix::from_element(k, n, 1.0);
    // RMS of K(x̂ − E x̂) from the filter covariance.
    let mo = closed_loop_moments(p, &s.bundle.sigma, &s.law)?;
    let ms: f64 = (0..grid.knots()).map(|i| (&gain * mo.cov.knot(i) * gain.transpose()).trace()).sum::<f64>()
        / grid.knots() as f64;
    let unit = if ms > 0.0 { 1.0 / ms.sqrt() } else { 1.0 };
    let block = |lo: f64, hi: f64| {
        Direction::time_function(grid, move |t| {
            let x = t / horizon;
            if (lo..hi).contains(&x) {
                DMatrix::from_element(k, 1, 1.0)
            } else {
                DMatrix::zeros(k, 1)
            }
        })
    };
    Ok(vec![
        Direction::constant(grid, &ones),
        Direction::constant(grid, &-&ones),
        Direction::time_function(grid, |t| DMatrix::from_element(k, 1, (tau * t / horizon).sin())),
        Direction::time_function(grid, |t| DMatrix::from_element(k, 1, (tau * t / horizon).cos())),
        Direction::time_function(grid, |t| DMatrix::from_element(k, 1, t / horizon)),
        block(0.25, 0.5),
        block(0.5, 0.75),
        Direction::Filter { gain: gain.clone(), centered: false },
        Direction::Filter { gain: &gain * unit, centered: true },
        Direction::Filter { gain: &gain * -unit, centered: true },
        Direction::ProjectedFilter { gain: gain.clone(), blocks: 4 },
        Direction::ProjectedFilter { gain, blocks: 16 },
    ])
}

const DIRECTION_NAMES: [&str; 12] = [
    "constant +1",
    "constant -1",
    "sin(2 pi t)",
    "cos(2 pi t)",
    "t",
    "indicator [0.25, 0.5)",
    "indicator [0.5, 0.75)",
    "K xhat",
    "K (xhat - E xhat), unit RMS",
    "-K (xhat - E xhat), unit RMS",
    "K xhat on 4 blocks",
    "K xhat on 16 blocks",
];

fn summarize(e: &Ensemble, names: &[String], epsilons: &[f64]) -> Vec<DirectionResult> {
    let ne = epsilons.len();
    names
        .iter()
        .enumerate()
        .map(|(d, name)| {
            let (mut deltas, mut stderr, mut ratios) = (vec![], vec![], vec![]);
            for (j, eps) in epsilons.iter().enumerate() {
                let (m, se) = mean_se(e.probe_column(d * ne + j));
                deltas.push(m);
                stderr.push(se);
                ratios.push(m / (eps * eps));
            }
            DirectionResult { direction: name.clone(), deltas, stderr, scaling_ratios: ratios }
        })
        .collect()
}

/// Sweep of the synthesized law on `p` (regridded to the Monte Carlo step).
pub fn optimality_sweep(p: &MFLQProblem, opts: &VerifyOptions, epsilons: &[f64]) -> Result<OptimalityReport> {
    let p = on_grid(p, opts.mc_dt)?;
    let s = synthesize(&p)?;
    let plan = plan_for(&p, &s, &s.law)?;
    let e = Sweep::new(&plan, &p.grid, sweep_directions(&p, &s)?, epsilons)?.run(&opts.ensemble(opts.paths))?;
    let names: Vec<String> = DIRECTION_NAMES.iter().map(|s| s.to_string()).collect();
    let directions = summarize(&e, &names, epsilons);
    // Common random numbers against independent seeds for the first
    // direction at the middle ε: the independent difference has variance
    // Var(J[u+εv]) + Var(J[u]).
    let mid = epsilons.len() / 2;
    let deltas: Vec<f64> = e.probe_column(mid).collect();
    let var = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
    };
    let perturbed: Vec<f64> = e.costs.iter().zip(&deltas).map(|(c, d)| c + d).collect();
    Ok(OptimalityReport {
        epsilons: epsilons.to_vec(),
        paths: opts.paths,
        directions,
        crn_variance: var(&deltas),
        independent_variance: var(&perturbed) + var(&e.costs),
    })
}

pub fn optimality_check(r: &OptimalityReport) -> Check {
    let z = r.worst_z();
    let spread = r.worst_spread();
    let worst = r
        .directions
        .iter()
        .max_by(|a, b| ratio_spread(&a.scaling_ratios).total_cmp(&ratio_spread(&b.scaling_ratios)))
        .map(|d| d.direction.clone())
        .unwrap_or_default();
    Check {
        name: "optimality sweep".into(),
        passed: z >= -3.0 && spread <= 1.05,
        statistic: spread,
        threshold: 1.05,
        detail: format!(
            "{} directions × {} ε, min ΔJ/stderr = {z:.2}, worst ratio spread {spread:.4} ({worst})",
            r.directions.len(),
            r.epsilons.len()
        ),
    }
}

pub fn crn_check(r: &OptimalityReport) -> Check {
    let ratio = r.crn_variance / r.independent_variance;
    Check::at_most(
        "common random numbers reduce variance",
        ratio,
        1.0 - 1e-12,
        format!("Var(pathwise ΔJ) = {}, independent = {}", fmt(r.crn_variance), fmt(r.independent_variance)),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub epsilons: Vec<f64>,
    /// `ΔJ/ε` for `v ≡ 1` under the synthesized law.
    pub optimal: Vec<f64>,
    /// The same with the law's offset shifted by 1 and `v ≡ −1`.
    pub shifted: Vec<f64>,
    /// Ratio of `ΔJ/ε` at consecutive ε (halving).
    pub optimal_ratios: Vec<f64>,
    pub shifted_ratios: Vec<f64>,
}

/// First variation `ΔJ/ε` at ε = 0.1, 0.05, 0.025 for the optimal law (it
/// halves with ε) and for a law with shifted offset (it does not).
pub fn first_variation_scaling(p: &MFLQProblem, opts: &VerifyOptions) -> Result<ScalingReport> {
    let p = on_grid(p, opts.mc_dt)?;
    let s = synthesize(&p)?;
    let k = p.dims.control;
    let eps = vec![0.1, 0.05, 0.025];
    let run = |law: &FeedbackLaw, sign: f64, paths: usize| -> Result<Vec<f64>> {
        let plan = plan_for(&p, &s, law)?;
        let dir = Direction::constant(&p.grid, &DMatrix::from_element(k, 1, sign));
        let e = Sweep::new(&plan, &p.grid, vec![dir], &eps)?.run(&opts.ensemble(paths))?;
        Ok(eps.iter().enumerate().map(|(j, h)| mean_se(e.probe_column(j)).0 / h).collect())
    };
    let optimal = run(&s.law, 1.0, opts.paths)?;
    let shifted_law = s.law.with_offset_shift(&DMatrix::from_element(k, 1, 1.0));
    let shifted = run(&shifted_law, -1.0, (opts.paths / 10).max(2))?;
    let ratios = |v: &[f64]| v.windows(2).map(|w| w[0] / w[1]).collect::<Vec<_>>();
    Ok(ScalingReport {
        optimal_ratios: ratios(&optimal),
        shifted_ratios: ratios(&shifted),
        epsilons: eps,
        optimal,
        shifted,
    })
}

pub fn scaling_check(r: &ScalingReport) -> Check {
    let dev = r.optimal_ratios.iter().map(|x| (x / 2.0 - 1.0).abs()).fold(0.0, f64::max);
    // The negative control must fall outside the band the optimal law meets.
    let control_dev = r.shifted_ratios.iter().map(|x| (x / 2.0 - 1.0).abs()).fold(f64::INFINITY, f64::min);
    Check {
        name: "first variation vanishes".into(),
        passed: dev <= 0.1 && control_dev > 0.1,
        statistic: dev,
        threshold: 0.1,
        detail: format!(
            "halving ratios of ΔJ/ε: optimal {:?}, shifted offset {:?}",
            r.optimal_ratios.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>(),
            r.shifted_ratios.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>()
        ),
    }
}

/// `J[u₁] − J[u₂]` for `u₂ = u₁ + 1` does not depend on the initial
/// covariance: estimates with `σ0` and `σ0 + 0.01·I` agree.
pub fn sigma_independence(p: &MFLQProblem, opts: &VerifyOptions) -> Result<Check> {
    let p = on_grid(p, opts.mc_dt)?;
    let (n, k) = (p.dims.state, p.dims.control);
    let mut q = p.clone();
    q.set_const("sigma0", &p.init.covariance + DMatrix::identity(n, n) * 0.01)?;
    let mut est = Vec::new();
    for prob in [&p, &q] {
        let s = synthesize(prob)?;
        let plan = plan_for(prob, &s, &s.law)?;
        let dir = Direction::constant(&prob.grid, &DMatrix::from_element(k, 1, 1.0));
        let e = Sweep::new(&plan, &prob.grid, vec![dir], &[1.0])?.run(&opts.ensemble(opts.paths))?;
        est.push(mean_se(e.probe_column(0)));
    }
    let joint = (est[0].1.powi(2) + est[1].1.powi(2)).sqrt();
    let z = (est[0].0 - est[1].0).abs() / joint.max(f64::MIN_POSITIVE);
    Ok(Check::at_most(
        "cost differences ignore the filter variance",
        z,
        3.0,
        format!("ΔJ = {} ± {} vs {} ± {}", fmt(est[0].0), fmt(est[0].1), fmt(est[1].0), fmt(est[1].1)),
    ))
}

// ---------------------------------------------------------------------------
// Decomposition, filter, stationarity

/// Backward separation on `paths` paths with random piecewise-constant
/// controls of amplitude up to 1.
pub fn decomposition_check(p: &MFLQProblem, opts: &VerifyOptions) -> Result<Check> {
    let steps = p.grid.steps();
    let (n, k, r, rt) = (p.dims.state, p.dims.control, p.dims.state_noise, p.dims.obs_noise);
    let uni = Uniform::new(-1.0, 1.0).expect("valid range");
    let mut slab = NoiseSlab::empty(steps, n, r, rt);
    let mut worst = 0.0_f64;
    for id in 0..opts.decomposition_paths as u64 {
        let mut rng = stream_rng(opts.seed, AUX_STREAM_BASE + id);
        let v: Vec<DMatrix<f64>> =
            (0..steps).map(|_| DMatrix::from_fn(k, 1, |_, _| uni.sample(&mut rng))).collect();
        slab.fill(opts.seed, id, p.grid.step());
        worst = worst.max(decomposition_deviation(p, &v, &slab)?);
    }
    Ok(Check::at_most(
        "backward separation",
        worst,
        1e-12,
        format!("max deviation over {} paths = {}", opts.decomposition_paths, fmt(worst)),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRow {
    pub t: f64,
    pub mse: f64,
    pub mse_stderr: f64,
    pub trace_sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FilterReport {
    pub rows: Vec<FilterRow>,
    pub innovation_mean: Vec<f64>,
    pub innovation_mean_stderr: Vec<f64>,
    pub innovation_var: Vec<f64>,
    pub quadratic_variation: Vec<f64>,
    /// Largest `|mean x − mean x̂|` over knots in units of the joint error.
    pub tower_z: f64,
}

/// Filter statistics of the synthesized law on `p`'s own grid.
pub fn filter_report(p: &MFLQProblem, opts: &VerifyOptions) -> Result<FilterReport> {
    let s = synthesize(p)?;
    let plan = plan_for(p, &s, &s.law)?;
    let e = run_ensemble(&plan, &opts.ensemble(opts.paths), &NoProbe)?;
    filter_report_from(p, &s, &e)
}

pub fn filter_report_from(p: &MFLQProblem, s: &Synthesis, e: &Ensemble) -> Result<FilterReport> {
    let steps = p.grid.steps();
    let rows = [0.25, 0.5, 1.0]
        .iter()
        .map(|q| {
            let i = ((q * steps as f64).round() as usize).min(steps);
            let (mse, se) = e.filter_mse(i);
            FilterRow { t: p.grid.time(i), mse, mse_stderr: se, trace_sigma: s.bundle.sigma.knot(i).trace() }
        })
        .collect();
    let inn = innovation_diagnostics(e)?;
    let mut tower_z = 0.0_f64;
    for i in 0..e.knots {
        for j in 0..e.n {
            let (a, sa) = e.mean_x(i, j);
            let (b, sb) = e.mean_xhat(i, j);
            let joint = (sa * sa + sb * sb).sqrt();
            if joint > 0.0 {
                tower_z = tower_z.max((a - b).abs() / joint);
            } else if a != b {
                tower_z = f64::INFINITY;
            }
        }
    }
    Ok(FilterReport {
        rows,
        innovation_mean: inn.iter().map(|c| c.mean_terminal).collect(),
        innovation_mean_stderr: inn.iter().map(|c| c.mean_terminal_se).collect(),
        innovation_var: inn.iter().map(|c| c.var_terminal).collect(),
        quadratic_variation: inn.iter().map(|c| c.quadratic_variation).collect(),
        tower_z,
    })
}

pub fn filter_check(r: &FilterReport, horizon: f64) -> Check {
    let mse_dev = r.rows.iter().map(|row| max_rel(row.mse, row.trace_sigma)).fold(0.0, f64::max);
    let var_dev = r.innovation_var.iter().map(|v| max_rel(*v, horizon)).fold(0.0, f64::max);
    let mean_z = r
        .innovation_mean
        .iter()
        .zip(&r.innovation_mean_stderr)
        .map(|(m, s)| m.abs() / s)
        .fold(0.0, f64::max);
    let rows: Vec<String> =
        r.rows.iter().map(|row| format!("t={}: {} vs tr Σ {}", row.t, fmt(row.mse), fmt(row.trace_sigma))).collect();
    Check {
        name: "filter error and innovation".into(),
        passed: mse_dev <= 0.05 && var_dev <= 0.02 && mean_z <= 3.0,
        statistic: mse_dev,
        threshold: 0.05,
        detail: format!(
            "E|x − x̂|²: {}; innovation Var w̄(T) off by {:.2}% (limit 2%), |mean|/stderr = {mean_z:.2}",
            rows.join(", "),
            100.0 * var_dev
        ),
    }
}

pub fn tower_check(r: &FilterReport) -> Check {
    Check::at_most(
        "ensemble means of state and filter agree",
        r.tower_z,
        3.0,
        format!("max over knots |mean x − mean x̂| / joint stderr = {:.3}", r.tower_z),
    )
}

pub fn quadratic_variation_check(r: &FilterReport, horizon: f64) -> Check {
    let dev = r.quadratic_variation.iter().map(|q| max_rel(*q, horizon)).fold(0.0, f64::max);
    Check::at_most(
        "innovation quadratic variation",
        dev,
        0.02,
        format!("mean Σ(Δw̄)² = {:?}", r.quadratic_variation),
    )
}

/// Residual of the first-order condition at every knot, at the mean and at
/// two filter values off the mean.
pub fn stationarity_check(p: &MFLQProblem, s: &Synthesis) -> Check {
    let steps = p.grid.steps();
    let n = p.dims.state;
    let mut worst = 0.0_f64;
    for i in 0..=steps {
        let sp = knot_point(i, steps);
        let ex = s.bundle.ex.at(sp);
        for shift in [0.0, 1.0, -2.5] {
            let xhat = &ex + DMatrix::from_element(n, 1, shift);
            let u = s.law.at(sp, &xhat, &ex);
            let r = stationarity_residual_at(p, &s.reduced, &s.bundle, sp, &xhat, &ex, &u);
            worst = worst.max(r.amax());
        }
    }
    Check::at_most("stationarity", worst, 1e-12, format!("max residual over knots = {}", fmt(worst)))
}

// ---------------------------------------------------------------------------
// Mean-field lift

/// The doubled system acting on `(x − Ex, Ex)` at one step point.
#[derive(Debug, Clone)]
pub struct Lift {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub bbar: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub alpha: DMatrix<f64>,
    pub beta: DMatrix<f64>,
    pub gamma: Vec<DMatrix<f64>>,
    pub gamma_tilde: Vec<DMatrix<f64>>,
    pub psi: DMatrix<f64>,
    pub psibar: DMatrix<f64>,
    pub rho: DMatrix<f64>,
    pub c_check: DMatrix<f64>,
    pub big_a: DMatrix<f64>,
    pub big_b: DMatrix<f64>,
    pub big_h: DMatrix<f64>,
    pub big_m: DMatrix<f64>,
}

fn diag2(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let (r1, c1) = x.shape();
    let (r2, c2) = y.shape();
    let mut out = DMatrix::zeros(r1 + r2, c1 + c2);
    out.view_mut((0, 0), (r1, c1)).copy_from(x);
    out.view_mut((r1, c1), (r2, c2)).copy_from(y);
    out
}

fn stack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.view_mut((0, 0), top.shape()).copy_from(top);
    out.view_mut((top.nrows(), 0), bottom.shape()).copy_from(bottom);
    out
}

impl Lift {
    pub fn at(p: &MFLQProblem, sp: StepPoint) -> Self {
        let d = &p.dynamics;
        let bs = &p.bsde;
        let o = &p.observation;
        let c = &p.cost;
        let zeros = |m: &DMatrix<f64>| DMatrix::zeros(m.nrows(), m.ncols());
        let a = d.drift.at(sp);
        let b = d.control_gain.at(sp);
        let bbar = d.offset.at(sp);
        let cc = d.diffusion.at(sp);
        let f = o.sensor.at(sp);
        let g = o.offset.at(sp);
        let h = o.noise.at(sp);
        let alpha = bs.state_coupling.at(sp);
        let beta = bs.value_coupling.at(sp);
        let psi = bs.control_coupling.at(sp);
        let psibar = bs.offset.at(sp);
        let m = bs.value_coupling.at(sp).nrows();
        let fam = |base: &[mflqg_core::CoefficientPath], mean: &[mflqg_core::CoefficientPath]| {
            base.iter().zip(mean).map(|(x, y)| diag2(&x.at(sp), &(x.at(sp) + y.at(sp)))).collect()
        };
        let big_a = c.state.at(sp);
        let mut c_check = DMatrix::zeros(2 * m, 2 * m);
        c_check.view_mut((0, 0), (m, m)).fill_with_identity();
        c_check.view_mut((0, m), (m, m)).fill_with_identity();
        Self {
            a: diag2(&a, &(&a + d.mean_drift.at(sp))),
            b: diag2(&b, &b),
            bbar: stack(&zeros(&bbar), &bbar),
            c: stack(&cc, &zeros(&cc)),
            f: diag2(&f, &(&f + o.mean_sensor.at(sp))),
            g: stack(&zeros(&g), &g),
            h: stack(&h, &zeros(&h)),
            alpha: diag2(&alpha, &(&alpha + bs.mean_state_coupling.at(sp))),
            beta: diag2(&beta, &(&beta + bs.mean_value_coupling.at(sp))),
            gamma: fam(&bs.z_coupling, &bs.mean_z_coupling),
            gamma_tilde: fam(&bs.ztilde_coupling, &bs.mean_ztilde_coupling),
            psi: diag2(&psi, &psi),
            psibar: stack(&zeros(&psibar), &psibar),
            rho: diag2(&bs.terminal, &(&bs.terminal + &bs.mean_terminal)),
            c_check,
            big_a: diag2(&big_a, &(&big_a + c.state_mean.at(sp))),
            big_b: diag2(&c.control.at(sp), &c.control.at(sp)),
            big_h: diag2(&c.terminal, &(&c.terminal + &c.terminal_mean)),
            big_m: diag2(&c.utility_quadratic, &c.utility_quadratic),
        }
    }
}

/// `⟨Ax, x⟩ + ⟨ĀEx, Ex⟩` against `⟨𝐀𝐱, 𝐱⟩` for `x = m ± d`. The cross term
/// `2⟨A d, m⟩` is odd in `d`, so the antithetic pair average is an exact
/// identity. Returns the largest relative deviation over `points` pairs.
pub fn lift_identity_deviation(dims: usize, points: usize, seed: u64) -> f64 {
    let uni = Uniform::new(-1.0, 1.0).expect("valid range");
    let mut rng = stream_rng(seed, AUX_STREAM_BASE - 1);
    let mut worst = 0.0_f64;
    for _ in 0..points {
        let mut draw = |r, c| DMatrix::from_fn(r, c, |_, _| uni.sample(&mut rng));
        let (a0, ab0) = (draw(dims, dims), draw(dims, dims));
        let a = &a0 + a0.transpose();
        let abar = &ab0 + ab0.transpose();
        let (m, d) = (draw(dims, 1), draw(dims, 1));
        let big = diag2(&a, &(&a + &abar));
        let mut orig = 0.0;
        let mut lifted = 0.0;
        for sign in [1.0, -1.0] {
            let x = &m + &d * sign;
            orig += x.dot(&(&a * &x)) + m.dot(&(&abar * &m));
            let bx = stack(&(&x - &m), &m);
            lifted += bx.dot(&(&big * &bx));
        }
        worst = worst.max((orig - lifted).abs() / orig.abs().max(1.0));
    }
    worst
}

/// RK4 of the lifted closed-loop mean `(E(x − Ex), Ex)` under
/// `E𝐯 = diag(K_x, K_x + K_m)·𝐦 + (0, u_0)`. Returns knot values.
pub fn lifted_mean(p: &MFLQProblem, law: &FeedbackLaw) -> Vec<DMatrix<f64>> {
    let n = p.dims.state;
    let k = p.dims.control;
    let steps = p.grid.steps();
    let dt = p.grid.step();
    let rhs = |sp: StepPoint, m: &DMatrix<f64>| {
        let l = Lift::at(p, sp);
        let kx = law.gain_filter.at(sp);
        let gain = diag2(&kx, &(&kx + law.gain_mean.at(sp)));
        let u0 = stack(&DMatrix::zeros(k, 1), &law.offset.at(sp));
        &l.a * m + &l.b * (gain * m + u0) + &l.bbar
    };
    let mut m = stack(&DMatrix::zeros(n, 1), &p.init.mean);
    let mut out = vec![m.clone()];
    for i in 0..steps {
        let k1 = rhs(StepPoint::start(i), &m);
        let k2 = rhs(StepPoint::mid(i), &(&m + &k1 * (0.5 * dt)));
        let k3 = rhs(StepPoint::mid(i), &(&m + &k2 * (0.5 * dt)));
        let k4 = rhs(StepPoint::end(i), &(&m + &k3 * dt));
        m = &m + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        out.push(m.clone());
    }
    out
}

/// Per path: the quadratic cost of the lifting example in original
/// coordinates and in lifted coordinates, knot trapezoid in time.
struct LiftProbe {
    n: usize,
    k: usize,
    dt: f64,
    /// Exact Euler mean of the state and of the control per knot.
    ex: Vec<f64>,
    ev: Vec<f64>,
    a: Vec<DMatrix<f64>>,
    abar: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    lifted_a: Vec<DMatrix<f64>>,
    lifted_b: Vec<DMatrix<f64>>,
    h: DMatrix<f64>,
    hbar: DMatrix<f64>,
    lifted_h: DMatrix<f64>,
}

impl LiftProbe {
    fn new(p: &MFLQProblem, plan: &ClosedLoopPlan, law: &FeedbackLaw) -> Self {
        let (n, k, steps) = (p.dims.state, p.dims.control, p.grid.steps());
        let ex = plan.discrete_mean();
        let mut ev = Vec::with_capacity((steps + 1) * k);
        let (mut a, mut abar, mut b, mut la, mut lb) = (vec![], vec![], vec![], vec![], vec![]);
        for i in 0..=steps {
            let sp = knot_point(i, steps);
            let m = DMatrix::from_column_slice(n, 1, &ex[i * n..(i + 1) * n]);
            ev.extend(law.at(sp, &m, &plan.mean[i]).iter());
            let l = Lift::at(p, sp);
            a.push(p.cost.state.at(sp));
            abar.push(p.cost.state_mean.at(sp));
            b.push(p.cost.control.at(sp));
            la.push(l.big_a);
            lb.push(l.big_b);
        }
        let l = Lift::at(p, knot_point(steps, steps));
        Self {
            n,
            k,
            dt: p.grid.step(),
            ex,
            ev,
            a,
            abar,
            b,
            lifted_a: la,
            lifted_b: lb,
            h: p.cost.terminal.clone(),
            hbar: p.cost.terminal_mean.clone(),
            lifted_h: l.big_h,
        }
    }

    fn costs(&self, rec: &PathRecord) -> (f64, f64) {
        let (n, k) = (self.n, self.k);
        let steps = rec.knots - 1;
        let (mut orig, mut lifted) = (0.0, 0.0);
        let mut last = (0.0, 0.0);
        for i in 0..=steps {
            let x = DMatrix::from_column_slice(n, 1, rec.x_at(i));
            let u = DMatrix::from_column_slice(k, 1, rec.u_at(i));
            let e = DMatrix::from_column_slice(n, 1, &self.ex[i * n..(i + 1) * n]);
            let ev = DMatrix::from_column_slice(k, 1, &self.ev[i * k..(i + 1) * k]);
            let o = x.dot(&(&self.a[i] * &x)) + e.dot(&(&self.abar[i] * &e)) + u.dot(&(&self.b[i] * &u));
            let bx = stack(&(&x - &e), &e);
            let bv = stack(&(&u - &ev), &ev);
            let l = bx.dot(&(&self.lifted_a[i] * &bx)) + bv.dot(&(&self.lifted_b[i] * &bv));
            let w = if i == 0 || i == steps { 0.5 * self.dt } else { self.dt };
            orig += w * o;
            lifted += w * l;
            if i == steps {
                last = (x.dot(&(&self.h * &x)) + e.dot(&(&self.hbar * &e)), bx.dot(&(&self.lifted_h * &bx)));
            }
        }
        (orig + last.0, lifted + last.1)
    }
}

impl Probe for LiftProbe {
    type Scratch = ();

    fn width(&self) -> usize {
        2
    }

    fn scratch(&self, _: &ClosedLoopPlan) {}

    fn observe(&self, rec: &PathRecord, _: &NoiseSlab, _: &mut (), out: &mut [f64]) {
        let (o, l) = self.costs(rec);
        out[0] = o;
        out[1] = l;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftReport {
    pub mean_deviation: f64,
    pub identity_deviation: f64,
    pub cost_original: f64,
    pub cost_original_stderr: f64,
    pub cost_lifted: f64,
    pub cost_lifted_stderr: f64,
}

impl LiftReport {
    pub fn cost_z(&self) -> f64 {
        let joint = (self.cost_original_stderr.powi(2) + self.cost_lifted_stderr.powi(2)).sqrt();
        (self.cost_original - self.cost_lifted).abs() / joint.max(f64::MIN_POSITIVE)
    }
}

/// Mean trajectories of the original and lifted closed loops on `p`'s grid,
/// the antithetic algebraic identity, and Monte Carlo costs in both
/// coordinates on the Monte Carlo grid.
pub fn lift_report(p: &MFLQProblem, opts: &VerifyOptions) -> Result<LiftReport> {
    let s = synthesize(p)?;
    let n = p.dims.state;
    let lifted = lifted_mean(p, &s.law);
    let mo = closed_loop_moments(p, &s.bundle.sigma, &s.law)?;
    let mut mean_deviation = 0.0_f64;
    for (i, m) in lifted.iter().enumerate() {
        let top = m.rows(0, n).amax();
        let bottom = (m.rows(n, n) - mo.mean.knot(i)).amax();
        mean_deviation = mean_deviation.max(top).max(bottom);
    }
    let q = on_grid(p, opts.mc_dt)?;
    let sq = synthesize(&q)?;
    let plan = plan_for(&q, &sq, &sq.law)?;
    let probe = LiftProbe::new(&q, &plan, &sq.law);
    let e = run_ensemble(&plan, &opts.ensemble(opts.paths), &probe)?;
    let (co, so) = mean_se(e.probe_column(0));
    let (cl, sl) = mean_se(e.probe_column(1));
    Ok(LiftReport {
        mean_deviation,
        identity_deviation: lift_identity_deviation(n.max(2), 200, opts.seed),
        cost_original: co,
        cost_original_stderr: so,
        cost_lifted: cl,
        cost_lifted_stderr: sl,
    })
}

pub fn lift_check(r: &LiftReport) -> Check {
    let z = r.cost_z();
    Check {
        name: "mean-field lift".into(),
        passed: r.mean_deviation <= 1e-10 && r.identity_deviation <= 1e-12 && z <= 3.0,
        statistic: r.mean_deviation,
        threshold: 1e-10,
        detail: format!(
            "mean paths differ by {}, quadratic identity {}, costs {} ± {} vs {} ± {} ({z:.2} joint σ)",
            fmt(r.mean_deviation),
            fmt(r.identity_deviation),
            fmt(r.cost_original),
            fmt(r.cost_original_stderr),
            fmt(r.cost_lifted),
            fmt(r.cost_lifted_stderr)
        ),
    }
}

// ---------------------------------------------------------------------------
// η representation

struct EtaProbe<'a> {
    p: &'a MFLQProblem,
    plan: &'a ClosedLoopPlan,
}

impl Probe for EtaProbe<'_> {
    type Scratch = ();

    fn width(&self) -> usize {
        1 + self.p.dims.value
    }

    fn scratch(&self, _: &ClosedLoopPlan) {}

    fn observe(&self, rec: &PathRecord, noise: &NoiseSlab, _: &mut (), out: &mut [f64]) {
        let (y, eta) = eta_sample(self.p, self.plan, rec, noise);
        out[0] = y;
        out[1..].copy_from_slice(eta.as_slice());
    }
}

/// `p` with every BSDE coupling that the η representation excludes set to
/// zero: α, ᾱ, β, β̄ and all γ families.
pub fn eta_problem(p: &MFLQProblem) -> Result<MFLQProblem> {
    let mut q = p.clone();
    for spec in KEYS {
        if matches!(spec.key, "alpha" | "alphabar" | "beta" | "betabar")
            || matches!(spec.kind, KeyKind::FamilyW | KeyKind::FamilyWTilde)
        {
            let (r, c) = q.shape_of(spec.key).expect("known key");
            match spec.kind {
                KeyKind::FamilyW | KeyKind::FamilyWTilde => {
                    let len = q.family_len(spec.key).expect("family");
                    let zero = mflqg_core::CoefficientPath::constant(DMatrix::zeros(r, c), q.grid.knots(), q.interpolation);
                    q.set_family(spec.key, vec![zero; len])?;
                }
                _ => q.set_const(spec.key, DMatrix::zeros(r, c))?,
            }
        }
    }
    Ok(q)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaReport {
    /// Mean of the η estimate of `y_0` and its standard error.
    pub estimate: f64,
    pub estimate_stderr: f64,
    /// `χ(T)((ρ+ρ̄)Ex_T) + ∫χ(ψEu + ψ̄)` from the scheme's exact means.
    pub chi_value: f64,
    /// Sample mean of `η_T` with `γ̃ = 0.5`.
    pub martingale_mean: f64,
    pub martingale_stderr: f64,
    /// `y_0` estimate against the deterministic `x_T` in the same setting.
    pub martingale_estimate: f64,
    pub martingale_estimate_stderr: f64,
    pub martingale_target: f64,
}

/// Scalar martingale setting: `ρ = 1`, `ψ = 0`, `γ̃ = 0.5`, deterministic
/// state `ẋ = 0.1x`, `x_0 = 2`.
pub fn martingale_problem(steps: usize) -> Result<(MFLQProblem, MFLQProblem)> {
    let grid = TimeGrid::new(1.0, steps)?;
    let mut base = MFLQProblem::zeros(Dims::scalar(), grid, Interpolation::default())?;
    for (k, v) in [("B", 1.0), ("h", 1.0), ("rho", 1.0), ("mu0", 2.0), ("a", 0.1)] {
        base.set_scalar(k, v)?;
    }
    let mut p = base.clone();
    p.set_scalar("gammatilde", 0.5)?;
    Ok((base, p))
}

pub fn eta_report(p: &MFLQProblem, opts: &VerifyOptions) -> Result<EtaReport> {
    // Zero γ: η ≡ 1 and the estimate is a plain expectation.
    let q = eta_problem(&on_grid(p, opts.mc_dt)?)?;
    eta_precondition(&q)?;
    let s = synthesize(&q)?;
    let plan = plan_for(&q, &s, &s.law)?;
    let e = run_ensemble(&plan, &opts.ensemble(opts.paths), &EtaProbe { p: &q, plan: &plan })?;
    let (estimate, estimate_stderr) = mean_se(e.probe_column(0));
    let (n, steps, dt) = (q.dims.state, q.grid.steps(), q.grid.step());
    let m = plan.discrete_mean();
    let chi = chi_from_origin(&q);
    let bs = &q.bsde;
    let integrand = |i: usize| {
        let sp = knot_point(i, steps);
        let mi = DMatrix::from_column_slice(n, 1, &m[i * n..(i + 1) * n]);
        let eu = s.law.at(sp, &mi, &plan.mean[i]);
        chi.at(sp) * (bs.control_coupling.at(sp) * eu + bs.offset.at(sp))
    };
    let mut integral = DMatrix::zeros(q.dims.value, 1);
    for i in 0..steps {
        integral += (integrand(i) + integrand(i + 1)) * (0.5 * dt);
    }
    let m_t = DMatrix::from_column_slice(n, 1, &m[steps * n..]);
    let terminal = chi.last() * (&bs.terminal * m_t + &bs.mean_terminal * &plan.mean[steps]);
    // eta_sample pairs the value with η = 1, i.e. sums the components.
    let chi_value = (terminal + integral).sum();

    let (base, mp) = martingale_problem(((1.0 / opts.mc_dt).round() as usize).max(2))?;
    let s = synthesize(&base)?;
    let plan = plan_for(&mp, &s, &s.law)?;
    let e = run_ensemble(&plan, &opts.ensemble(opts.paths), &EtaProbe { p: &mp, plan: &plan })?;
    let (martingale_mean, martingale_stderr) = mean_se(e.probe_column(1));
    let (y, y_se) = mean_se(e.probe_column(0));
    let martingale_target = plan.discrete_mean()[mp.grid.steps()];
    Ok(EtaReport {
        estimate,
        estimate_stderr,
        chi_value,
        martingale_mean,
        martingale_stderr,
        martingale_estimate: y,
        martingale_estimate_stderr: y_se,
        martingale_target,
    })
}

pub fn eta_check(r: &EtaReport) -> Check {
    let z = (r.estimate - r.chi_value).abs() / r.estimate_stderr.max(f64::MIN_POSITIVE);
    let zm = (r.martingale_mean - 1.0).abs() / r.martingale_stderr.max(f64::MIN_POSITIVE);
    let zy = (r.martingale_estimate - r.martingale_target).abs() / r.martingale_estimate_stderr.max(f64::MIN_POSITIVE);
    Check {
        name: "eta representation".into(),
        passed: z <= 3.0 && zm <= 3.0 && zy <= 3.0,
        statistic: z.max(zm).max(zy),
        threshold: 3.0,
        detail: format!(
            "η estimate {} ± {} vs χ route {} ({z:.2}σ); E η_T = {} ± {} ({zm:.2}σ); y_0 {} ± {} vs x_T {} ({zy:.2}σ)",
            fmt(r.estimate),
            fmt(r.estimate_stderr),
            fmt(r.chi_value),
            fmt(r.martingale_mean),
            fmt(r.martingale_stderr),
            fmt(r.martingale_estimate),
            fmt(r.martingale_estimate_stderr),
            fmt(r.martingale_target)
        ),
    }
}

// ---------------------------------------------------------------------------
// Projection

/// L² distance between `sin 2πt/T` and its block projection at 4, 16 and
/// 64 blocks; it must decrease.
pub fn projection_check(p: &MFLQProblem) -> Result<Check> {
    let steps = p.grid.steps();
    let horizon = p.grid.horizon();
    let dt = p.grid.step();
    let v: Vec<DMatrix<f64>> = (0..steps)
        .map(|i| DMatrix::from_element(1, 1, (std::f64::consts::TAU * (i as f64 + 0.5) * dt / horizon).sin()))
        .collect();
    let nu = DMatrix::zeros(1, 1);
    let mut dists = Vec::new();
    for j in [4, 16, 64] {
        let proj = piecewise_projection(&p.grid, &v, j, &nu)?;
        let d2: f64 = v.iter().zip(&proj).map(|(a, b)| (a[(0, 0)] - b[(0, 0)]).powi(2) * dt).sum();
        dists.push(d2.sqrt());
    }
    let monotone = dists.windows(2).all(|w| w[1] < w[0]);
    Ok(Check {
        name: "block projections converge".into(),
        passed: monotone,
        statistic: dists[2],
        threshold: dists[0],
        detail: format!("L² distance at 4, 16, 64 blocks: {:?}", dists.iter().map(|d| fmt(*d)).collect::<Vec<_>>()),
    })
}

// ---------------------------------------------------------------------------
// Suite

/// Checks plus the detailed reports they were computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub checks: Vec<Check>,
    pub cost: Option<CostReport>,
    pub optimality: Option<OptimalityReport>,
    pub scaling: Option<ScalingReport>,
    pub filter: Option<FilterReport>,
    pub lift: Option<LiftReport>,
    pub eta: Option<EtaReport>,
    pub comparison: Option<Vec<ComparisonRow>>,
}

/// Which checks to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    /// The ten acceptance criteria (the closed-form ones only for the
    /// asset-liability example).
    Acceptance,
    /// Acceptance plus supporting checks.
    Full,
}

/// Runs the suite on `p`. `is_al` enables the closed-form comparisons.
/// Each finished check is passed to `progress`.
pub fn run_suite(
    p: &MFLQProblem,
    is_al: bool,
    opts: &VerifyOptions,
    suite: Suite,
    mut progress: impl FnMut(&Check),
) -> Result<VerifyReport> {
    let s = synthesize(p)?;
    let mut report = VerifyReport {
        passed: true,
        checks: vec![],
        cost: None,
        optimality: None,
        scaling: None,
        filter: None,
        lift: None,
        eta: None,
        comparison: None,
    };
    let mut push = |report: &mut VerifyReport, c: Check| {
        progress(&c);
        report.passed &= c.passed;
        report.checks.push(c);
    };
    if is_al {
        push(&mut report, gamma_check(p, &s));
        push(&mut report, mean_trajectory_check(p, &s));
        let text = errata::render(&errata::entries(p, &s, None));
        push(&mut report, sigma_check(p, &s, &text));
        report.comparison = Some(al_comparison(p, &s)?);
    }
    let (cost, c) = cost_consistency(p, opts)?;
    push(&mut report, c);
    report.cost = Some(cost);

    let sweep = optimality_sweep(p, opts, &[0.1, 0.2, 0.4])?;
    push(&mut report, optimality_check(&sweep));
    if suite == Suite::Full {
        push(&mut report, crn_check(&sweep));
    }
    report.optimality = Some(sweep);

    push(&mut report, decomposition_check(p, opts)?);

    let filter = filter_report(p, opts)?;
    push(&mut report, filter_check(&filter, p.grid.horizon()));
    if suite == Suite::Full {
        push(&mut report, tower_check(&filter));
        push(&mut report, quadratic_variation_check(&filter, p.grid.horizon()));
    }
    report.filter = Some(filter);

    push(&mut report, stationarity_check(p, &s));

    let lift = lift_report(p, opts)?;
    push(&mut report, lift_check(&lift));
    report.lift = Some(lift);

    let eta = eta_report(p, opts)?;
    push(&mut report, eta_check(&eta));
    report.eta = Some(eta);

    if suite == Suite::Full {
        let scaling = first_variation_scaling(p, opts)?;
        push(&mut report, scaling_check(&scaling));
        report.scaling = Some(scaling);
        push(&mut report, sigma_independence(p, opts)?);
        push(&mut report, projection_check(p)?);
    }
    Ok(report)
}
