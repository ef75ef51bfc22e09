use mflqg::ensemble::{run_ensemble, EnsembleConfig, NoProbe};
use mflqg::scenario::Scenario;
use mflqg::verify::{
    decomposition_check, lift_check, lift_report, run_suite, stationarity_check, Suite, VerifyOptions, VerifyReport,
};
use mflqg_core::simulate::{ClosedLoopPlan, FilterMode};
use mflqg_core::synthesize;

/// Two states, two controls, correlated observation, time-varying drift.
const TWO_DIM: &str = r#"
[problem]
horizon = 1.0
steps = 64
interpolation = "piecewise-linear"
n = 2
k = 2
r = 2
r_tilde = 2

[init]
mu0 = [0.5, -0.2]
sigma0 = [[0.04, 0.01], [0.01, 0.02]]

[dynamics]
a = { times = [0.0, 1.0], values = [[[0.1, 0.2], [-0.1, -0.3]], [[0.2, 0.1], [0.0, -0.2]]] }
abar = [[0.05, 0.0], [0.1, 0.05]]
b = [[1.0, 0.2], [0.0, 0.8]]
bbar = [0.1, -0.1]
c = [[0.2, 0.0], [0.05, 0.15]]

[bsde]
beta = 0.05
psi = [0.3, 0.1]
rho = 1.0

[observation]
f = [[0.8, 0.1], [0.0, 0.6]]
g = [0.05, 0.0]
h = [[0.3, 0.05], [0.05, 0.4]]

[cost]
A = [[0.5, 0.1], [0.1, 0.3]]
Abar = [[0.1, 0.0], [0.0, 0.1]]
B = [[1.0, 0.1], [0.1, 1.5]]
D = [[0.05, 0.0], [0.0, 0.05]]
H = [[0.4, 0.0], [0.0, 0.2]]
Hbar = [[-0.1, 0.0], [0.0, 0.05]]
N = -0.5
"#;

fn two_dim() -> Scenario {
    Scenario::parse(TWO_DIM).unwrap()
}

fn small_opts() -> VerifyOptions {
    VerifyOptions { paths: 2000, seed: 11, mc_dt: 1.0 / 64.0, decomposition_paths: 10 }
}

fn plan(s: &Scenario) -> ClosedLoopPlan {
    let syn = synthesize(&s.problem).unwrap();
    ClosedLoopPlan::new(&s.problem, &syn.reduced, &syn.bundle.sigma, &syn.law).unwrap()
}

fn cfg(paths: usize) -> EnsembleConfig {
    EnsembleConfig { paths, seed: 5, mode: FilterMode::Observation, record: 2 }
}

#[test]
fn path_costs_depend_only_on_seed_and_path_id() {
    let s = two_dim();
    let plan = plan(&s);
    let short = run_ensemble(&plan, &cfg(200), &NoProbe).unwrap();
    let long = run_ensemble(&plan, &cfg(300), &NoProbe).unwrap();
    assert_eq!(short.costs.len(), 200);
    for (a, b) in short.costs.iter().zip(&long.costs) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    assert_eq!(short.recorded.len(), 2);
    assert_eq!(short.recorded[1].0, 1);
    let again = run_ensemble(&plan, &cfg(300), &NoProbe).unwrap();
    assert_eq!(again.sum_x, long.sum_x);
    assert_eq!(again.sum_err2, long.sum_err2);
}

#[test]
fn zero_weights_cost_nothing() {
    let text = TWO_DIM
        .split("[cost]")
        .next()
        .unwrap()
        .to_string()
        + "[cost]\nB = [[1.0, 0.0], [0.0, 1.0]]\n";
    let s = Scenario::parse(&text).unwrap();
    let e = run_ensemble(&plan(&s), &cfg(150), &NoProbe).unwrap();
    assert!(e.costs.iter().all(|c| *c == 0.0), "controls should vanish with no cost to steer");
    assert_eq!(e.cost(0.0), (0.0, 0.0));
}

#[test]
fn closed_form_identities_hold_in_two_dimensions() {
    let s = two_dim();
    let syn = synthesize(&s.problem).unwrap();
    assert!(stationarity_check(&s.problem, &syn).passed);
    let c = decomposition_check(&s.problem, &small_opts()).unwrap();
    assert!(c.passed, "{}", c.detail);
}

#[test]
fn lift_agrees_in_two_dimensions() {
    let s = two_dim();
    let r = lift_report(&s.problem, &small_opts()).unwrap();
    assert!(r.mean_deviation < 1e-12, "{r:?}");
    assert!(r.identity_deviation < 1e-12, "{r:?}");
    let c = lift_check(&r);
    assert!(c.passed, "{}", c.detail);
}

#[test]
fn report_round_trips_through_json() {
    let s = two_dim();
    let report = run_suite(&s.problem, false, &small_opts(), Suite::Acceptance, |_| {}).unwrap();
    assert_eq!(report.checks.len(), 7);
    let text = serde_json::to_string(&report).unwrap();
    let back: VerifyReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, report);
}
