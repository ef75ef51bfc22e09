//! The ten acceptance criteria on the asset-liability example, at their
//! stated tolerances. Prints one PASS/FAIL line per criterion.

use std::io::Write;

use mflqg::scenario::Scenario;
use mflqg::verify::{run_suite, Suite, VerifyOptions};

const CRITERIA: [&str; 10] = [
    "gamma closed form",
    "mean trajectories",
    "filter variance closed form",
    "cost consistency",
    "optimality sweep",
    "backward separation",
    "filter error and innovation",
    "stationarity",
    "mean-field lift",
    "eta representation",
];

#[test]
fn acceptance_criteria() {
    let scenario = Scenario::asset_liability();
    let report = run_suite(&scenario.problem, true, &VerifyOptions::default(), Suite::Acceptance, |_| {})
        .expect("suite runs");

    // Written to the handle directly so the lines survive output capture.
    let mut out = std::io::stdout().lock();
    let mut failed = vec![];
    for (i, name) in CRITERIA.iter().enumerate() {
        let check = report.checks.iter().find(|c| c.name == *name);
        match check {
            Some(c) => {
                writeln!(out, "{} criterion {}: {} ({})", c.status(), i + 1, name, c.detail).unwrap();
                if !c.passed {
                    failed.push(i + 1);
                }
            }
            None => {
                writeln!(out, "FAIL criterion {}: {} (not run)", i + 1, name).unwrap();
                failed.push(i + 1);
            }
        }
    }
    assert_eq!(report.checks.len(), CRITERIA.len());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
