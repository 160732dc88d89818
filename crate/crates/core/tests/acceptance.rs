//! Runs the ten acceptance criteria and prints one PASS/FAIL line each.
//! Failures flagged as known gaps are reported but do not fail the target.

use spin_curvature::acceptance::{run_criterion, SuiteOptions};
use std::process::ExitCode;

fn main() -> ExitCode {
    // `cargo test -- --list` and filters are not meaningful here
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let opts = SuiteOptions::default();
    let mut ok = true;
    for id in 1..=10 {
        let o = run_criterion(id, &opts);
        println!("{}", o.line());
        for c in &o.checks {
            let mark = match (c.passed, c.known_gap) {
                (true, _) => "ok  ",
                (false, true) => "gap ",
                (false, false) => "FAIL",
            };
            println!("    {mark} {}: {}", c.name, c.detail);
        }
        ok &= o.only_known_gaps();
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
