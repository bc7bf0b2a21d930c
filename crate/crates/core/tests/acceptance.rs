//! Runs the acceptance criteria and prints one line per criterion.
//! `cargo test --test acceptance -- A6 A7` runs a subset.

use std::process::ExitCode;

use asyncclip::acceptance::{Suite, CRITERIA};

fn main() -> ExitCode {
    let wanted: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let suite = Suite::default();
    let mut failed = 0;
    for id in CRITERIA {
        if !wanted.is_empty() && !wanted.iter().any(|w| w.eq_ignore_ascii_case(id)) {
            continue;
        }
        let report = suite.run(id).expect("known criterion");
        println!("{report}");
        if !report.passed {
            failed += 1;
        }
    }
    if failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
