//! Acceptance gate. One line per criterion; exits non-zero if any fails.
//!
//! `cargo test -p lbsn-server --test acceptance [-- NAME...]` runs all
//! criteria, or those whose name contains one of the given words.

#[path = "../common/mod.rs"]
mod common;

mod coverage;
mod e2e;
mod geostore;
mod localization;
mod messaging;
mod privacy;
mod recovery;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

pub type Outcome = Result<String, String>;

/// Turns a failed check into an `Err` with a formatted message.
#[macro_export]
macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

const CRITERIA: &[(&str, fn() -> Outcome)] = &[
    ("localization-oracle", localization::oracle_suite),
    ("noise-monotonicity", localization::noise_monotonicity),
    ("geostore-equivalence", geostore::equivalence),
    ("privacy-suite", privacy::suite),
    ("messaging-suite", messaging::suite),
    ("crash-recovery", recovery::kill_points),
    ("cli-scenario-e2e", e2e::scenario),
    ("endpoint-coverage", coverage::suite),
];

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, run) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name:<22} {secs:>7.2}s  {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name:<22} {secs:>7.2}s  {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
