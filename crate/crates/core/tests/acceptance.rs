//! Runs without the libtest harness so the per-criterion lines are always
//! shown. A failing criterion makes the process exit non-zero.

use std::process::ExitCode;

use cbf_antiwindup::verify::{Verifier, DEFAULT_SEED};

fn main() -> ExitCode {
    let mut v = Verifier::new(DEFAULT_SEED);
    let outcomes = v.run_all();
    for o in &outcomes {
        println!("{o}");
    }
    let failed: Vec<u8> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    if outcomes.len() != 9 || !failed.is_empty() {
        eprintln!("acceptance: {} criteria run, failed: {failed:?}", outcomes.len());
        return ExitCode::FAILURE;
    }
    println!("acceptance: all 9 criteria pass");
    ExitCode::SUCCESS
}
