//! Runs every acceptance criterion and prints one PASS/FAIL line each.
//! Exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use qfcsim_validation::criteria;

fn main() -> ExitCode {
    let mut failed = Vec::new();
    for c in criteria() {
        let start = Instant::now();
        let result = (c.check)();
        let elapsed = start.elapsed();
        let over = c.budget.is_some_and(|b| elapsed > b);
        let (passed, detail, notes) = match result {
            Ok(o) => (o.passed && !over, o.detail, o.notes),
            Err(e) => (false, format!("error: {e:#}"), Vec::new()),
        };
        let budget = c.budget.map_or(String::new(), |b| format!(" / {} s", b.as_secs()));
        let verdict = if passed { "PASS" } else { "FAIL" };
        println!(
            "{verdict} criterion {}: {} | {detail} [{:.2} s{budget}]",
            c.id,
            c.name,
            elapsed.as_secs_f64()
        );
        for note in notes {
            println!("      note: {note}");
        }
        if !passed {
            failed.push(c.id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
