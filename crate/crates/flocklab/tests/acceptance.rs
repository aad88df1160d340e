//! The release gate: runs every numbered verification check and prints one
//! pass/fail line per check. Run with `--nocapture` to see the lines as the
//! suite progresses (`cargo test --test acceptance -- --nocapture`).

use flocklab::accept::run_all;

#[test]
fn acceptance_criteria() {
    let outcomes = run_all();
    let mut failed = 0usize;
    for outcome in &outcomes {
        let tag = if outcome.passed { "PASS" } else { "FAIL" };
        println!(
            "[{tag}] criterion {:02} {} — {}",
            outcome.id, outcome.name, outcome.detail
        );
        if !outcome.passed {
            failed += 1;
        }
    }
    assert_eq!(
        failed, 0,
        "{failed} of {} acceptance criteria failed",
        outcomes.len()
    );
}
