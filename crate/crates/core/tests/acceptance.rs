use std::io::Write;

use etcsim::acceptance::run_all;

#[test]
fn acceptance_criteria() {
    let outcomes = run_all();
    // Written to the process stdout directly so the lines survive output capture.
    let mut out = std::io::stdout().lock();
    for o in &outcomes {
        writeln!(out, "{o}").unwrap();
    }
    let failed: Vec<u32> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
