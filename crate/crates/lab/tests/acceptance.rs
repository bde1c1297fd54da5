//! Runs the suite of `configs/acceptance.json` and evaluates the acceptance
//! criteria, one PASS/FAIL line each. Reports land in
//! `target/acceptance` (or `CZLAB_OUTPUT_DIR`).

use std::path::PathBuf;
use std::time::Instant;

use czlab::acceptance::{completeness, evaluate};
use czlab::config::ConfigFile;
use czlab::output::write_outputs;
use czlab::runner::execute_suite;

fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

#[test]
fn acceptance_criteria() {
    let root = workspace_root().canonicalize().expect("workspace root exists");
    let suite = ConfigFile::load(&root.join("configs/acceptance.json")).expect("acceptance config loads");
    let start = Instant::now();
    let outcomes = execute_suite(&suite, None, None).expect("suite runs");
    let elapsed = start.elapsed();
    let out = std::env::var_os("CZLAB_OUTPUT_DIR").map_or_else(|| root.join("target/acceptance"), PathBuf::from);
    write_outputs(&out, &outcomes).expect("reports are written");

    let mut criteria = evaluate(&outcomes);
    criteria.push(completeness(&outcomes));
    for c in &criteria {
        println!("{c}");
    }
    println!("suite: {} runs in {:.1}s, reports in {}", outcomes.len(), elapsed.as_secs_f64(), out.display());
    let failed: Vec<_> = criteria.iter().filter(|c| !c.pass).map(|c| c.index).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
