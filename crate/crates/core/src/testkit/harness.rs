//! Shared harness for the plan-equivalence suites: execute a generated
//! project under the naive plan (no pushdown, one unit per node) and the
//! optimized plan (pushdown + fusion) against the same input commit, then
//! compare everything observable.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::planner::{build_logical_plan, fuse, ingest_project, push_down_predicates};
use crate::runner::{execute_physical, CollectSink, ExecOutcome, RunOptions};
use crate::workspace::Workspace;

use super::gen::GenProject;

pub struct CaseResult {
    pub naive: ExecOutcome,
    pub optimized: ExecOutcome,
}

/// Seed a fresh workspace from the generated project and run it both ways.
pub fn run_both_ways(gp: &GenProject, dir: &Path) -> CaseResult {
    let ws = Workspace::open(dir.join("ws")).expect("workspace opens");
    for (name, rel) in &gp.base_tables {
        ws.commit_table("main", name, rel, &format!("seed {name}"))
            .expect("seed commits");
    }
    let proj = dir.join("project");
    fs::create_dir_all(&proj).expect("project dir");
    for (file, content) in &gp.files {
        fs::write(proj.join(file), content).expect("project file");
    }

    let input_commit = ws.catalog().head("main").expect("main exists");
    let state = ws
        .catalog()
        .resolve(input_commit.as_str())
        .expect("state resolves");
    let project = ingest_project(&proj, &input_commit, ws.tables()).expect("ingest");
    let logical = build_logical_plan(&project, &state, ws.tables()).expect("logical plan");

    let opts = RunOptions {
        worker_cap: 2,
        ..RunOptions::default()
    };
    let naive_plan = fuse(&logical, 0, opts.inflation).expect("naive fuse");
    let naive = execute_physical(
        &naive_plan,
        ws.tables(),
        &state,
        &opts,
        None,
        &BTreeMap::new(),
        &CollectSink,
    )
    .expect("naive execution");

    let optimized_logical = push_down_predicates(&logical);
    let optimized_plan =
        fuse(&optimized_logical, opts.budget_bytes, opts.inflation).expect("optimized fuse");
    let optimized = execute_physical(
        &optimized_plan,
        ws.tables(),
        &state,
        &opts,
        None,
        &BTreeMap::new(),
        &CollectSink,
    )
    .expect("optimized execution");

    CaseResult { naive, optimized }
}

/// Panics unless the two outcomes are bit-identical where it matters and
/// the optimized plan scanned no more rows.
pub fn assert_equivalent(case: usize, result: &CaseResult) {
    let CaseResult { naive, optimized } = result;
    assert!(
        naive.error.is_none() && optimized.error.is_none(),
        "case {case}: unexpected node error: {:?} / {:?}",
        naive.error,
        optimized.error
    );
    // Snapshot ids are content hashes over schema, data files and lineage:
    // equal ids mean bit-identical materialized tables.
    let tables = |o: &ExecOutcome| -> BTreeMap<String, String> {
        o.outputs
            .iter()
            .map(|(k, v)| (k.clone(), v.id.to_string()))
            .collect()
    };
    assert_eq!(
        tables(naive),
        tables(optimized),
        "case {case}: materialized tables differ"
    );
    let verdicts = |o: &ExecOutcome| -> BTreeMap<String, bool> {
        o.node_records
            .iter()
            .filter_map(|(k, r)| r.verdict.map(|v| (k.clone(), v)))
            .collect()
    };
    assert_eq!(
        verdicts(naive),
        verdicts(optimized),
        "case {case}: expectation verdicts differ"
    );
    assert!(
        optimized.rows_scanned_total() <= naive.rows_scanned_total(),
        "case {case}: optimized plan scanned more rows ({} > {})",
        optimized.rows_scanned_total(),
        naive.rows_scanned_total()
    );
}
