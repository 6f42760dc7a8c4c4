//! Transform-audit-write lifecycle: success merges, failed audits roll
//! back, replays are sandboxed and deterministic, and the orphan sweep
//! cleans up dead ephemerals.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use bpln_core::catalog::BranchKind;
use bpln_core::demo::taxi_relation;
use bpln_core::runner::{
    self, detect_branch_context, NodeStatus, RunOptions, RunRegistry, RunStatus,
};
use bpln_core::tables::Value;
use bpln_core::workspace::Workspace;

const TRIPS_SQL: &str = "SELECT pickup_location_id, passenger_count AS count, dropoff_location_id FROM taxi_table WHERE pickup_at >= '2019-04-01'";
const PICKUPS_SQL: &str = "SELECT pickup_location_id, dropoff_location_id, COUNT(*) AS counts FROM trips GROUP BY pickup_location_id, dropoff_location_id ORDER BY counts DESC";

fn write_appendix_project(dir: &Path, check: &str) {
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join("trips.sql"), TRIPS_SQL).unwrap();
    fs::write(dir.join("pickups.sql"), PICKUPS_SQL).unwrap();
    fs::write(dir.join("trips_expectation.check"), check).unwrap();
}

fn seeded_workspace(dir: &Path, rows: usize) -> Workspace {
    let ws = Workspace::open(dir.join("ws")).unwrap();
    ws.commit_table("main", "taxi_table", &taxi_relation(rows, 42), "seed taxi data")
        .unwrap();
    ws
}

#[test]
fn successful_run_merges_artifacts_into_the_branch() {
    let dir = tempfile::tempdir().unwrap();
    let ws = seeded_workspace(dir.path(), 500);
    let proj = dir.path().join("proj");
    write_appendix_project(&proj, "mean(count) > 10\n");

    let manifest = runner::run(&ws, &proj, "feat_1", RunOptions::default()).unwrap();
    assert_eq!(manifest.status, RunStatus::Succeeded);
    assert!(manifest.merge_commit.is_some());
    assert_eq!(manifest.nodes["trips_expectation"].verdict, Some(true));

    let state = ws.catalog().resolve("feat_1").unwrap();
    assert!(state.tables.contains_key("trips"));
    assert!(state.tables.contains_key("pickups"));
    // the ephemeral branch is gone, its commits remain reachable
    assert!(!ws.catalog().branch_exists(&manifest.ephemeral_branch));

    // pickups content matches a brute-force count over the filtered fixture
    let pickups = ws
        .tables()
        .load_snapshot(&state.tables["pickups"])
        .unwrap();
    let rel = ws.tables().read_all(&pickups).unwrap();
    let taxi = taxi_relation(500, 42);
    let mut expected: BTreeMap<(i64, i64), i64> = BTreeMap::new();
    for row in taxi.rows() {
        let (ts, pickup, dropoff) = match (&row[0], &row[1], &row[2]) {
            (Value::Str(ts), Value::Int(p), Value::Int(d)) => (ts.clone(), *p, *d),
            other => panic!("unexpected fixture row {other:?}"),
        };
        if ts.as_str() >= "2019-04-01" {
            *expected.entry((pickup, dropoff)).or_default() += 1;
        }
    }
    assert_eq!(rel.row_count(), expected.len());
    let mut last_count = i64::MAX;
    for row in rel.rows() {
        let (p, d, c) = match (&row[0], &row[1], &row[2]) {
            (Value::Int(p), Value::Int(d), Value::Int(c)) => (*p, *d, *c),
            other => panic!("unexpected pickups row {other:?}"),
        };
        assert_eq!(expected[&(p, d)], c);
        assert!(c <= last_count, "counts must be non-increasing");
        last_count = c;
    }
}

#[test]
fn failed_expectation_leaves_the_branch_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let ws = seeded_workspace(dir.path(), 200);
    let proj = dir.path().join("proj");
    write_appendix_project(&proj, "mean(count) > 1000\n");

    ws.catalog()
        .create_branch("feat_1", "main", BranchKind::Persistent)
        .unwrap();
    let before = ws.catalog().head("feat_1").unwrap();

    let manifest = runner::run(&ws, &proj, "feat_1", RunOptions::default()).unwrap();
    assert_eq!(manifest.status, RunStatus::FailedExpectation);
    assert_eq!(manifest.failed_expectations, vec!["trips_expectation"]);
    assert_eq!(ws.catalog().head("feat_1").unwrap(), before);
    assert!(!ws.catalog().branch_exists(&manifest.ephemeral_branch));
    // audit completeness: every node has a record, timings included
    assert_eq!(manifest.nodes.len(), 4);
    assert!(manifest
        .nodes
        .values()
        .all(|r| r.status == NodeStatus::Succeeded));
}

#[test]
fn plan_errors_fail_fast_without_creating_anything() {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::open(dir.path().join("ws")).unwrap();
    let proj = dir.path().join("proj");
    fs::create_dir_all(&proj).unwrap();
    fs::write(proj.join("m.sql"), "SELECT x FROM missing_table").unwrap();

    let err = runner::run(&ws, &proj, "feat_1", RunOptions::default()).unwrap_err();
    assert!(matches!(err, runner::RunError::Plan(_)));
    let registry = RunRegistry::new(&ws);
    assert!(registry.entries().unwrap().is_empty());
    let branches = ws.catalog().list_branches().unwrap();
    // feat_1 is created before planning (it is the input context), but no
    // ephemeral branch ever appears and no run id is burned
    assert!(branches.iter().all(|b| b.kind == BranchKind::Persistent));
}

#[test]
fn execution_errors_roll_back_and_record_the_cause() {
    let dir = tempfile::tempdir().unwrap();
    let ws = seeded_workspace(dir.path(), 50);
    let proj = dir.path().join("proj");
    fs::create_dir_all(&proj).unwrap();
    // Type-checks (division is FLOAT64) but dies on the first row.
    fs::write(
        proj.join("boom.sql"),
        "SELECT passenger_count / 0 AS x FROM taxi_table",
    )
    .unwrap();

    let before = ws.catalog().head("main").unwrap();
    let manifest = runner::run(&ws, &proj, "main", RunOptions::default()).unwrap();
    assert_eq!(manifest.status, RunStatus::FailedError);
    let error = manifest.error.unwrap();
    assert!(error.contains("boom"), "error names the node: {error}");
    assert!(error.contains("division by zero"), "error carries the cause: {error}");
    assert_eq!(ws.catalog().head("main").unwrap(), before);
    assert!(!ws.catalog().branch_exists(&manifest.ephemeral_branch));
}

#[test]
fn replay_reproduces_the_run_bit_for_bit_on_a_new_branch() {
    let dir = tempfile::tempdir().unwrap();
    let ws = seeded_workspace(dir.path(), 300);
    let proj = dir.path().join("proj");
    write_appendix_project(&proj, "mean(count) > 10\n");

    let original = runner::run(&ws, &proj, "feat_1", RunOptions::default()).unwrap();
    assert_eq!(original.status, RunStatus::Succeeded);

    // Mutate the project after the run; replay must use the snapshot.
    fs::write(proj.join("trips.sql"), "SELECT pickup_at FROM taxi_table").unwrap();

    let replayed = runner::replay(&ws, original.run_id, None).unwrap();
    assert_eq!(replayed.status, RunStatus::Succeeded);
    assert_eq!(replayed.original_run_id, Some(original.run_id));
    assert_eq!(replayed.fingerprint, original.fingerprint);

    let replay_branch = format!("replay_{}_{}", original.run_id, replayed.run_id);
    assert_eq!(replayed.output_branch, replay_branch);
    let replay_state = ws.catalog().resolve(&replay_branch).unwrap();
    let original_state = ws.catalog().resolve("feat_1").unwrap();
    for table in ["trips", "pickups"] {
        let a = ws
            .tables()
            .load_snapshot(&original_state.tables[table])
            .unwrap();
        let b = ws
            .tables()
            .load_snapshot(&replay_state.tables[table])
            .unwrap();
        let files_a: Vec<_> = a.data_files.iter().map(|f| &f.blob).collect();
        let files_b: Vec<_> = b.data_files.iter().map(|f| &f.blob).collect();
        assert_eq!(files_a, files_b, "{table}: content hashes must match");
    }
    // the original branch did not move
    assert!(original.merge_commit.is_some());
    assert_eq!(
        ws.catalog().head("feat_1").unwrap(),
        original.merge_commit.unwrap()
    );
}

#[test]
fn replay_with_selector_runs_only_the_subtree() {
    let dir = tempfile::tempdir().unwrap();
    let ws = seeded_workspace(dir.path(), 300);
    let proj = dir.path().join("proj");
    write_appendix_project(&proj, "mean(count) > 10\n");

    let original = runner::run(&ws, &proj, "feat_1", RunOptions::default()).unwrap();
    let replayed = runner::replay(&ws, original.run_id, Some("pickups+")).unwrap();
    assert_eq!(replayed.status, RunStatus::Succeeded);
    assert_eq!(replayed.nodes["pickups"].status, NodeStatus::Succeeded);
    assert_eq!(replayed.nodes["trips"].status, NodeStatus::Skipped);
    assert_eq!(replayed.nodes["taxi_table"].status, NodeStatus::Skipped);
    assert_eq!(
        replayed.nodes["trips_expectation"].status,
        NodeStatus::Skipped
    );

    // pickups fed from the original run's trips snapshot: same content
    let replay_state = ws
        .catalog()
        .resolve(&replayed.output_branch)
        .unwrap();
    let feat_state = ws.catalog().resolve("feat_1").unwrap();
    assert_eq!(
        ws.tables()
            .load_snapshot(&replay_state.tables["pickups"])
            .unwrap()
            .data_files,
        ws.tables()
            .load_snapshot(&feat_state.tables["pickups"])
            .unwrap()
            .data_files,
    );
    assert!(!replay_state.tables.contains_key("trips"));

    let err = runner::replay(&ws, original.run_id, Some("ghost+")).unwrap_err();
    assert!(matches!(err, runner::RunError::UnknownSelectorNode(_)));
    let err = runner::replay(&ws, 9999, None).unwrap_err();
    assert!(matches!(err, runner::RunError::UnknownRun(9999)));
}

#[test]
fn ancestor_selector_reexecutes_upstream_nodes() {
    let dir = tempfile::tempdir().unwrap();
    let ws = seeded_workspace(dir.path(), 100);
    let proj = dir.path().join("proj");
    write_appendix_project(&proj, "mean(count) > 10\n");

    let original = runner::run(&ws, &proj, "feat_1", RunOptions::default()).unwrap();
    let replayed = runner::replay(&ws, original.run_id, Some("+pickups")).unwrap();
    assert_eq!(replayed.nodes["pickups"].status, NodeStatus::Succeeded);
    assert_eq!(replayed.nodes["trips"].status, NodeStatus::Succeeded);
    assert_eq!(replayed.nodes["taxi_table"].status, NodeStatus::Succeeded);
    assert_eq!(
        replayed.nodes["trips_expectation"].status,
        NodeStatus::Skipped
    );
}

#[test]
fn orphan_sweep_removes_dead_ephemerals_and_records_aborts() {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::open(dir.path().join("ws")).unwrap();
    // a crashed run's leftovers: ephemeral ref without a live pid
    ws.catalog()
        .create_branch("run_7", "main", BranchKind::Ephemeral)
        .unwrap();

    let swept = runner::sweep_orphans(&ws).unwrap();
    assert_eq!(swept, vec!["run_7"]);
    assert!(!ws.catalog().branch_exists("run_7"));
    let registry = RunRegistry::new(&ws);
    let aborted = registry.find(7).unwrap().unwrap();
    assert_eq!(aborted.status, RunStatus::Aborted);

    // sweeping again is a no-op and does not duplicate the record
    assert!(runner::sweep_orphans(&ws).unwrap().is_empty());
    assert_eq!(
        registry
            .entries()
            .unwrap()
            .iter()
            .filter(|s| s.run_id == 7)
            .count(),
        1
    );
}

#[test]
fn run_ids_increase_across_runs_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let ws = seeded_workspace(dir.path(), 50);
    let proj = dir.path().join("proj");
    write_appendix_project(&proj, "count() >= 0\n");

    let a = runner::run(&ws, &proj, "b1", RunOptions::default()).unwrap();
    let b = runner::run(&ws, &proj, "b2", RunOptions::default()).unwrap();
    let c = runner::replay(&ws, a.run_id, None).unwrap();
    assert!(a.run_id < b.run_id && b.run_id < c.run_id);
}

#[test]
fn branch_context_detection_reads_git_head() {
    let dir = tempfile::tempdir().unwrap();
    // no .git at all
    assert_eq!(detect_branch_context(dir.path()), ("main".into(), None));

    let git = dir.path().join(".git");
    fs::create_dir_all(&git).unwrap();
    fs::write(git.join("HEAD"), "ref: refs/heads/feat_1\n").unwrap();
    assert_eq!(detect_branch_context(dir.path()), ("feat_1".into(), None));

    // detached head -> main, with a warning
    fs::write(git.join("HEAD"), "a94a8fe5ccb19ba61c4c0873d391e987982fbbd3\n").unwrap();
    let (branch, warning) = detect_branch_context(dir.path());
    assert_eq!(branch, "main");
    assert!(warning.is_some());
}

#[test]
fn external_expectation_gates_the_merge() {
    let dir = tempfile::tempdir().unwrap();
    let ws = seeded_workspace(dir.path(), 50);
    let proj = dir.path().join("proj");
    write_appendix_project(&proj, "count() >= 0\n");
    // add an external expectation on pickups that consults the wire files
    fs::write(
        proj.join("pickups_expectation.fn.json"),
        serde_json::json!({
            "command": ["sh", "-c",
                "test -f \"$BPLN_INPUT_PICKUPS\" && test -f \"$BPLN_INPUT_PICKUPS.schema.json\" && echo '{\"pass\": true}'"],
            "requirements": {"pandas": "2.0.0"}
        })
        .to_string(),
    )
    .unwrap();

    let manifest = runner::run(&ws, &proj, "feat_1", RunOptions::default()).unwrap();
    assert_eq!(manifest.status, RunStatus::Succeeded);
    assert!(manifest.contains_external);
    assert_eq!(manifest.nodes["pickups_expectation"].verdict, Some(true));

    // now a failing external verdict
    fs::write(
        proj.join("pickups_expectation.fn.json"),
        serde_json::json!({"command": ["sh", "-c", "echo '{\"pass\": false}'"]}).to_string(),
    )
    .unwrap();
    let before = ws.catalog().head("feat_1").unwrap();
    let manifest = runner::run(&ws, &proj, "feat_1", RunOptions::default()).unwrap();
    assert_eq!(manifest.status, RunStatus::FailedExpectation);
    assert_eq!(ws.catalog().head("feat_1").unwrap(), before);
}
