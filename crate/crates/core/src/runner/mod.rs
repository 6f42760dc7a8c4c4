//! Transactional DAG execution: the transform-audit-write pattern.
//!
//! Every run plans against a branch head, executes into an ephemeral
//! `run_<id>` branch, evaluates all expectations, and only then merges
//! atomically back — a failed audit (or a crash at any point) leaves the
//! target branch bit-identical to its pre-run state. A startup sweep
//! removes ephemeral refs orphaned by dead processes.

pub mod exec;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{BranchKind, Catalog, CatalogError, CommitId};
use crate::objectstore::BlobId;
use crate::planner::{
    build_logical_plan, fuse, ingest_project, push_down_predicates, PhysicalPlan, PlanError,
    ProjectSource,
};
use crate::tables::{SnapshotId, TableError, TableSnapshot};
use crate::util::{canonical_json, epoch_seconds, pid_alive, FileLock};
use crate::workspace::Workspace;

pub use exec::{
    execute_physical, CollectSink, ExecOutcome, NodeRecord, NodeStatus, RunOptions, RunSink,
};

/// Env var for crash-test hooks: when set to `unit_<i>`, `pre_merge` or
/// `post_merge`, the process exits hard at that point.
pub const KILL_AT_ENV: &str = "BPLN_TEST_KILL_AT";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("unknown run id {0}")]
    UnknownRun(u64),
    #[error("unknown selector node '{0}'")]
    UnknownSelectorNode(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Store(#[from] crate::objectstore::StoreError),
    #[error("runner i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("internal: {0}")]
    Internal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Succeeded,
    FailedExpectation,
    FailedError,
    Aborted,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Succeeded => "succeeded",
            RunStatus::FailedExpectation => "failed_expectation",
            RunStatus::FailedError => "failed_error",
            RunStatus::Aborted => "aborted",
        }
    }
}

/// Complete audit record of one run: the snapshotted code, the pinned
/// input, per-node outcomes, and what (if anything) was merged.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: u64,
    pub fingerprint: String,
    pub files: BTreeMap<String, BlobId>,
    pub input_branch: String,
    pub input_commit: CommitId,
    pub ephemeral_branch: String,
    pub output_branch: String,
    pub status: RunStatus,
    pub nodes: BTreeMap<String, NodeRecord>,
    pub created_at: i64,
    pub wall_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub merge_commit: Option<CommitId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_expectations: Vec<String>,
    pub contains_external: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub original_run_id: Option<u64>,
    pub options: RunOptions,
    pub spill_blobs: u64,
}

/// One line of `runs/registry.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: u64,
    pub status: RunStatus,
    pub branch: String,
    pub input_commit: Option<CommitId>,
    pub manifest_blob: Option<BlobId>,
    pub created_at: i64,
    pub n_nodes: usize,
    pub wall_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub original_run_id: Option<u64>,
    pub contains_external: bool,
}

/// Append-only run registry plus the monotonic id counter, both guarded by
/// one advisory lock.
#[derive(Debug, Clone)]
pub struct RunRegistry {
    runs_dir: PathBuf,
}

impl RunRegistry {
    pub fn new(ws: &Workspace) -> RunRegistry {
        RunRegistry {
            runs_dir: ws.runs_dir(),
        }
    }

    fn lock(&self) -> Result<FileLock, RunError> {
        Ok(FileLock::acquire(&self.runs_dir.join(".lock"))?)
    }

    fn registry_path(&self) -> PathBuf {
        self.runs_dir.join("registry.jsonl")
    }

    /// Allocate the next run id (strictly increasing, persisted).
    pub fn next_run_id(&self) -> Result<u64, RunError> {
        let _lock = self.lock()?;
        let counter_path = self.runs_dir.join("counter");
        let current: u64 = fs::read_to_string(&counter_path)
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .unwrap_or(0);
        let next = current + 1;
        fs::write(&counter_path, next.to_string())?;
        Ok(next)
    }

    pub fn append(&self, summary: &RunSummary) -> Result<(), RunError> {
        let _lock = self.lock()?;
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.registry_path())?;
        let mut line = serde_json::to_vec(summary)?;
        line.push(b'\n');
        file.write_all(&line)?;
        Ok(())
    }

    pub fn entries(&self) -> Result<Vec<RunSummary>, RunError> {
        let text = match fs::read_to_string(self.registry_path()) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut out = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(line)?);
        }
        Ok(out)
    }

    pub fn find(&self, run_id: u64) -> Result<Option<RunSummary>, RunError> {
        Ok(self
            .entries()?
            .into_iter()
            .rev()
            .find(|s| s.run_id == run_id))
    }

    fn pid_path(&self, run_id: u64) -> PathBuf {
        self.runs_dir.join("active").join(format!("{run_id}.pid"))
    }

    fn write_pid(&self, run_id: u64) -> Result<(), RunError> {
        let path = self.pid_path(run_id);
        fs::create_dir_all(path.parent().expect("pid dir"))?;
        fs::write(path, std::process::id().to_string())?;
        Ok(())
    }

    fn clear_pid(&self, run_id: u64) {
        let _ = fs::remove_file(self.pid_path(run_id));
    }

    fn pid_is_live(&self, run_id: u64) -> bool {
        fs::read_to_string(self.pid_path(run_id))
            .ok()
            .and_then(|s| s.trim().parse::<u32>().ok())
            .map(pid_alive)
            .unwrap_or(false)
    }
}

/// Crash-test hook: exit hard when `BPLN_TEST_KILL_AT` names this point.
fn kill_point(label: &str) {
    if std::env::var(KILL_AT_ENV).as_deref() == Ok(label) {
        std::process::exit(137);
    }
}

/// Read the Git context: `ref: refs/heads/<name>` in `.git/HEAD` maps to
/// `<name>`; anything else (no repo, detached head, malformed file) falls
/// back to `main`, with a warning for the malformed cases.
pub fn detect_branch_context(dir: &Path) -> (String, Option<String>) {
    let head_path = dir.join(".git").join("HEAD");
    let content = match fs::read_to_string(&head_path) {
        Ok(c) => c,
        Err(_) => return ("main".to_string(), None),
    };
    let trimmed = content.trim();
    if let Some(name) = trimmed.strip_prefix("ref: refs/heads/") {
        if !name.is_empty() {
            return (name.to_string(), None);
        }
    }
    (
        "main".to_string(),
        Some(format!(
            "unrecognized Git HEAD {trimmed:?} (detached?); using branch 'main'"
        )),
    )
}

/// `<name>` selects one node, `<name>+` the node and its descendants,
/// `+<name>` its ancestors and the node.
pub fn resolve_selector(
    plan: &PhysicalPlan,
    selector: &str,
) -> Result<std::collections::BTreeSet<String>, RunError> {
    let (name, with_descendants, with_ancestors) =
        if let Some(stripped) = selector.strip_suffix('+') {
            (stripped, true, false)
        } else if let Some(stripped) = selector.strip_prefix('+') {
            (stripped, false, true)
        } else {
            (selector, false, false)
        };
    if !plan.logical.nodes.contains_key(name) {
        return Err(RunError::UnknownSelectorNode(name.to_string()));
    }
    let mut set = std::collections::BTreeSet::from([name.to_string()]);
    if with_descendants {
        set.extend(plan.logical.descendants(name));
    }
    if with_ancestors {
        set.extend(plan.logical.ancestors(name));
    }
    Ok(set)
}

/// Commits each materialized snapshot to the ephemeral branch, retrying
/// the CAS when parallel units interleave.
struct CommitSink {
    catalog: Catalog,
    branch: String,
}

impl RunSink for CommitSink {
    fn on_materialized(&self, name: &str, snapshot: &TableSnapshot) -> Result<(), RunError> {
        loop {
            let head = self.catalog.head(&self.branch)?;
            let state = self
                .catalog
                .resolve(head.as_str())?
                .with_table(name, snapshot.id.clone());
            match self
                .catalog
                .commit(&self.branch, state, &format!("materialize {name}"), &head)
            {
                Ok(_) => return Ok(()),
                Err(CatalogError::StaleHead { .. }) => continue,
                Err(e) => return Err(e.into()),
            }
        }
    }

    fn after_unit(&self, unit_index: usize) -> Result<(), RunError> {
        kill_point(&format!("unit_{unit_index}"));
        Ok(())
    }
}

pub struct PlannedRun {
    pub project: ProjectSource,
    pub physical: PhysicalPlan,
    pub input_commit: CommitId,
    pub input_branch: String,
}

/// Ingest and plan against the current head of `branch` (creating the
/// branch from `main` when absent). Fails fast with a `PlanError` before
/// any branch or run id is created.
pub fn plan_run(
    ws: &Workspace,
    project_root: &Path,
    branch: &str,
    opts: &RunOptions,
) -> Result<PlannedRun, RunError> {
    let catalog = ws.catalog();
    if !catalog.branch_exists(branch) {
        catalog.create_branch(branch, "main", BranchKind::Persistent)?;
    }
    let input_commit = catalog.head(branch)?;
    let input_state = catalog.resolve(input_commit.as_str())?;
    let project = ingest_project(project_root, &input_commit, ws.tables())?;
    let mut logical = build_logical_plan(&project, &input_state, ws.tables())?;
    if opts.pushdown {
        logical = push_down_predicates(&logical);
    }
    let physical = fuse(&logical, opts.budget_bytes, opts.inflation)?;
    Ok(PlannedRun {
        project,
        physical,
        input_commit,
        input_branch: branch.to_string(),
    })
}

fn contains_external(project: &ProjectSource) -> bool {
    project.expectations.values().any(|e| {
        matches!(
            e.spec.body,
            crate::engine::check::CheckBody::External(_)
        )
    })
}

/// Execute a planned run through the transform-audit-write cycle and
/// record its manifest. Expectation failures and node errors come back as
/// manifest statuses, not `Err`; `Err` is reserved for infrastructure
/// faults.
fn execute_run(
    ws: &Workspace,
    planned: PlannedRun,
    run_id: u64,
    selection: Option<&std::collections::BTreeSet<String>>,
    seeds: &BTreeMap<String, SnapshotId>,
    output_branch: &str,
    original_run_id: Option<u64>,
    mut opts: RunOptions,
) -> Result<RunManifest, RunError> {
    let catalog = ws.catalog();
    let registry = RunRegistry::new(ws);
    let created_at = epoch_seconds();
    let started = Instant::now();
    let ephemeral = format!("run_{run_id}");

    if opts.fn_workdir.is_none() {
        opts.fn_workdir = Some(planned.project.root.clone());
    }

    // The pid file must exist before the ephemeral ref does, or a
    // concurrent sweep could reap a live run.
    registry.write_pid(run_id)?;
    catalog.create_branch(&ephemeral, planned.input_commit.as_str(), BranchKind::Ephemeral)?;

    let input_state = catalog.resolve(planned.input_commit.as_str())?;
    let sink = CommitSink {
        catalog: catalog.clone(),
        branch: ephemeral.clone(),
    };

    let result = execute_physical(
        &planned.physical,
        ws.tables(),
        &input_state,
        &opts,
        selection,
        seeds,
        &sink,
    );

    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            // Infrastructure fault: discard the ephemeral branch and bail.
            let _ = catalog.delete_branch(&ephemeral);
            registry.clear_pid(run_id);
            return Err(e);
        }
    };

    let (status, merge_commit, error) = if let Some((node, cause)) = &outcome.error {
        let _ = catalog.delete_branch(&ephemeral);
        (
            RunStatus::FailedError,
            None,
            Some(format!("node '{node}': {cause}")),
        )
    } else if !outcome.failed_expectations.is_empty() {
        let _ = catalog.delete_branch(&ephemeral);
        (RunStatus::FailedExpectation, None, None)
    } else {
        kill_point("pre_merge");
        if !catalog.branch_exists(output_branch) {
            catalog.create_branch(output_branch, planned.input_commit.as_str(), BranchKind::Persistent)?;
        }
        match catalog.merge(&ephemeral, output_branch) {
            Ok(commit) => {
                kill_point("post_merge");
                catalog.delete_branch(&ephemeral)?;
                (RunStatus::Succeeded, Some(commit), None)
            }
            Err(CatalogError::Conflict(tables)) => {
                let _ = catalog.delete_branch(&ephemeral);
                (
                    RunStatus::FailedError,
                    None,
                    Some(format!(
                        "merge conflict with concurrent writer on: {}",
                        tables.join(", ")
                    )),
                )
            }
            Err(e) => {
                let _ = catalog.delete_branch(&ephemeral);
                registry.clear_pid(run_id);
                return Err(e.into());
            }
        }
    };

    let manifest = RunManifest {
        run_id,
        fingerprint: planned.project.fingerprint.clone(),
        files: planned.project.files.clone(),
        input_branch: planned.input_branch.clone(),
        input_commit: planned.input_commit.clone(),
        ephemeral_branch: ephemeral,
        output_branch: output_branch.to_string(),
        status,
        nodes: outcome.node_records,
        created_at,
        wall_ms: started.elapsed().as_millis() as u64,
        merge_commit,
        error,
        failed_expectations: outcome.failed_expectations,
        contains_external: contains_external(&planned.project),
        original_run_id,
        options: opts,
        spill_blobs: outcome.spill_blobs,
    };
    let manifest_blob = ws.objects().put(&canonical_json(&manifest)?)?;
    registry.append(&RunSummary {
        run_id,
        status: manifest.status,
        branch: manifest.output_branch.clone(),
        input_commit: Some(manifest.input_commit.clone()),
        manifest_blob: Some(manifest_blob),
        created_at,
        n_nodes: manifest.nodes.len(),
        wall_ms: manifest.wall_ms,
        original_run_id,
        contains_external: manifest.contains_external,
    })?;
    registry.clear_pid(run_id);
    Ok(manifest)
}

/// Run a project on a branch: ingest, plan, execute into an ephemeral
/// branch, audit, merge on success.
pub fn run(
    ws: &Workspace,
    project_root: &Path,
    branch: &str,
    opts: RunOptions,
) -> Result<RunManifest, RunError> {
    let planned = plan_run(ws, project_root, branch, &opts)?;
    let registry = RunRegistry::new(ws);
    let run_id = registry.next_run_id()?;
    let output_branch = planned.input_branch.clone();
    execute_run(
        ws,
        planned,
        run_id,
        None,
        &BTreeMap::new(),
        &output_branch,
        None,
        opts,
    )
}

/// Re-execute a recorded run: same snapshotted code, same input commit. A
/// selector narrows the subgraph; inputs produced outside the selection
/// come from the original run's snapshots. Results merge into a fresh
/// `replay_<run_id>_<new_id>` branch, never the original.
pub fn replay(
    ws: &Workspace,
    run_id: u64,
    selector: Option<&str>,
) -> Result<RunManifest, RunError> {
    let registry = RunRegistry::new(ws);
    let summary = registry.find(run_id)?.ok_or(RunError::UnknownRun(run_id))?;
    let manifest_blob = summary
        .manifest_blob
        .ok_or_else(|| RunError::Internal(format!("run {run_id} left no manifest")))?;
    let original: RunManifest = serde_json::from_slice(&ws.objects().get(&manifest_blob)?)?;

    // Restore the snapshotted project tree.
    let restore_root = tempfile::tempdir_in(ws.runs_dir())?;
    for (rel, blob) in &original.files {
        let path = restore_root.path().join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, ws.objects().get(blob)?)?;
    }

    let input_state = ws.catalog().resolve(original.input_commit.as_str())?;
    let project = ingest_project(restore_root.path(), &original.input_commit, ws.tables())?;
    if project.fingerprint != original.fingerprint {
        return Err(RunError::Internal(
            "restored project fingerprint differs from the recorded one".into(),
        ));
    }
    let mut opts = original.options.clone();
    opts.fn_workdir = Some(restore_root.path().to_path_buf());
    let mut logical = build_logical_plan(&project, &input_state, ws.tables())?;
    if opts.pushdown {
        logical = push_down_predicates(&logical);
    }
    let physical = fuse(&logical, opts.budget_bytes, opts.inflation)?;

    let selection = match selector {
        Some(s) => Some(resolve_selector(&physical, s)?),
        None => None,
    };
    let seeds: BTreeMap<String, SnapshotId> = original
        .nodes
        .iter()
        .filter_map(|(name, rec)| rec.output_snapshot.clone().map(|s| (name.clone(), s)))
        .collect();

    let new_id = registry.next_run_id()?;
    let replay_branch = format!("replay_{run_id}_{new_id}");
    let planned = PlannedRun {
        project,
        physical,
        input_commit: original.input_commit.clone(),
        input_branch: original.input_branch.clone(),
    };
    execute_run(
        ws,
        planned,
        new_id,
        selection.as_ref(),
        &seeds,
        &replay_branch,
        Some(run_id),
        opts,
    )
}

/// Load the full manifest of a recorded run.
pub fn load_manifest(ws: &Workspace, run_id: u64) -> Result<RunManifest, RunError> {
    let registry = RunRegistry::new(ws);
    let summary = registry.find(run_id)?.ok_or(RunError::UnknownRun(run_id))?;
    let blob = summary
        .manifest_blob
        .ok_or_else(|| RunError::Internal(format!("run {run_id} left no manifest")))?;
    Ok(serde_json::from_slice(&ws.objects().get(&blob)?)?)
}

/// Startup sweep: drop ephemeral refs whose owning process is gone, and
/// record an `aborted` registry line for runs that never reached a
/// terminal state. Returns the swept branch names.
pub fn sweep_orphans(ws: &Workspace) -> Result<Vec<String>, RunError> {
    let catalog = ws.catalog();
    let registry = RunRegistry::new(ws);
    let mut swept = Vec::new();
    for branch in catalog.list_branches()? {
        if branch.kind != BranchKind::Ephemeral {
            continue;
        }
        let run_id: Option<u64> = branch
            .name
            .strip_prefix("run_")
            .and_then(|s| s.parse().ok());
        if let Some(id) = run_id {
            if registry.pid_is_live(id) {
                continue;
            }
        }
        catalog.delete_branch(&branch.name)?;
        if let Some(id) = run_id {
            registry.clear_pid(id);
            if registry.find(id)?.is_none() {
                registry.append(&RunSummary {
                    run_id: id,
                    status: RunStatus::Aborted,
                    branch: String::new(),
                    input_commit: None,
                    manifest_blob: None,
                    created_at: epoch_seconds(),
                    n_nodes: 0,
                    wall_ms: 0,
                    original_run_id: None,
                    contains_external: false,
                })?;
            }
        }
        swept.push(branch.name);
    }
    Ok(swept)
}
