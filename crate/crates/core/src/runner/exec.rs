//! Physical plan execution: units run over in-memory intermediates,
//! materialize model outputs as table snapshots through a sink, and spill
//! non-materialized outputs to the object store only at unit boundaries.
//!
//! Units with no dependency edge between them execute in parallel waves up
//! to a worker cap; all synchronization funnels through a single shared
//! mutex plus the catalog's own CAS.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::catalog::CatalogState;
use crate::engine::check::CheckBody;
use crate::engine::external::{invoke_external_function, FunctionMode, FunctionOutcome, InvokeOptions, DEFAULT_TIMEOUT_SECS};
use crate::engine::{check, execute, EngineError};
use crate::objectstore::BlobId;
use crate::planner::{NodeKind, PhysicalPlan};
use crate::tables::{codec, Relation, SnapshotId, TableSnapshot, TableStore};

use super::RunError;

pub const BUDGET_ENV: &str = "BPLN_BUDGET_BYTES";
pub const FN_TIMEOUT_ENV: &str = "BPLN_FN_TIMEOUT_S";

pub const DEFAULT_BUDGET_BYTES: u64 = 256 << 20;
pub const DEFAULT_INFLATION: f64 = 3.0;

/// Knobs for planning and executing one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOptions {
    pub budget_bytes: u64,
    pub inflation: f64,
    pub pushdown: bool,
    pub fn_timeout_secs: u64,
    pub worker_cap: usize,
    #[serde(skip)]
    pub fn_workdir: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            budget_bytes: DEFAULT_BUDGET_BYTES,
            inflation: DEFAULT_INFLATION,
            pushdown: true,
            fn_timeout_secs: DEFAULT_TIMEOUT_SECS,
            worker_cap: std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1),
            fn_workdir: None,
        }
    }
}

impl RunOptions {
    /// Defaults with `BPLN_BUDGET_BYTES` and `BPLN_FN_TIMEOUT_S` applied.
    pub fn from_env() -> RunOptions {
        let mut opts = RunOptions::default();
        if let Some(v) = std::env::var(BUDGET_ENV).ok().and_then(|v| v.parse().ok()) {
            opts.budget_bytes = v;
        }
        if let Some(v) = std::env::var(FN_TIMEOUT_ENV).ok().and_then(|v| v.parse().ok()) {
            opts.fn_timeout_secs = v;
        }
        opts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Succeeded,
    Failed,
    Skipped,
}

/// Audit record for one plan node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeRecord {
    pub status: NodeStatus,
    pub wall_ms: u64,
    pub rows_out: u64,
    pub rows_scanned: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_snapshot: Option<SnapshotId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<bool>,
}

impl NodeRecord {
    fn skipped() -> NodeRecord {
        NodeRecord {
            status: NodeStatus::Skipped,
            wall_ms: 0,
            rows_out: 0,
            rows_scanned: 0,
            output_snapshot: None,
            verdict: None,
        }
    }
}

/// Where a run delivers materialized snapshots and unit-boundary events.
pub trait RunSink: Sync {
    fn on_materialized(&self, name: &str, snapshot: &TableSnapshot) -> Result<(), RunError>;
    fn after_unit(&self, _unit_index: usize) -> Result<(), RunError> {
        Ok(())
    }
}

/// Collects outputs without touching any catalog (plan-equivalence tests,
/// dry runs).
#[derive(Default)]
pub struct CollectSink;

impl RunSink for CollectSink {
    fn on_materialized(&self, _name: &str, _snapshot: &TableSnapshot) -> Result<(), RunError> {
        Ok(())
    }
}

#[derive(Debug)]
pub struct ExecOutcome {
    pub node_records: BTreeMap<String, NodeRecord>,
    pub failed_expectations: Vec<String>,
    pub outputs: BTreeMap<String, TableSnapshot>,
    /// Blobs written only to carry non-materialized node outputs across
    /// unit boundaries.
    pub spill_blobs: u64,
    /// First hard failure, if any: (node, cause).
    pub error: Option<(String, String)>,
}

impl ExecOutcome {
    pub fn rows_scanned_total(&self) -> u64 {
        self.node_records.values().map(|r| r.rows_scanned).sum()
    }
}

#[derive(Default)]
struct Shared {
    outputs: BTreeMap<String, TableSnapshot>,
    spills: BTreeMap<String, BlobId>,
    records: BTreeMap<String, NodeRecord>,
    failed_expectations: Vec<String>,
    spill_count: u64,
    error: Option<(String, String)>,
}

fn fetch_input(
    name: &str,
    local: &BTreeMap<String, Relation>,
    shared: &Mutex<Shared>,
    seeds: &BTreeMap<String, SnapshotId>,
    store: &TableStore,
) -> Result<Relation, String> {
    if let Some(rel) = local.get(name) {
        return Ok(rel.clone());
    }
    let (snapshot, spill) = {
        let guard = shared.lock().expect("executor mutex");
        (
            guard.outputs.get(name).cloned(),
            guard.spills.get(name).cloned(),
        )
    };
    if let Some(snapshot) = snapshot {
        return store.read_all(&snapshot).map_err(|e| e.to_string());
    }
    if let Some(blob) = spill {
        let bytes = store.objects().get(&blob).map_err(|e| e.to_string())?;
        return codec::decode_relation_blob(&bytes).map_err(|e| e.to_string());
    }
    if let Some(snapshot_id) = seeds.get(name) {
        let snapshot = store.load_snapshot(snapshot_id).map_err(|e| e.to_string())?;
        return store.read_all(&snapshot).map_err(|e| e.to_string());
    }
    Err(format!("input '{name}' is not available"))
}

struct UnitCtx<'a> {
    plan: &'a PhysicalPlan,
    store: &'a TableStore,
    input_state: &'a CatalogState,
    opts: &'a RunOptions,
    exec_set: &'a BTreeSet<String>,
    seeds: &'a BTreeMap<String, SnapshotId>,
    sink: &'a dyn RunSink,
    shared: &'a Mutex<Shared>,
}

fn run_unit(ctx: &UnitCtx<'_>, unit_index: usize) -> Result<(), RunError> {
    let unit = &ctx.plan.units[unit_index];
    let mut local: BTreeMap<String, Relation> = BTreeMap::new();

    for step in &unit.steps {
        if !ctx.exec_set.contains(step) {
            let mut guard = ctx.shared.lock().expect("executor mutex");
            guard.records.insert(step.clone(), NodeRecord::skipped());
            continue;
        }
        let node = &ctx.plan.logical.nodes[step];
        let started = Instant::now();
        let step_result: Result<NodeRecord, EngineError> = (|| {
            match node.kind {
                NodeKind::SourceScan => {
                    let snapshot = node
                        .snapshot
                        .as_ref()
                        .ok_or_else(|| EngineError::Internal("scan without snapshot".into()))?;
                    let projection: Vec<String> =
                        snapshot.schema.names().map(str::to_string).collect();
                    let result = ctx.store.scan(
                        snapshot,
                        &projection,
                        node.pushed_filter.as_ref(),
                    )?;
                    let record = NodeRecord {
                        status: NodeStatus::Succeeded,
                        wall_ms: started.elapsed().as_millis() as u64,
                        rows_out: result.relation.row_count() as u64,
                        rows_scanned: result.rows_scanned,
                        output_snapshot: None,
                        verdict: None,
                    };
                    local.insert(step.clone(), result.relation);
                    Ok(record)
                }
                NodeKind::SqlModel => {
                    let parent = ctx.plan.logical.parents_of(step)[0].to_string();
                    let input =
                        fetch_input(&parent, &local, ctx.shared, ctx.seeds, ctx.store)
                            .map_err(EngineError::Internal)?;
                    let rows_scanned = input.row_count() as u64;
                    let query = node.query.as_ref().expect("models carry a query");
                    let out = execute(query, &input)?;
                    // Overwrite-on-materialize: lineage chains to the
                    // table's snapshot at the run's input commit.
                    let parent_snapshot = ctx.input_state.tables.get(step).cloned();
                    let snapshot = ctx.store.write_table(&out, parent_snapshot)?;
                    ctx.sink
                        .on_materialized(step, &snapshot)
                        .map_err(|e| EngineError::Internal(e.to_string()))?;
                    let record = NodeRecord {
                        status: NodeStatus::Succeeded,
                        wall_ms: started.elapsed().as_millis() as u64,
                        rows_out: out.row_count() as u64,
                        rows_scanned,
                        output_snapshot: Some(snapshot.id.clone()),
                        verdict: None,
                    };
                    {
                        let mut guard = ctx.shared.lock().expect("executor mutex");
                        guard.outputs.insert(step.clone(), snapshot);
                    }
                    local.insert(step.clone(), out);
                    Ok(record)
                }
                NodeKind::Expectation => {
                    let parent = ctx.plan.logical.parents_of(step)[0].to_string();
                    let input =
                        fetch_input(&parent, &local, ctx.shared, ctx.seeds, ctx.store)
                            .map_err(EngineError::Internal)?;
                    let rows_scanned = input.row_count() as u64;
                    let spec = node.check.as_ref().expect("expectations carry a spec");
                    let verdict = match &spec.body {
                        CheckBody::Builtin(check_expr) => {
                            check::evaluate_builtin_check(check_expr, &input)?
                        }
                        CheckBody::External(func) => {
                            let mut inputs = BTreeMap::new();
                            inputs.insert(spec.target_table.clone(), input);
                            let invoke_opts = InvokeOptions {
                                timeout: Duration::from_secs(ctx.opts.fn_timeout_secs),
                                workdir: ctx.opts.fn_workdir.clone(),
                            };
                            match invoke_external_function(
                                func,
                                &inputs,
                                FunctionMode::Expectation,
                                &invoke_opts,
                            )? {
                                FunctionOutcome::Pass(b) => b,
                                FunctionOutcome::Table(_) => {
                                    return Err(EngineError::Protocol(
                                        "expectation returned a table".into(),
                                    ))
                                }
                            }
                        }
                    };
                    if !verdict {
                        let mut guard = ctx.shared.lock().expect("executor mutex");
                        guard.failed_expectations.push(step.clone());
                    }
                    Ok(NodeRecord {
                        status: NodeStatus::Succeeded,
                        wall_ms: started.elapsed().as_millis() as u64,
                        rows_out: 0,
                        rows_scanned,
                        output_snapshot: None,
                        verdict: Some(verdict),
                    })
                }
            }
        })();

        match step_result {
            Ok(record) => {
                let mut guard = ctx.shared.lock().expect("executor mutex");
                guard.records.insert(step.clone(), record);
            }
            Err(e) => {
                let mut guard = ctx.shared.lock().expect("executor mutex");
                guard.records.insert(
                    step.clone(),
                    NodeRecord {
                        status: NodeStatus::Failed,
                        wall_ms: started.elapsed().as_millis() as u64,
                        rows_out: 0,
                        rows_scanned: 0,
                        output_snapshot: None,
                        verdict: None,
                    },
                );
                if guard.error.is_none() {
                    guard.error = Some((step.clone(), e.to_string()));
                }
                return Ok(());
            }
        }
    }

    // Spill non-materialized outputs needed by other units.
    for step in &unit.steps {
        let Some(rel) = local.get(step) else { continue };
        if unit.materialize.contains(step) {
            continue;
        }
        let consumed_elsewhere = ctx
            .plan
            .logical
            .children_of(step)
            .iter()
            .any(|c| ctx.exec_set.contains(*c) && ctx.plan.unit_of(c) != Some(unit_index));
        if consumed_elsewhere {
            let bytes = codec::encode_relation_blob(rel)?;
            let blob = ctx.store.objects().put(&bytes)?;
            let mut guard = ctx.shared.lock().expect("executor mutex");
            guard.spills.insert(step.clone(), blob);
            guard.spill_count += 1;
        }
    }

    ctx.sink.after_unit(unit_index)?;
    Ok(())
}

/// Execute a physical plan. With a `selection`, only the named nodes run
/// (plus the scans feeding them); inputs of selected nodes whose producers
/// are outside the selection come from `seeds` (a prior run's snapshots).
pub fn execute_physical(
    plan: &PhysicalPlan,
    store: &TableStore,
    input_state: &CatalogState,
    opts: &RunOptions,
    selection: Option<&BTreeSet<String>>,
    seeds: &BTreeMap<String, SnapshotId>,
    sink: &dyn RunSink,
) -> Result<ExecOutcome, RunError> {
    let exec_set: BTreeSet<String> = match selection {
        None => plan.logical.nodes.keys().cloned().collect(),
        Some(selected) => {
            let mut set = selected.clone();
            // Scans are pure data access, never side effects: pull in any
            // scan a selected node reads from.
            for name in selected {
                for parent in plan.logical.parents_of(name) {
                    if plan.logical.nodes[parent].kind == NodeKind::SourceScan {
                        set.insert(parent.to_string());
                    }
                }
            }
            set
        }
    };

    let included: Vec<usize> = (0..plan.units.len())
        .filter(|&i| plan.units[i].steps.iter().any(|s| exec_set.contains(s)))
        .collect();
    let included_set: HashSet<usize> = included.iter().copied().collect();

    let shared = Mutex::new(Shared::default());
    let ctx = UnitCtx {
        plan,
        store,
        input_state,
        opts,
        exec_set: &exec_set,
        seeds,
        sink,
        shared: &shared,
    };

    let mut done: HashSet<usize> = HashSet::new();
    loop {
        let aborted = shared.lock().expect("executor mutex").error.is_some();
        if aborted {
            break;
        }
        let ready: Vec<usize> = included
            .iter()
            .copied()
            .filter(|&i| !done.contains(&i))
            .filter(|&i| {
                plan.edges
                    .iter()
                    .filter(|(_, b)| *b == i)
                    .all(|(a, _)| !included_set.contains(a) || done.contains(a))
            })
            .collect();
        if ready.is_empty() {
            break;
        }
        for wave in ready.chunks(opts.worker_cap.max(1)) {
            let mut result: Result<(), RunError> = Ok(());
            let ctx_ref = &ctx;
            std::thread::scope(|scope| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|&i| scope.spawn(move || run_unit(ctx_ref, i)))
                    .collect();
                for handle in handles {
                    match handle.join() {
                        Ok(Ok(())) => {}
                        Ok(Err(e)) => {
                            if result.is_ok() {
                                result = Err(e);
                            }
                        }
                        Err(_) => {
                            if result.is_ok() {
                                result = Err(RunError::Internal("executor thread panicked".into()));
                            }
                        }
                    }
                }
            });
            result?;
            done.extend(wave.iter().copied());
        }
    }

    // Anything neither executed nor recorded was skipped.
    let mut guard = shared.into_inner().expect("executor mutex");
    for name in plan.logical.nodes.keys() {
        guard
            .records
            .entry(name.clone())
            .or_insert_with(NodeRecord::skipped);
    }
    Ok(ExecOutcome {
        node_records: guard.records,
        failed_expectations: guard.failed_expectations,
        outputs: guard.outputs,
        spill_blobs: guard.spill_count,
        error: guard.error,
    })
}
