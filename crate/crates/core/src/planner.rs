//! Code intelligence: project ingestion and fingerprinting, logical plan
//! construction from implicit references, predicate pushdown, and fusion
//! into physical execution units.
//!
//! A project is a directory of files following the naming convention:
//! `<name>.sql` defines the model (table) `<name>`;
//! `<table>_expectation.check` is a builtin expectation over `<table>`;
//! `<table>_expectation.fn.json` is an external-function expectation.
//! References inside a query resolve to a sibling model first, else to a
//! catalog table at the pinned input commit (which becomes a scan node); a
//! model shadowing a catalog table earns a warning.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::{is_valid_table_name, CatalogState, CommitId};
use crate::engine::check::{parse_check, CheckAgg, CheckBody, CheckExpr, ExpectationSpec, ExternalFunction};
use crate::objectstore::BlobId;
use crate::sqlsubset::ast::{conjoin, conjuncts, Expr, SelectQuery};
use crate::sqlsubset::{output_schema, parse};
use crate::tables::{ColumnType, Schema, TableError, TableSnapshot, TableStore};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("duplicate model '{name}' defined by {first} and {second}")]
    DuplicateModel {
        name: String,
        first: String,
        second: String,
    },
    #[error("project has no model files")]
    EmptyProject,
    #[error("cannot parse {path}: {message}")]
    UnparseableFile { path: String, message: String },
    #[error("unknown reference '{name}' in {file}")]
    UnknownReference { name: String, file: String },
    #[error("dependency cycle: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),
    #[error("in {file}: {message}")]
    Invalid { file: String, message: String },
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Store(#[from] crate::objectstore::StoreError),
    #[error("project i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// A snapshotted, fingerprinted project tree.
#[derive(Debug, Clone)]
pub struct ProjectSource {
    pub root: PathBuf,
    /// Relative path -> content blob, for every recognized file.
    pub files: BTreeMap<String, BlobId>,
    pub models: BTreeMap<String, ModelDef>,
    pub expectations: BTreeMap<String, ExpectationDef>,
    /// SHA-256 over the sorted (path, blob) pairs and the input commit.
    pub fingerprint: String,
    pub input_commit: CommitId,
}

#[derive(Debug, Clone)]
pub struct ModelDef {
    pub name: String,
    pub file: String,
    pub query: SelectQuery,
}

#[derive(Debug, Clone)]
pub struct ExpectationDef {
    pub node_name: String,
    pub file: String,
    pub spec: ExpectationSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    SourceScan,
    SqlModel,
    Expectation,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::SourceScan => "source_scan",
            NodeKind::SqlModel => "sql_model",
            NodeKind::Expectation => "expectation",
        }
    }
}

#[derive(Debug, Clone)]
pub struct LogicalNode {
    pub name: String,
    pub kind: NodeKind,
    pub query: Option<SelectQuery>,
    pub check: Option<ExpectationSpec>,
    /// Pinned snapshot for scans of catalog tables.
    pub snapshot: Option<TableSnapshot>,
    /// Predicate moved into this scan by pushdown.
    pub pushed_filter: Option<Expr>,
    /// Schema this node produces (None for expectations, which produce a
    /// verdict).
    pub output_schema: Option<Schema>,
    pub source_file: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct LogicalPlan {
    pub nodes: BTreeMap<String, LogicalNode>,
    /// parent -> child pairs.
    pub edges: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

impl LogicalPlan {
    pub fn parents_of(&self, name: &str) -> Vec<&str> {
        self.edges
            .iter()
            .filter(|(_, c)| c == name)
            .map(|(p, _)| p.as_str())
            .collect()
    }

    pub fn children_of(&self, name: &str) -> Vec<&str> {
        self.edges
            .iter()
            .filter(|(p, _)| p == name)
            .map(|(_, c)| c.as_str())
            .collect()
    }

    /// Deterministic topological order (ready nodes by name). Errors with
    /// the members of a cycle when one exists.
    pub fn topo_order(&self) -> Result<Vec<String>, PlanError> {
        let mut indegree: BTreeMap<&str, usize> =
            self.nodes.keys().map(|n| (n.as_str(), 0)).collect();
        for (_, child) in &self.edges {
            *indegree.get_mut(child.as_str()).expect("edge child exists") += 1;
        }
        let mut ready: BTreeSet<&str> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&n, _)| n)
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(&next) = ready.iter().next() {
            ready.remove(next);
            order.push(next.to_string());
            for child in self.children_of(next) {
                let d = indegree.get_mut(child).expect("child indexed");
                *d -= 1;
                if *d == 0 {
                    ready.insert(child);
                }
            }
        }
        if order.len() != self.nodes.len() {
            let mut cycle: Vec<String> = indegree
                .iter()
                .filter(|(n, _)| !order.iter().any(|o| o == *n))
                .map(|(n, _)| n.to_string())
                .collect();
            cycle.sort();
            return Err(PlanError::CycleDetected(cycle));
        }
        Ok(order)
    }

    /// Transitive descendants of a node (excluding itself).
    pub fn descendants(&self, name: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut queue = VecDeque::from([name.to_string()]);
        while let Some(cur) = queue.pop_front() {
            for child in self.children_of(&cur) {
                if out.insert(child.to_string()) {
                    queue.push_back(child.to_string());
                }
            }
        }
        out
    }

    /// Transitive ancestors of a node (excluding itself).
    pub fn ancestors(&self, name: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut queue = VecDeque::from([name.to_string()]);
        while let Some(cur) = queue.pop_front() {
            for parent in self.parents_of(&cur) {
                if out.insert(parent.to_string()) {
                    queue.push_back(parent.to_string());
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitEngine {
    Builtin,
    External,
}

impl UnitEngine {
    pub fn as_str(self) -> &'static str {
        match self {
            UnitEngine::Builtin => "builtin",
            UnitEngine::External => "external",
        }
    }
}

/// A fused group of plan nodes executed over in-memory intermediates; unit
/// boundaries exchange data through the object store.
#[derive(Debug, Clone)]
pub struct ExecutionUnit {
    pub steps: Vec<String>,
    /// Scan name -> predicate evaluated during the scan.
    pub pushed_predicates: BTreeMap<String, Expr>,
    /// Steps whose output is written back as a table snapshot (every
    /// sql_model, never scans or expectations).
    pub materialize: BTreeSet<String>,
    pub memory_hint_bytes: u64,
    pub engine: UnitEngine,
}

#[derive(Debug, Clone)]
pub struct PhysicalPlan {
    pub logical: LogicalPlan,
    pub units: Vec<ExecutionUnit>,
    /// Unit dependency edges by index.
    pub edges: Vec<(usize, usize)>,
}

impl PhysicalPlan {
    pub fn unit_of(&self, node: &str) -> Option<usize> {
        self.units
            .iter()
            .position(|u| u.steps.iter().any(|s| s == node))
    }
}

fn hidden(entry: &walkdir::DirEntry) -> bool {
    entry
        .file_name()
        .to_str()
        .map(|s| s.starts_with('.'))
        .unwrap_or(false)
}

/// Snapshot every recognized project file into the object store, parse
/// models and expectations, and fingerprint the tree together with the
/// input commit. Deterministic for identical trees and commits.
pub fn ingest_project(
    root: &Path,
    input_commit: &CommitId,
    store: &TableStore,
) -> Result<ProjectSource, PlanError> {
    let mut files = BTreeMap::new();
    let mut models: BTreeMap<String, ModelDef> = BTreeMap::new();
    let mut expectations: BTreeMap<String, ExpectationDef> = BTreeMap::new();

    let mut entries: Vec<walkdir::DirEntry> = Vec::new();
    for entry in walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || !hidden(e))
    {
        let entry = entry.map_err(|e| PlanError::Io(e.into()))?;
        if entry.file_type().is_file() {
            entries.push(entry);
        }
    }

    for entry in entries {
        let path = entry.path();
        let rel = path
            .strip_prefix(root)
            .unwrap_or(path)
            .to_string_lossy()
            .to_string();
        let file_name = entry.file_name().to_string_lossy().to_string();

        let parsed: Option<(String, Result<NodeParse, String>)> =
            if let Some(stem) = file_name.strip_suffix(".sql") {
                Some((stem.to_string(), {
                    let text = fs::read_to_string(path)?;
                    files.insert(rel.clone(), store.objects().put(text.as_bytes())?);
                    parse(&text)
                        .map(NodeParse::Model)
                        .map_err(|e| e.to_string())
                }))
            } else if let Some(target) = file_name.strip_suffix("_expectation.check") {
                Some((target.to_string(), {
                    let text = fs::read_to_string(path)?;
                    files.insert(rel.clone(), store.objects().put(text.as_bytes())?);
                    parse_check(text.trim())
                        .map(NodeParse::BuiltinCheck)
                        .map_err(|e| e.to_string())
                }))
            } else if let Some(target) = file_name.strip_suffix("_expectation.fn.json") {
                Some((target.to_string(), {
                    let bytes = fs::read(path)?;
                    files.insert(rel.clone(), store.objects().put(&bytes)?);
                    serde_json::from_slice::<ExternalFunction>(&bytes)
                        .map(NodeParse::ExternalCheck)
                        .map_err(|e| e.to_string())
                }))
            } else {
                None
            };

        let Some((name, result)) = parsed else {
            continue;
        };
        if !is_valid_table_name(&name) {
            return Err(PlanError::UnparseableFile {
                path: rel,
                message: format!("'{name}' is not a valid table name"),
            });
        }
        let node = result.map_err(|message| PlanError::UnparseableFile {
            path: rel.clone(),
            message,
        })?;
        match node {
            NodeParse::Model(query) => {
                if let Some(prev) = models.get(&name) {
                    return Err(PlanError::DuplicateModel {
                        name,
                        first: prev.file.clone(),
                        second: rel,
                    });
                }
                models.insert(
                    name.clone(),
                    ModelDef {
                        name,
                        file: rel,
                        query,
                    },
                );
            }
            NodeParse::BuiltinCheck(check) => {
                insert_expectation(&mut expectations, name, rel, CheckBody::Builtin(check))?;
            }
            NodeParse::ExternalCheck(func) => {
                insert_expectation(&mut expectations, name, rel, CheckBody::External(func))?;
            }
        }
    }

    if models.is_empty() {
        return Err(PlanError::EmptyProject);
    }

    let mut hasher = Sha256::new();
    for (path, blob) in &files {
        hasher.update(path.as_bytes());
        hasher.update(b"\n");
        hasher.update(blob.as_str().as_bytes());
        hasher.update(b"\n");
    }
    hasher.update(input_commit.as_str().as_bytes());
    let mut fingerprint = String::with_capacity(64);
    for b in hasher.finalize() {
        let _ = write!(fingerprint, "{b:02x}");
    }

    Ok(ProjectSource {
        root: root.to_path_buf(),
        files,
        models,
        expectations,
        fingerprint,
        input_commit: input_commit.clone(),
    })
}

enum NodeParse {
    Model(SelectQuery),
    BuiltinCheck(CheckExpr),
    ExternalCheck(ExternalFunction),
}

fn insert_expectation(
    expectations: &mut BTreeMap<String, ExpectationDef>,
    target: String,
    file: String,
    body: CheckBody,
) -> Result<(), PlanError> {
    let node_name = format!("{target}_expectation");
    if let Some(prev) = expectations.get(&node_name) {
        return Err(PlanError::DuplicateModel {
            name: node_name,
            first: prev.file.clone(),
            second: file,
        });
    }
    expectations.insert(
        node_name.clone(),
        ExpectationDef {
            node_name,
            file,
            spec: ExpectationSpec {
                target_table: target,
                body,
            },
        },
    );
    Ok(())
}

/// Columns a builtin check reads, for plan-time validation.
fn check_columns(check: &CheckExpr, out: &mut Vec<(String, CheckAgg)>) {
    match check {
        CheckExpr::Clause { agg, column, .. } => {
            if let Some(c) = column {
                out.push((c.clone(), *agg));
            }
        }
        CheckExpr::And(a, b) | CheckExpr::Or(a, b) => {
            check_columns(a, out);
            check_columns(b, out);
        }
    }
}

/// Build the logical DAG: resolve references (sibling model first, then
/// catalog table at the input commit), check for cycles, and propagate
/// schemas through every model and expectation.
pub fn build_logical_plan(
    project: &ProjectSource,
    catalog_state: &CatalogState,
    store: &TableStore,
) -> Result<LogicalPlan, PlanError> {
    let mut plan = LogicalPlan::default();

    for (name, model) in &project.models {
        plan.nodes.insert(
            name.clone(),
            LogicalNode {
                name: name.clone(),
                kind: NodeKind::SqlModel,
                query: Some(model.query.clone()),
                check: None,
                snapshot: None,
                pushed_filter: None,
                output_schema: None,
                source_file: Some(model.file.clone()),
            },
        );
    }

    // Resolve references, creating scan nodes on demand.
    let resolve_ref = |plan: &mut LogicalPlan,
                           name: &str,
                           referencing_file: &str|
     -> Result<String, PlanError> {
        if project.models.contains_key(name) {
            if catalog_state.tables.contains_key(name) {
                let warning = format!(
                    "model '{name}' shadows the catalog table of the same name"
                );
                if !plan.warnings.contains(&warning) {
                    plan.warnings.push(warning);
                }
            }
            return Ok(name.to_string());
        }
        if let Some(snapshot_id) = catalog_state.tables.get(name) {
            if !plan.nodes.contains_key(name) {
                let snapshot = store.load_snapshot(snapshot_id)?;
                plan.nodes.insert(
                    name.to_string(),
                    LogicalNode {
                        name: name.to_string(),
                        kind: NodeKind::SourceScan,
                        query: None,
                        check: None,
                        output_schema: Some(snapshot.schema.clone()),
                        snapshot: Some(snapshot),
                        pushed_filter: None,
                        source_file: None,
                    },
                );
            }
            return Ok(name.to_string());
        }
        Err(PlanError::UnknownReference {
            name: name.to_string(),
            file: referencing_file.to_string(),
        })
    };

    for (name, model) in &project.models {
        let parent = resolve_ref(&mut plan, &model.query.from_table, &model.file)?;
        plan.edges.push((parent, name.clone()));
    }
    for (node_name, exp) in &project.expectations {
        let parent = resolve_ref(&mut plan, &exp.spec.target_table, &exp.file)?;
        plan.nodes.insert(
            node_name.clone(),
            LogicalNode {
                name: node_name.clone(),
                kind: NodeKind::Expectation,
                query: None,
                check: Some(exp.spec.clone()),
                snapshot: None,
                pushed_filter: None,
                output_schema: None,
                source_file: Some(exp.file.clone()),
            },
        );
        plan.edges.push((parent, node_name.clone()));
    }
    plan.edges.sort();
    plan.edges.dedup();

    // Propagate schemas in topological order (also detects cycles).
    let order = plan.topo_order()?;
    for name in &order {
        let node = plan.nodes.get(name).expect("topo order from plan");
        match node.kind {
            NodeKind::SourceScan => {}
            NodeKind::SqlModel => {
                let parent = plan.parents_of(name)[0].to_string();
                let input = plan.nodes[&parent]
                    .output_schema
                    .clone()
                    .expect("model parents always produce a schema");
                let query = node.query.as_ref().expect("models carry a query");
                let file = node.source_file.clone().unwrap_or_default();
                let schema =
                    output_schema(query, &input).map_err(|e| PlanError::Invalid {
                        file,
                        message: e.to_string(),
                    })?;
                plan.nodes.get_mut(name).expect("node exists").output_schema = Some(schema);
            }
            NodeKind::Expectation => {
                let parent = plan.parents_of(name)[0].to_string();
                let input = plan.nodes[&parent]
                    .output_schema
                    .clone()
                    .expect("expectation targets always produce a schema");
                let spec = node.check.as_ref().expect("expectations carry a spec");
                if let CheckBody::Builtin(check) = &spec.body {
                    let mut cols = Vec::new();
                    check_columns(check, &mut cols);
                    let file = node.source_file.clone().unwrap_or_default();
                    for (col, agg) in cols {
                        match input.column(&col) {
                            None => {
                                return Err(PlanError::Invalid {
                                    file,
                                    message: format!("check references unknown column '{col}'"),
                                })
                            }
                            Some(c) => {
                                let numeric = matches!(
                                    c.ty,
                                    ColumnType::Int64 | ColumnType::Float64
                                );
                                let needs_numeric = matches!(
                                    agg,
                                    CheckAgg::Mean | CheckAgg::Sum | CheckAgg::Min | CheckAgg::Max
                                );
                                if needs_numeric && !numeric {
                                    return Err(PlanError::Invalid {
                                        file,
                                        message: format!(
                                            "check aggregate needs a numeric column, '{col}' is {}",
                                            c.ty
                                        ),
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    Ok(plan)
}

/// Map a predicate through a projection item list: every column reference
/// is rewritten to the underlying source column (aliases unwound). Only
/// bare column projections map; None when any referenced column has no
/// image.
pub fn rewrite_through_projection(
    predicate: &Expr,
    items: &[(Expr, Option<String>)],
) -> Option<Expr> {
    let lookup = |name: &str| -> Option<String> {
        for (expr, alias) in items {
            let out_name = match (expr, alias) {
                (_, Some(a)) => a.as_str(),
                (Expr::Column(c), None) => c.as_str(),
                _ => continue,
            };
            if out_name == name {
                // Only bare column projections are invertible.
                if let Expr::Column(src) = expr {
                    return Some(src.clone());
                }
                return None;
            }
        }
        None
    };
    predicate.rename_columns(&lookup)
}

/// Move WHERE conjuncts of each model into its parent scan when the move
/// cannot change any observable output: the parent must be a scan, the
/// model its only consumer, and every predicate column must map through
/// the scan's (identity) projection. Materialized models never absorb a
/// child's predicate — their committed tables must stay bit-identical to
/// the unoptimized plan's.
pub fn push_down_predicates(plan: &LogicalPlan) -> LogicalPlan {
    let mut plan = plan.clone();
    let order = match plan.topo_order() {
        Ok(o) => o,
        Err(_) => return plan,
    };
    for name in order {
        let node = &plan.nodes[&name];
        if node.kind != NodeKind::SqlModel {
            continue;
        }
        let Some(query) = &node.query else { continue };
        let Some(where_clause) = &query.where_clause else {
            continue;
        };
        let parents = plan.parents_of(&name);
        if parents.len() != 1 {
            continue;
        }
        let parent_name = parents[0].to_string();
        let parent = &plan.nodes[&parent_name];
        if parent.kind != NodeKind::SourceScan {
            continue;
        }
        if plan.children_of(&parent_name).len() != 1 {
            // A shared scan feeds siblings that must keep seeing every row.
            continue;
        }
        let parent_schema = parent
            .output_schema
            .as_ref()
            .expect("scans carry a schema")
            .clone();
        // The scan projects every table column under its own name.
        let identity_items: Vec<(Expr, Option<String>)> = parent_schema
            .names()
            .map(|n| (Expr::Column(n.to_string()), None))
            .collect();

        let mut pushed = Vec::new();
        let mut kept = Vec::new();
        for conjunct in conjuncts(where_clause) {
            if conjunct.contains_aggregate() {
                kept.push(conjunct);
                continue;
            }
            match rewrite_through_projection(&conjunct, &identity_items) {
                Some(rewritten) => pushed.push(rewritten),
                None => kept.push(conjunct),
            }
        }
        if pushed.is_empty() {
            continue;
        }

        {
            let parent = plan.nodes.get_mut(&parent_name).expect("parent exists");
            let mut all = parent.pushed_filter.clone().map(|f| vec![f]).unwrap_or_default();
            all.extend(pushed);
            parent.pushed_filter = conjoin(all);
        }
        let node = plan.nodes.get_mut(&name).expect("node exists");
        let query = node.query.as_mut().expect("model query");
        query.where_clause = conjoin(kept);
    }
    plan
}

/// Greedy fusion in topological order: a node joins its single parent's
/// unit when the unit's memory hint plus the node's own estimate fits the
/// budget. A unit's memory hint is the sum over its scans of snapshot
/// bytes times the inflation factor; a node's estimate is the same sum
/// over every scan feeding it (at least 1, so a zero budget degenerates to
/// one unit per node).
pub fn fuse(plan: &LogicalPlan, budget_bytes: u64, inflation: f64) -> Result<PhysicalPlan, PlanError> {
    let order = plan.topo_order()?;

    let scan_bytes = |name: &str| -> u64 {
        plan.nodes[name]
            .snapshot
            .as_ref()
            .map(|s| (s.total_bytes as f64 * inflation) as u64)
            .unwrap_or(0)
    };
    // Scans transitively feeding each node.
    let mut feeding: HashMap<String, BTreeSet<String>> = HashMap::new();
    for name in &order {
        let mut set = BTreeSet::new();
        if plan.nodes[name].kind == NodeKind::SourceScan {
            set.insert(name.clone());
        }
        for parent in plan.parents_of(name) {
            set.extend(feeding[parent].iter().cloned());
        }
        feeding.insert(name.clone(), set);
    }
    let estimate = |name: &str| -> u64 {
        feeding[name]
            .iter()
            .map(|s| scan_bytes(s))
            .sum::<u64>()
            .max(1)
    };

    let mut units: Vec<ExecutionUnit> = Vec::new();
    let mut unit_of: HashMap<String, usize> = HashMap::new();
    for name in &order {
        let node = &plan.nodes[name];
        let parents = plan.parents_of(name);
        let joined = if parents.len() == 1 {
            let pu = unit_of[parents[0]];
            if units[pu].memory_hint_bytes.saturating_add(estimate(name)) <= budget_bytes {
                Some(pu)
            } else {
                None
            }
        } else {
            None
        };
        let idx = match joined {
            Some(pu) => {
                units[pu].steps.push(name.clone());
                pu
            }
            None => {
                units.push(ExecutionUnit {
                    steps: vec![name.clone()],
                    pushed_predicates: BTreeMap::new(),
                    materialize: BTreeSet::new(),
                    memory_hint_bytes: 0,
                    engine: UnitEngine::Builtin,
                });
                units.len() - 1
            }
        };
        unit_of.insert(name.clone(), idx);
        let unit = &mut units[idx];
        match node.kind {
            NodeKind::SourceScan => {
                unit.memory_hint_bytes = unit.memory_hint_bytes.saturating_add(scan_bytes(name));
                if let Some(filter) = &node.pushed_filter {
                    unit.pushed_predicates.insert(name.clone(), filter.clone());
                }
            }
            NodeKind::SqlModel => {
                unit.materialize.insert(name.clone());
            }
            NodeKind::Expectation => {
                if matches!(
                    node.check.as_ref().map(|c| &c.body),
                    Some(CheckBody::External(_))
                ) {
                    unit.engine = UnitEngine::External;
                }
            }
        }
    }

    let mut edges: Vec<(usize, usize)> = plan
        .edges
        .iter()
        .map(|(p, c)| (unit_of[p], unit_of[c]))
        .filter(|(a, b)| a != b)
        .collect();
    edges.sort_unstable();
    edges.dedup();

    Ok(PhysicalPlan {
        logical: plan.clone(),
        units,
        edges,
    })
}

/// A planned one-off query: the pinned scan with any pushed predicate,
/// plus the residual query to evaluate in memory.
#[derive(Debug, Clone)]
pub struct AdhocQueryPlan {
    pub snapshot: TableSnapshot,
    pub pushed: Option<Expr>,
    pub query: SelectQuery,
}

/// Plan a synchronous query against a catalog state. The same pushdown
/// rules as pipeline planning apply: the query node is the scan's only
/// consumer, so eligible WHERE conjuncts move into the scan.
pub fn plan_adhoc_query(
    query: &SelectQuery,
    catalog_state: &CatalogState,
    store: &TableStore,
    pushdown: bool,
) -> Result<AdhocQueryPlan, PlanError> {
    let table = &query.from_table;
    let snapshot_id =
        catalog_state
            .tables
            .get(table)
            .ok_or_else(|| PlanError::UnknownReference {
                name: table.clone(),
                file: "<query>".to_string(),
            })?;
    let snapshot = store.load_snapshot(snapshot_id)?;
    output_schema(query, &snapshot.schema).map_err(|e| PlanError::Invalid {
        file: "<query>".to_string(),
        message: e.to_string(),
    })?;

    let mut plan = LogicalPlan::default();
    plan.nodes.insert(
        table.clone(),
        LogicalNode {
            name: table.clone(),
            kind: NodeKind::SourceScan,
            query: None,
            check: None,
            output_schema: Some(snapshot.schema.clone()),
            snapshot: Some(snapshot),
            pushed_filter: None,
            source_file: None,
        },
    );
    let node_name = "adhoc:query".to_string(); // colon keeps it out of the table namespace
    plan.nodes.insert(
        node_name.clone(),
        LogicalNode {
            name: node_name.clone(),
            kind: NodeKind::SqlModel,
            query: Some(query.clone()),
            check: None,
            output_schema: None,
            snapshot: None,
            pushed_filter: None,
            source_file: None,
        },
    );
    plan.edges.push((table.clone(), node_name.clone()));
    let plan = if pushdown {
        push_down_predicates(&plan)
    } else {
        plan
    };
    Ok(AdhocQueryPlan {
        snapshot: plan.nodes[table]
            .snapshot
            .clone()
            .expect("scan keeps its snapshot"),
        pushed: plan.nodes[table].pushed_filter.clone(),
        query: plan.nodes[&node_name]
            .query
            .clone()
            .expect("query node keeps its query"),
    })
}

/// JSON rendering of both plan layers, the `--explain` output.
pub fn explain_json(plan: &PhysicalPlan) -> serde_json::Value {
    let logical = &plan.logical;
    let nodes: Vec<serde_json::Value> = logical
        .nodes
        .values()
        .map(|n| {
            json!({
                "name": n.name,
                "kind": n.kind.as_str(),
                "sql": n.query.as_ref().map(|q| q.to_string()),
                "pushed_filter": n.pushed_filter.as_ref().map(|e| e.to_string()),
                "output_schema": n.output_schema.as_ref().map(|s| {
                    s.columns.iter().map(|c| json!({"name": c.name, "type": c.ty.to_string()})).collect::<Vec<_>>()
                }),
                "file": n.source_file,
            })
        })
        .collect();
    let units: Vec<serde_json::Value> = plan
        .units
        .iter()
        .enumerate()
        .map(|(i, u)| {
            json!({
                "index": i,
                "steps": u.steps,
                "pushed_predicates": u
                    .pushed_predicates
                    .iter()
                    .map(|(k, v)| (k.clone(), v.to_string()))
                    .collect::<BTreeMap<String, String>>(),
                "materialize": u.materialize,
                "memory_hint_bytes": u.memory_hint_bytes,
                "engine": u.engine.as_str(),
            })
        })
        .collect();
    json!({
        "logical": {
            "nodes": nodes,
            "edges": logical.edges,
            "warnings": logical.warnings,
        },
        "physical": {
            "units": units,
            "edges": plan.edges,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectstore::ObjectStore;
    use crate::sqlsubset::ast::{BinaryOp, Literal};
    use crate::tables::{Relation, Value};

    fn setup() -> (tempfile::TempDir, TableStore) {
        let dir = tempfile::tempdir().unwrap();
        let store = ObjectStore::open(dir.path().join("objects")).unwrap();
        (dir, TableStore::new(store))
    }

    fn write_project(dir: &Path, files: &[(&str, &str)]) {
        for (name, content) in files {
            fs::write(dir.join(name), content).unwrap();
        }
    }

    fn appendix_project(dir: &Path) {
        write_project(
            dir,
            &[
                (
                    "trips.sql",
                    "SELECT pickup_location_id, passenger_count AS count, dropoff_location_id FROM taxi_table WHERE pickup_at >= '2019-04-01'",
                ),
                (
                    "pickups.sql",
                    "SELECT pickup_location_id, dropoff_location_id, COUNT(*) AS counts FROM trips GROUP BY pickup_location_id, dropoff_location_id ORDER BY counts DESC",
                ),
                ("trips_expectation.check", "mean(count) > 10\n"),
            ],
        );
    }

    fn taxi_state(store: &TableStore) -> (CatalogState, TableSnapshot) {
        let rel = crate::demo::taxi_relation(50, 3);
        let snap = store.write_table(&rel, None).unwrap();
        let mut state = CatalogState::default();
        state.tables.insert("taxi_table".into(), snap.id.clone());
        (state, snap)
    }

    fn commit_id() -> CommitId {
        BlobId::of(b"test-commit")
    }

    #[test]
    fn appendix_project_ingests_three_files() {
        let (dir, store) = setup();
        let proj_dir = dir.path().join("proj");
        fs::create_dir(&proj_dir).unwrap();
        appendix_project(&proj_dir);
        let p = ingest_project(&proj_dir, &commit_id(), &store).unwrap();
        assert_eq!(p.files.len(), 3);
        assert_eq!(p.models.len(), 2);
        assert_eq!(p.expectations.len(), 1);
        assert!(p.expectations.contains_key("trips_expectation"));
        assert_eq!(p.fingerprint.len(), 64);
    }

    #[test]
    fn ingest_is_deterministic_and_commit_sensitive() {
        let (dir, store) = setup();
        let proj_dir = dir.path().join("proj");
        fs::create_dir(&proj_dir).unwrap();
        appendix_project(&proj_dir);
        let a = ingest_project(&proj_dir, &commit_id(), &store).unwrap();
        let b = ingest_project(&proj_dir, &commit_id(), &store).unwrap();
        assert_eq!(a.fingerprint, b.fingerprint);
        let c = ingest_project(&proj_dir, &BlobId::of(b"other-commit"), &store).unwrap();
        assert_ne!(a.fingerprint, c.fingerprint);
    }

    #[test]
    fn duplicate_model_is_rejected() {
        let (dir, store) = setup();
        let proj_dir = dir.path().join("proj");
        fs::create_dir_all(proj_dir.join("sub")).unwrap();
        write_project(&proj_dir, &[("trips.sql", "SELECT a FROM t")]);
        write_project(&proj_dir.join("sub"), &[("trips.sql", "SELECT b FROM t")]);
        assert!(matches!(
            ingest_project(&proj_dir, &commit_id(), &store),
            Err(PlanError::DuplicateModel { .. })
        ));
    }

    #[test]
    fn empty_project_and_unparseable_files_error() {
        let (dir, store) = setup();
        let proj_dir = dir.path().join("proj");
        fs::create_dir(&proj_dir).unwrap();
        assert!(matches!(
            ingest_project(&proj_dir, &commit_id(), &store),
            Err(PlanError::EmptyProject)
        ));
        write_project(&proj_dir, &[("bad.sql", "SELECT FROM WHERE")]);
        match ingest_project(&proj_dir, &commit_id(), &store) {
            Err(PlanError::UnparseableFile { path, .. }) => assert_eq!(path, "bad.sql"),
            other => panic!("expected UnparseableFile, got {other:?}"),
        }
    }

    #[test]
    fn appendix_logical_plan_matches_the_three_layer_example() {
        let (dir, store) = setup();
        let proj_dir = dir.path().join("proj");
        fs::create_dir(&proj_dir).unwrap();
        appendix_project(&proj_dir);
        let (state, _snap) = taxi_state(&store);
        let p = ingest_project(&proj_dir, &commit_id(), &store).unwrap();
        let plan = build_logical_plan(&p, &state, &store).unwrap();

        let kinds: BTreeMap<&str, NodeKind> = plan
            .nodes
            .iter()
            .map(|(k, v)| (k.as_str(), v.kind))
            .collect();
        assert_eq!(kinds.len(), 4);
        assert_eq!(kinds["taxi_table"], NodeKind::SourceScan);
        assert_eq!(kinds["trips"], NodeKind::SqlModel);
        assert_eq!(kinds["pickups"], NodeKind::SqlModel);
        assert_eq!(kinds["trips_expectation"], NodeKind::Expectation);

        let mut edges = plan.edges.clone();
        edges.sort();
        assert_eq!(
            edges,
            vec![
                ("taxi_table".to_string(), "trips".to_string()),
                ("trips".to_string(), "pickups".to_string()),
                ("trips".to_string(), "trips_expectation".to_string()),
            ]
        );
        // schemas propagated
        let trips_schema = plan.nodes["trips"].output_schema.as_ref().unwrap();
        let names: Vec<_> = trips_schema.names().collect();
        assert_eq!(names, vec!["pickup_location_id", "count", "dropoff_location_id"]);
    }

    #[test]
    fn unknown_reference_and_cycles_error() {
        let (dir, store) = setup();
        let proj_dir = dir.path().join("proj");
        fs::create_dir(&proj_dir).unwrap();
        write_project(&proj_dir, &[("m.sql", "SELECT x FROM missing")]);
        let p = ingest_project(&proj_dir, &commit_id(), &store).unwrap();
        match build_logical_plan(&p, &CatalogState::default(), &store) {
            Err(PlanError::UnknownReference { name, file }) => {
                assert_eq!(name, "missing");
                assert_eq!(file, "m.sql");
            }
            other => panic!("expected UnknownReference, got {other:?}"),
        }

        let proj2 = dir.path().join("proj2");
        fs::create_dir(&proj2).unwrap();
        write_project(
            &proj2,
            &[("a.sql", "SELECT x FROM b"), ("b.sql", "SELECT x FROM a")],
        );
        let p = ingest_project(&proj2, &commit_id(), &store).unwrap();
        match build_logical_plan(&p, &CatalogState::default(), &store) {
            Err(PlanError::CycleDetected(nodes)) => {
                assert_eq!(nodes, vec!["a".to_string(), "b".to_string()]);
            }
            other => panic!("expected CycleDetected, got {other:?}"),
        }
    }

    #[test]
    fn model_shadowing_catalog_table_warns() {
        let (dir, store) = setup();
        let proj_dir = dir.path().join("proj");
        fs::create_dir(&proj_dir).unwrap();
        // "taxi_table" is both a catalog table and a sibling model.
        write_project(
            &proj_dir,
            &[
                ("taxi_table.sql", "SELECT pickup_at FROM base"),
                ("trips.sql", "SELECT pickup_at FROM taxi_table"),
            ],
        );
        let (mut state, snap) = taxi_state(&store);
        state.tables.insert("base".into(), snap.id.clone());
        let p = ingest_project(&proj_dir, &commit_id(), &store).unwrap();
        let plan = build_logical_plan(&p, &state, &store).unwrap();
        assert_eq!(plan.nodes["taxi_table"].kind, NodeKind::SqlModel);
        assert!(!plan.warnings.is_empty());
    }

    fn appendix_plan(store: &TableStore, dir: &Path) -> LogicalPlan {
        let proj_dir = dir.join("proj");
        fs::create_dir_all(&proj_dir).unwrap();
        appendix_project(&proj_dir);
        let (state, _snap) = taxi_state(store);
        let p = ingest_project(&proj_dir, &commit_id(), store).unwrap();
        build_logical_plan(&p, &state, store).unwrap()
    }

    #[test]
    fn pushdown_moves_the_date_filter_into_the_scan() {
        let (dir, store) = setup();
        let plan = appendix_plan(&store, dir.path());
        let optimized = push_down_predicates(&plan);
        let scan = &optimized.nodes["taxi_table"];
        assert!(scan.pushed_filter.is_some());
        assert_eq!(
            scan.pushed_filter.as_ref().unwrap().to_string(),
            "(pickup_at >= '2019-04-01')"
        );
        let trips = optimized.nodes["trips"].query.as_ref().unwrap();
        assert!(trips.where_clause.is_none(), "trips keeps projection only");
    }

    #[test]
    fn pushdown_skips_shared_scans_and_aggregated_parents() {
        let (dir, store) = setup();
        let proj_dir = dir.path().join("proj");
        fs::create_dir(&proj_dir).unwrap();
        // Two models over the same scan: pushing either filter would
        // starve the other consumer.
        write_project(
            &proj_dir,
            &[
                ("a.sql", "SELECT pickup_at FROM taxi_table WHERE pickup_at >= '2019-04-01'"),
                ("b.sql", "SELECT passenger_count FROM taxi_table"),
            ],
        );
        let (state, _snap) = taxi_state(&store);
        let p = ingest_project(&proj_dir, &commit_id(), &store).unwrap();
        let plan = build_logical_plan(&p, &state, &store).unwrap();
        let optimized = push_down_predicates(&plan);
        assert!(optimized.nodes["taxi_table"].pushed_filter.is_none());
        assert!(optimized.nodes["a"].query.as_ref().unwrap().where_clause.is_some());

        // A filter over an aggregated parent stays put: the parent is a
        // model, and models never absorb child predicates.
        let proj2 = dir.path().join("proj2");
        fs::create_dir(&proj2).unwrap();
        write_project(
            &proj2,
            &[
                ("agg.sql", "SELECT pickup_location_id, COUNT(*) AS n FROM taxi_table GROUP BY pickup_location_id"),
                ("filtered.sql", "SELECT pickup_location_id FROM agg WHERE n > 2"),
            ],
        );
        let p2 = ingest_project(&proj2, &commit_id(), &store).unwrap();
        let plan2 = build_logical_plan(&p2, &state, &store).unwrap();
        let optimized2 = push_down_predicates(&plan2);
        assert!(optimized2.nodes["taxi_table"].pushed_filter.is_none());
        assert!(optimized2.nodes["filtered"]
            .query
            .as_ref()
            .unwrap()
            .where_clause
            .is_some());
    }

    #[test]
    fn rewrite_unwinds_aliases_to_source_columns() {
        // Step 1 aliases passenger_count AS count; a child predicate on
        // `count` maps back to `passenger_count`.
        let items = vec![
            (Expr::Column("pickup_location_id".into()), None),
            (
                Expr::Column("passenger_count".into()),
                Some("count".into()),
            ),
        ];
        let pred = Expr::binary(
            BinaryOp::Gt,
            Expr::Column("count".into()),
            Expr::Literal(Literal::Int(2)),
        );
        let rewritten = rewrite_through_projection(&pred, &items).unwrap();
        assert_eq!(rewritten.to_string(), "(passenger_count > 2)");
        // A column that is not projected has no image.
        let pred = Expr::binary(
            BinaryOp::Gt,
            Expr::Column("dropoff_location_id".into()),
            Expr::Literal(Literal::Int(2)),
        );
        assert!(rewrite_through_projection(&pred, &items).is_none());
        // A computed projection is not invertible.
        let items = vec![(
            Expr::binary(
                BinaryOp::Add,
                Expr::Column("a".into()),
                Expr::Literal(Literal::Int(1)),
            ),
            Some("count".into()),
        )];
        let pred = Expr::binary(
            BinaryOp::Gt,
            Expr::Column("count".into()),
            Expr::Literal(Literal::Int(2)),
        );
        assert!(rewrite_through_projection(&pred, &items).is_none());
    }

    #[test]
    fn ample_budget_fuses_the_appendix_plan_into_one_unit() {
        let (dir, store) = setup();
        let plan = push_down_predicates(&appendix_plan(&store, dir.path()));
        let physical = fuse(&plan, 256 << 20, 3.0).unwrap();
        assert_eq!(physical.units.len(), 1);
        let unit = &physical.units[0];
        assert_eq!(unit.steps.len(), 4);
        assert_eq!(unit.steps[0], "taxi_table");
        assert_eq!(
            unit.materialize,
            BTreeSet::from(["trips".to_string(), "pickups".to_string()])
        );
        assert!(unit.pushed_predicates.contains_key("taxi_table"));
        assert!(physical.edges.is_empty());
        assert_eq!(unit.engine, UnitEngine::Builtin);
    }

    #[test]
    fn zero_budget_degenerates_to_one_unit_per_node() {
        let (dir, store) = setup();
        let plan = appendix_plan(&store, dir.path());
        let physical = fuse(&plan, 0, 3.0).unwrap();
        assert_eq!(physical.units.len(), plan.nodes.len());
        for unit in &physical.units {
            assert_eq!(unit.steps.len(), 1);
        }
        assert!(!physical.edges.is_empty());
    }

    #[test]
    fn shared_scan_children_fuse_into_the_same_unit_under_ample_budget() {
        let (dir, store) = setup();
        let proj_dir = dir.path().join("proj");
        fs::create_dir(&proj_dir).unwrap();
        write_project(
            &proj_dir,
            &[
                ("a.sql", "SELECT pickup_at FROM taxi_table"),
                ("b.sql", "SELECT passenger_count FROM taxi_table"),
            ],
        );
        let (state, _snap) = taxi_state(&store);
        let p = ingest_project(&proj_dir, &commit_id(), &store).unwrap();
        let plan = build_logical_plan(&p, &state, &store).unwrap();
        let physical = fuse(&plan, 256 << 20, 3.0).unwrap();
        assert_eq!(physical.unit_of("a"), physical.unit_of("taxi_table"));
        assert_eq!(physical.unit_of("b"), physical.unit_of("taxi_table"));
    }

    #[test]
    fn diamond_node_with_two_parents_starts_a_new_unit() {
        // The dialect's single-table FROM cannot produce fan-in > 1, so the
        // diamond is assembled by hand: scan -> a, scan -> b, a -> d, b -> d.
        let (dir, store) = setup();
        let (_state, snap) = taxi_state(&store);
        let _ = dir;
        let mut plan = LogicalPlan::default();
        plan.nodes.insert(
            "base".into(),
            LogicalNode {
                name: "base".into(),
                kind: NodeKind::SourceScan,
                query: None,
                check: None,
                output_schema: Some(snap.schema.clone()),
                snapshot: Some(snap.clone()),
                pushed_filter: None,
                source_file: None,
            },
        );
        for name in ["a", "b", "d"] {
            let query = parse("SELECT pickup_at FROM base").unwrap();
            plan.nodes.insert(
                name.into(),
                LogicalNode {
                    name: name.into(),
                    kind: NodeKind::SqlModel,
                    query: Some(query),
                    check: None,
                    output_schema: Some(
                        Schema::new(vec![("pickup_at", ColumnType::String)]).unwrap(),
                    ),
                    snapshot: None,
                    pushed_filter: None,
                    source_file: None,
                },
            );
        }
        plan.edges = vec![
            ("base".into(), "a".into()),
            ("base".into(), "b".into()),
            ("a".into(), "d".into()),
            ("b".into(), "d".into()),
        ];
        let physical = fuse(&plan, u64::MAX, 3.0).unwrap();
        assert_eq!(physical.unit_of("a"), physical.unit_of("base"));
        assert_eq!(physical.unit_of("b"), physical.unit_of("base"));
        let d_unit = physical.unit_of("d").unwrap();
        assert_ne!(Some(d_unit), physical.unit_of("base"));
        assert_eq!(physical.units[d_unit].steps, vec!["d".to_string()]);
        assert_eq!(physical.units.len(), 2);
    }

    #[test]
    fn explain_json_shape() {
        let (dir, store) = setup();
        let plan = push_down_predicates(&appendix_plan(&store, dir.path()));
        let physical = fuse(&plan, 256 << 20, 3.0).unwrap();
        let v = explain_json(&physical);
        assert!(v["logical"]["nodes"].as_array().unwrap().len() == 4);
        assert!(v["physical"]["units"].as_array().unwrap().len() == 1);
        assert_eq!(
            v["physical"]["units"][0]["pushed_predicates"]["taxi_table"],
            "(pickup_at >= '2019-04-01')"
        );
    }

    #[test]
    fn scan_relation_roundtrip_smoke() {
        // Ties planner-visible snapshots to real data.
        let (dir, store) = setup();
        let plan = appendix_plan(&store, dir.path());
        let snap = plan.nodes["taxi_table"].snapshot.as_ref().unwrap();
        let rel: Relation = store.read_all(snap).unwrap();
        assert_eq!(rel.row_count() as u64, snap.row_count);
        assert!(matches!(rel.row(0)[0], Value::Str(_)));
    }
}
