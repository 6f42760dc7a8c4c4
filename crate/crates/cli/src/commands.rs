//! Subcommand implementations. Everything here prints data to stdout and
//! diagnostics to stderr; error classification lives in `errors`.

use std::fs;
use std::io::Write as _;
use std::path::PathBuf;

use bpln_core::catalog::BranchKind;
use bpln_core::planner::{
    build_logical_plan, explain_json, fuse, ingest_project, plan_adhoc_query,
    push_down_predicates,
};
use bpln_core::runner::{
    self, detect_branch_context, RunManifest, RunOptions, RunStatus,
};
use bpln_core::sqlsubset::parse;
use bpln_core::tables::{codec, Relation, Value};
use bpln_core::workload::{
    cost_share_curve, empirical_ccdf, fit_power_law, WorkloadSample,
};
use bpln_core::workspace::Workspace;

use crate::errors::CliError;
use crate::{AnalyzeArgs, BranchAction, BranchArgs, LogArgs, QueryArgs, RunArgs};

fn open_workspace(root: Option<PathBuf>) -> Result<Workspace, CliError> {
    Ok(Workspace::open(Workspace::resolve_root(root))?)
}

/// Startup sweep for commands that mutate the catalog; `query` stays on a
/// purely read-only path and never calls this.
fn open_and_sweep(root: Option<PathBuf>) -> Result<Workspace, CliError> {
    let ws = open_workspace(root)?;
    for name in runner::sweep_orphans(&ws)? {
        eprintln!("swept orphaned ephemeral branch '{name}'");
    }
    Ok(ws)
}

fn resolve_branch(explicit: Option<String>) -> String {
    match explicit {
        Some(b) => b,
        None => {
            let cwd = std::env::current_dir().unwrap_or_else(|_| PathBuf::from("."));
            let (branch, warning) = detect_branch_context(&cwd);
            if let Some(w) = warning {
                eprintln!("warning: {w}");
            }
            branch
        }
    }
}

fn value_to_json(v: &Value) -> serde_json::Value {
    match v {
        Value::Null => serde_json::Value::Null,
        Value::Int(i) => serde_json::json!(i),
        Value::Float(f) => serde_json::json!(f),
        Value::Str(s) => serde_json::json!(s),
        Value::Bool(b) => serde_json::json!(b),
    }
}

fn print_relation(rel: &Relation, format: &str) -> Result<(), CliError> {
    match format {
        "json" => {
            let rows: Vec<serde_json::Value> = rel
                .rows()
                .map(|row| {
                    let obj: serde_json::Map<String, serde_json::Value> = rel
                        .schema()
                        .names()
                        .zip(row.iter())
                        .map(|(n, v)| (n.to_string(), value_to_json(v)))
                        .collect();
                    serde_json::Value::Object(obj)
                })
                .collect();
            println!("{}", serde_json::to_string_pretty(&rows)?);
        }
        _ => {
            let bytes = codec::encode_csv_with_header(rel);
            std::io::stdout().write_all(&bytes)?;
        }
    }
    Ok(())
}

pub fn query(root: Option<PathBuf>, args: QueryArgs) -> Result<(), CliError> {
    let ws = open_workspace(root)?;
    let reference = match &args.reference {
        Some(commit) => commit.clone(),
        None => resolve_branch(args.branch.clone()),
    };
    let state = ws.catalog().resolve(&reference)?;
    let q = parse(&args.sql)?;
    let plan = plan_adhoc_query(&q, &state, ws.tables(), true).map_err(|e| {
        // Surface missing tables with the familiar wording.
        if let bpln_core::planner::PlanError::UnknownReference { name, .. } = &e {
            CliError::User(format!("unknown table '{name}'"))
        } else {
            e.into()
        }
    })?;
    let projection: Vec<String> = plan.snapshot.schema.names().map(str::to_string).collect();
    let scanned = ws
        .tables()
        .scan(&plan.snapshot, &projection, plan.pushed.as_ref())?;
    let out = bpln_core::engine::execute(&plan.query, &scanned.relation)?;
    print_relation(&out, &args.format)
}

fn print_summary(manifest: &RunManifest) {
    println!(
        "run {} {} {} nodes {} ms",
        manifest.run_id,
        manifest.status.as_str(),
        manifest.nodes.len(),
        manifest.wall_ms
    );
}

pub fn run(root: Option<PathBuf>, args: RunArgs) -> Result<(), CliError> {
    let mut opts = RunOptions::from_env();
    if let Some(b) = args.budget {
        opts.budget_bytes = b;
    }
    if let Some(f) = args.inflation {
        opts.inflation = f;
    }
    if args.no_pushdown {
        opts.pushdown = false;
    }

    if args.explain {
        let ws = open_workspace(root)?;
        let branch = resolve_branch(args.branch);
        // Dry run: plan against the branch head when the branch exists,
        // against main otherwise, and create nothing.
        let reference = if ws.catalog().branch_exists(&branch) {
            branch
        } else {
            "main".to_string()
        };
        let input_commit = ws.catalog().head(&reference)?;
        let state = ws.catalog().resolve(input_commit.as_str())?;
        let project = ingest_project(&args.project, &input_commit, ws.tables())?;
        let mut logical = build_logical_plan(&project, &state, ws.tables())?;
        for w in &logical.warnings {
            eprintln!("warning: {w}");
        }
        if opts.pushdown {
            logical = push_down_predicates(&logical);
        }
        let physical = fuse(&logical, opts.budget_bytes, opts.inflation)?;
        println!("{}", serde_json::to_string_pretty(&explain_json(&physical))?);
        return Ok(());
    }

    let ws = open_and_sweep(root)?;
    let manifest = match args.run_id {
        Some(run_id) => runner::replay(&ws, run_id, args.selector.as_deref())?,
        None => {
            let branch = resolve_branch(args.branch);
            runner::run(&ws, &args.project, &branch, opts)?
        }
    };
    print_summary(&manifest);
    match manifest.status {
        RunStatus::Succeeded => Ok(()),
        RunStatus::FailedExpectation => Err(CliError::Expectation(format!(
            "expectations failed: {}",
            manifest.failed_expectations.join(", ")
        ))),
        _ => Err(CliError::User(
            manifest
                .error
                .unwrap_or_else(|| "run failed".to_string()),
        )),
    }
}

pub fn branch(root: Option<PathBuf>, args: BranchArgs) -> Result<(), CliError> {
    let ws = open_and_sweep(root)?;
    let catalog = ws.catalog();
    match args.action {
        BranchAction::Create { name, from } => {
            let b = catalog.create_branch(&name, &from, BranchKind::Persistent)?;
            println!("created branch {} at {}", b.name, b.head);
        }
        BranchAction::List => {
            for b in catalog.list_branches()? {
                match b.kind {
                    BranchKind::Persistent => println!("{}", b.name),
                    BranchKind::Ephemeral => println!("{} (ephemeral)", b.name),
                }
            }
        }
        BranchAction::Delete { name } => {
            catalog.delete_branch(&name)?;
            println!("deleted branch {name}");
        }
        BranchAction::Merge { source, target } => {
            let commit = catalog.merge(&source, &target)?;
            println!("merged {source} into {target} at {commit}");
        }
    }
    Ok(())
}

pub fn log(root: Option<PathBuf>, args: LogArgs) -> Result<(), CliError> {
    let ws = open_and_sweep(root)?;
    let catalog = ws.catalog();
    let branch = resolve_branch(args.branch);
    let head = catalog.head(&branch)?;
    let head_commit = catalog.load_commit(&head)?;
    if !head_commit.state.tables.contains_key(&args.table) {
        return Err(CliError::User(format!(
            "unknown table '{}' on branch '{branch}'",
            args.table
        )));
    }

    // Walk the first-parent chain, printing each commit where the table's
    // snapshot changed (newest first).
    let mut cursor = Some(head_commit);
    while let Some(commit) = cursor {
        let current = commit.state.tables.get(&args.table);
        let parent = match commit.parents.first() {
            Some(p) => Some(catalog.load_commit(p)?),
            None => None,
        };
        let previous = parent
            .as_ref()
            .and_then(|p| p.state.tables.get(&args.table));
        if let Some(snapshot_id) = current {
            if previous != Some(snapshot_id) {
                let snapshot = ws.tables().load_snapshot(snapshot_id)?;
                println!(
                    "{} {} {}",
                    commit.id, commit.timestamp, snapshot.row_count
                );
            }
        }
        cursor = parent;
    }
    Ok(())
}

fn read_workload_csv(path: &PathBuf) -> Result<WorkloadSample, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::User(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| CliError::User("input is empty".to_string()))?
        .trim();
    let with_cost = match header {
        "value" => false,
        "value,cost" => true,
        other => {
            return Err(CliError::User(format!(
                "expected header 'value' or 'value,cost', found {other:?}"
            )))
        }
    };
    let mut values = Vec::new();
    let mut costs = Vec::new();
    for (i, line) in lines.enumerate() {
        let mut fields = line.trim().split(',');
        let v: f64 = fields
            .next()
            .and_then(|f| f.trim().parse().ok())
            .ok_or_else(|| CliError::User(format!("bad value on data line {}", i + 1)))?;
        values.push(v);
        if with_cost {
            let c: f64 = fields
                .next()
                .and_then(|f| f.trim().parse().ok())
                .ok_or_else(|| CliError::User(format!("bad cost on data line {}", i + 1)))?;
            costs.push(c);
        }
    }
    Ok(WorkloadSample::new(
        values,
        if with_cost { Some(costs) } else { None },
    )?)
}

pub fn analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    let sample = read_workload_csv(&args.input)?;
    let ccdf = empirical_ccdf(&sample.values)?;
    let fit = fit_power_law(&sample, args.xmin)?;
    let cost_share = match &sample.costs {
        Some(_) => Some(cost_share_curve(&sample)?),
        None => None,
    };

    if let Some(dir) = &args.plot_data {
        fs::create_dir_all(dir)?;
        let mut ccdf_dat = String::new();
        for (x, p) in &ccdf {
            ccdf_dat.push_str(&format!("{x} {p}\n"));
        }
        fs::write(dir.join("ccdf.dat"), ccdf_dat)?;
        if let Some(curve) = &cost_share {
            let mut dat = String::new();
            for (p, share) in curve {
                dat.push_str(&format!("{p} {share}\n"));
            }
            fs::write(dir.join("cost_share.dat"), dat)?;
        }
    }

    let report = serde_json::json!({
        "n": sample.values.len(),
        "ccdf": ccdf,
        "fit": fit,
        "cost_share": cost_share,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

