//! The `bpln` command line: synchronous queries, transactional pipeline
//! runs, branch management, table history and workload analysis.
//!
//! Exit codes: 0 success, 1 user error, 2 expectation failure, 3 internal
//! error. Data goes to stdout; diagnostics go to stderr as one
//! `error: ...` line per failure.

mod commands;
mod errors;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use errors::CliError;

#[derive(Parser)]
#[command(name = "bpln", version, about = "A desk-scale serverless lakehouse")]
struct Cli {
    /// Workspace root (default: $BPLN_WORKSPACE, else ./.bauplan)
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a SQL query against a branch or historical commit
    Query(QueryArgs),
    /// Execute a pipeline project (or replay a recorded run)
    Run(RunArgs),
    /// Manage catalog branches
    Branch(BranchArgs),
    /// Show the snapshot history of a table
    Log(LogArgs),
    /// Fit and summarize a workload sample (CCDF, power law, cost share)
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct QueryArgs {
    /// SQL text, e.g. "SELECT * FROM trips"
    #[arg(short = 'q', long = "query")]
    sql: String,
    /// Branch to read (default: the Git branch context, else main)
    #[arg(short = 'b', long)]
    branch: Option<String>,
    /// Read as of a specific commit id instead of a branch head
    #[arg(long = "ref")]
    reference: Option<String>,
    /// Output format
    #[arg(long, default_value = "csv", value_parser = ["csv", "json"])]
    format: String,
}

#[derive(Args)]
struct RunArgs {
    /// Project directory (the pipeline's .sql and expectation files)
    #[arg(default_value = ".")]
    project: PathBuf,
    /// Target branch (default: the Git branch context, else main)
    #[arg(short = 'b', long)]
    branch: Option<String>,
    /// Replay this recorded run instead of executing the project
    #[arg(long = "run-id")]
    run_id: Option<u64>,
    /// Node selector for replays: `name`, `name+` (descendants), `+name`
    /// (ancestors)
    #[arg(short = 'm', long = "selector")]
    selector: Option<String>,
    /// Fusion memory budget in bytes (default: $BPLN_BUDGET_BYTES or 256 MiB)
    #[arg(long)]
    budget: Option<u64>,
    /// CSV-to-memory inflation factor used in memory hints
    #[arg(long)]
    inflation: Option<f64>,
    /// Disable predicate pushdown
    #[arg(long)]
    no_pushdown: bool,
    /// Print the logical and physical plans as JSON and exit
    #[arg(long)]
    explain: bool,
}

#[derive(Args)]
struct BranchArgs {
    #[command(subcommand)]
    action: BranchAction,
}

#[derive(Subcommand)]
enum BranchAction {
    /// Create a branch
    Create {
        name: String,
        /// Source branch or commit id (default: main)
        #[arg(long, default_value = "main")]
        from: String,
    },
    /// List branches
    List,
    /// Delete a branch (main is protected)
    Delete { name: String },
    /// Merge one branch into another
    Merge { source: String, target: String },
}

#[derive(Args)]
struct LogArgs {
    /// Table name
    table: String,
    /// Branch to inspect (default: the Git branch context, else main)
    #[arg(short = 'b', long)]
    branch: Option<String>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// CSV input with header `value` or `value,cost`
    #[arg(long)]
    input: PathBuf,
    /// Lower cutoff of the power-law tail
    #[arg(long)]
    xmin: f64,
    /// Also write gnuplot-style data files into this directory
    #[arg(long = "plot-data")]
    plot_data: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<(), CliError> = match cli.command {
        Command::Query(args) => commands::query(cli.workspace, args),
        Command::Run(args) => commands::run(cli.workspace, args),
        Command::Branch(args) => commands::branch(cli.workspace, args),
        Command::Log(args) => commands::log(cli.workspace, args),
        Command::Analyze(args) => commands::analyze(args),
    };
    match result {
        Ok(()) => ExitCode::from(0),
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
