//! Mapping from library errors to the exit-code contract:
//! 1 user error, 2 expectation failure, 3 internal error.

use bpln_core::catalog::CatalogError;
use bpln_core::engine::EngineError;
use bpln_core::planner::PlanError;
use bpln_core::runner::RunError;
use bpln_core::sqlsubset::ParseError;
use bpln_core::tables::TableError;
use bpln_core::workload::WorkloadError;
use bpln_core::workspace::WorkspaceError;

#[derive(Debug)]
pub enum CliError {
    User(String),
    Expectation(String),
    Internal(String),
}

impl CliError {
    pub fn message(&self) -> &str {
        match self {
            CliError::User(m) | CliError::Expectation(m) | CliError::Internal(m) => m,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::User(_) => 1,
            CliError::Expectation(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl From<ParseError> for CliError {
    fn from(e: ParseError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<WorkloadError> for CliError {
    fn from(e: WorkloadError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<WorkspaceError> for CliError {
    fn from(e: WorkspaceError) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<CatalogError> for CliError {
    fn from(e: CatalogError) -> Self {
        match e {
            CatalogError::Store(_) | CatalogError::Io(_) | CatalogError::Serde(_) => {
                CliError::Internal(e.to_string())
            }
            _ => CliError::User(e.to_string()),
        }
    }
}

impl From<TableError> for CliError {
    fn from(e: TableError) -> Self {
        match e {
            TableError::UnknownColumn(_) | TableError::Type(_) => CliError::User(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Io(_) | EngineError::Internal(_) => CliError::Internal(e.to_string()),
            _ => CliError::User(e.to_string()),
        }
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::Table(_) | PlanError::Store(_) | PlanError::Io(_) => {
                CliError::Internal(e.to_string())
            }
            _ => CliError::User(e.to_string()),
        }
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Plan(p) => p.into(),
            RunError::UnknownRun(_) | RunError::UnknownSelectorNode(_) => {
                CliError::User(e.to_string())
            }
            RunError::Catalog(c) => c.into(),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}
