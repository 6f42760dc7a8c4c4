//! On-disk workspace layout: `objects/` (blob store), `refs/` (branch
//! heads), `runs/` (registry, counters, pid files).
//!
//! The root comes from `BPLN_WORKSPACE` or defaults to `./.bauplan/`.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::catalog::{Catalog, CatalogError};
use crate::objectstore::{ObjectStore, StoreError};
use crate::tables::TableStore;

pub const WORKSPACE_ENV: &str = "BPLN_WORKSPACE";
pub const DEFAULT_WORKSPACE_DIR: &str = ".bauplan";

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("workspace i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// One entry of a table's version history.
#[derive(Debug, Clone)]
pub struct TableVersion {
    pub commit: crate::catalog::CommitId,
    pub timestamp: i64,
    pub snapshot: crate::tables::SnapshotId,
    pub row_count: u64,
}

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
    tables: TableStore,
    catalog: Catalog,
}

impl Workspace {
    /// Open (creating on first use) a workspace rooted at `root`. A fresh
    /// workspace gets a `main` branch over an empty catalog.
    pub fn open(root: impl Into<PathBuf>) -> Result<Workspace, WorkspaceError> {
        let root = root.into();
        std::fs::create_dir_all(root.join("runs"))?;
        let store = ObjectStore::open(root.join("objects"))?;
        let catalog = Catalog::open(store.clone(), root.join("refs"))?;
        Ok(Workspace {
            root,
            tables: TableStore::new(store),
            catalog,
        })
    }

    /// Workspace root for a CLI invocation: explicit flag, else
    /// `BPLN_WORKSPACE`, else `./.bauplan`.
    pub fn resolve_root(explicit: Option<PathBuf>) -> PathBuf {
        if let Some(p) = explicit {
            return p;
        }
        if let Ok(env) = std::env::var(WORKSPACE_ENV) {
            if !env.is_empty() {
                return PathBuf::from(env);
            }
        }
        PathBuf::from(DEFAULT_WORKSPACE_DIR)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn tables(&self) -> &TableStore {
        &self.tables
    }

    pub fn objects(&self) -> &ObjectStore {
        self.tables.objects()
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.root.join("runs")
    }

    /// Snapshot history of a table on a branch, newest first: one entry
    /// per first-parent commit where the table's snapshot changed.
    pub fn table_history(
        &self,
        branch: &str,
        table: &str,
    ) -> Result<Vec<TableVersion>, WorkspaceError> {
        let head = self.catalog.head(branch)?;
        let mut cursor = Some(self.catalog.load_commit(&head)?);
        let mut out = Vec::new();
        while let Some(commit) = cursor {
            let current = commit.state.tables.get(table);
            let parent = match commit.parents.first() {
                Some(p) => Some(self.catalog.load_commit(p)?),
                None => None,
            };
            let previous = parent.as_ref().and_then(|p| p.state.tables.get(table));
            if let Some(snapshot_id) = current {
                if previous != Some(snapshot_id) {
                    let snapshot = self
                        .tables
                        .load_snapshot(snapshot_id)
                        .map_err(|e| WorkspaceError::Io(std::io::Error::other(e.to_string())))?;
                    out.push(TableVersion {
                        commit: commit.id.clone(),
                        timestamp: commit.timestamp,
                        snapshot: snapshot_id.clone(),
                        row_count: snapshot.row_count,
                    });
                }
            }
            cursor = parent;
        }
        Ok(out)
    }

    /// Write a relation as a new snapshot of `table` on `branch` (creating
    /// the branch from `main` when absent), retrying the head CAS against
    /// concurrent committers. Lineage chains to the table's previous
    /// snapshot on that branch.
    pub fn commit_table(
        &self,
        branch: &str,
        table: &str,
        rel: &crate::tables::Relation,
        message: &str,
    ) -> Result<crate::catalog::CommitId, WorkspaceError> {
        use crate::catalog::BranchKind;
        if !self.catalog.branch_exists(branch) {
            self.catalog
                .create_branch(branch, "main", BranchKind::Persistent)?;
        }
        loop {
            let head = self.catalog.head(branch)?;
            let state = self.catalog.resolve(head.as_str())?;
            let parent = state.tables.get(table).cloned();
            let snapshot = self
                .tables
                .write_table(rel, parent)
                .map_err(|e| WorkspaceError::Io(std::io::Error::other(e.to_string())))?;
            let next = state.with_table(table, snapshot.id);
            match self.catalog.commit(branch, next, message, &head) {
                Ok(commit) => return Ok(commit),
                Err(crate::catalog::CatalogError::StaleHead { .. }) => continue,
                Err(e) => return Err(e.into()),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_workspace_has_main_with_empty_state() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(dir.path().join("ws")).unwrap();
        assert!(ws.catalog().resolve("main").unwrap().tables.is_empty());
        // reopening is idempotent
        let again = Workspace::open(dir.path().join("ws")).unwrap();
        assert_eq!(
            again.catalog().head("main").unwrap(),
            ws.catalog().head("main").unwrap()
        );
    }

    #[test]
    fn resolve_root_prefers_explicit_then_env() {
        let explicit = Workspace::resolve_root(Some(PathBuf::from("/tmp/x")));
        assert_eq!(explicit, PathBuf::from("/tmp/x"));
        // Without an explicit path the fallback is env or the default dir;
        // this test avoids mutating the process env and only checks the
        // default shape.
        let fallback = Workspace::resolve_root(None);
        assert!(
            fallback == PathBuf::from(DEFAULT_WORKSPACE_DIR)
                || std::env::var(WORKSPACE_ENV).is_ok()
        );
    }
}
