//! Git-like versioned catalog: every commit versions the whole mapping of
//! table names to table snapshots, and branch heads are the only mutable
//! cells.
//!
//! Commits are canonical-JSON blobs in the object store; their id is the
//! content hash, so identical states reached through different histories
//! still have distinct ids. Refs are one JSON file per branch under
//! `refs/`, replaced by atomic rename under an advisory lock — the
//! compare-and-swap on heads is the only write synchronization point.
//! Reads never lock: commits are immutable and ref files are swapped
//! atomically.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objectstore::{BlobId, ObjectStore, StoreError};
use crate::tables::SnapshotId;
use crate::util::{canonical_json, epoch_seconds, FileLock};

pub type CommitId = BlobId;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("branch '{0}' already exists")]
    AlreadyExists(String),
    #[error("unknown source ref '{0}'")]
    UnknownSource(String),
    #[error("unknown branch '{0}'")]
    UnknownBranch(String),
    #[error("unknown ref '{0}'")]
    UnknownRef(String),
    #[error("stale head: branch '{branch}' moved to {actual}, expected {expected}")]
    StaleHead {
        branch: String,
        expected: CommitId,
        actual: CommitId,
    },
    #[error("merge conflict on tables: {}", .0.join(", "))]
    Conflict(Vec<String>),
    #[error("branch '{0}' is protected")]
    ProtectedBranch(String),
    #[error("invalid name '{0}'")]
    InvalidName(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("catalog i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Mapping from table name to current snapshot; the unit of versioning.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogState {
    pub tables: BTreeMap<String, SnapshotId>,
}

impl CatalogState {
    pub fn with_table(&self, name: &str, snapshot: SnapshotId) -> CatalogState {
        let mut next = self.clone();
        next.tables.insert(name.to_string(), snapshot);
        next
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogCommit {
    #[serde(skip)]
    pub id: CommitId,
    pub parents: Vec<CommitId>,
    pub state: CatalogState,
    pub message: String,
    pub timestamp: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchKind {
    Persistent,
    Ephemeral,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchRef {
    pub name: String,
    pub head: CommitId,
    pub kind: BranchKind,
}

pub fn is_valid_table_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_lowercase() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

fn is_valid_branch_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
        && !name.starts_with('.')
}

#[derive(Debug, Clone)]
pub struct Catalog {
    store: ObjectStore,
    refs_dir: PathBuf,
}

impl Catalog {
    /// Open the catalog, creating `refs/` and the `main` branch (with an
    /// empty genesis commit) when absent.
    pub fn open(store: ObjectStore, refs_dir: impl Into<PathBuf>) -> Result<Catalog, CatalogError> {
        let refs_dir = refs_dir.into();
        fs::create_dir_all(&refs_dir)?;
        let catalog = Catalog { store, refs_dir };
        let _lock = catalog.lock()?;
        if !catalog.ref_path("main").exists() {
            let genesis = catalog.store_commit(&CatalogCommit {
                id: BlobId::of(b""),
                parents: Vec::new(),
                state: CatalogState::default(),
                message: "workspace initialized".to_string(),
                timestamp: epoch_seconds(),
            })?;
            catalog.write_ref(&BranchRef {
                name: "main".to_string(),
                head: genesis,
                kind: BranchKind::Persistent,
            })?;
        }
        Ok(catalog)
    }

    fn ref_path(&self, name: &str) -> PathBuf {
        self.refs_dir.join(format!("{name}.json"))
    }

    fn lock(&self) -> Result<FileLock, CatalogError> {
        Ok(FileLock::acquire(&self.refs_dir.join(".lock"))?)
    }

    fn write_ref(&self, branch: &BranchRef) -> Result<(), CatalogError> {
        let bytes = serde_json::to_vec_pretty(branch)?;
        let mut tmp = tempfile::NamedTempFile::new_in(&self.refs_dir)?;
        use std::io::Write;
        tmp.write_all(&bytes)?;
        tmp.persist(self.ref_path(&branch.name))
            .map_err(|e| CatalogError::Io(e.error))?;
        Ok(())
    }

    fn store_commit(&self, commit: &CatalogCommit) -> Result<CommitId, CatalogError> {
        let bytes = canonical_json(commit)?;
        Ok(self.store.put(&bytes)?)
    }

    pub fn load_commit(&self, id: &CommitId) -> Result<CatalogCommit, CatalogError> {
        let bytes = match self.store.get(id) {
            Ok(b) => b,
            Err(StoreError::NotFound(_)) => {
                return Err(CatalogError::UnknownRef(id.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        let mut commit: CatalogCommit = serde_json::from_slice(&bytes)?;
        commit.id = id.clone();
        Ok(commit)
    }

    pub fn branch(&self, name: &str) -> Result<BranchRef, CatalogError> {
        let bytes = match fs::read(self.ref_path(name)) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(CatalogError::UnknownBranch(name.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn branch_exists(&self, name: &str) -> bool {
        self.ref_path(name).exists()
    }

    pub fn list_branches(&self) -> Result<Vec<BranchRef>, CatalogError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.refs_dir)? {
            let entry = entry?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) == Some("json") {
                let bytes = fs::read(&path)?;
                out.push(serde_json::from_slice(&bytes)?);
            }
        }
        out.sort_by(|a: &BranchRef, b: &BranchRef| a.name.cmp(&b.name));
        Ok(out)
    }

    /// Resolve a branch name or commit id to a commit.
    pub fn resolve_commit(&self, reference: &str) -> Result<CatalogCommit, CatalogError> {
        if let Ok(branch) = self.branch(reference) {
            return self.load_commit(&branch.head);
        }
        if let Ok(id) = reference.parse::<BlobId>() {
            if let Ok(commit) = self.load_commit(&id) {
                return Ok(commit);
            }
        }
        Err(CatalogError::UnknownRef(reference.to_string()))
    }

    /// Resolve a branch name or commit id to its catalog state (a pure,
    /// lock-free read).
    pub fn resolve(&self, reference: &str) -> Result<CatalogState, CatalogError> {
        Ok(self.resolve_commit(reference)?.state)
    }

    pub fn head(&self, branch: &str) -> Result<CommitId, CatalogError> {
        Ok(self.branch(branch)?.head)
    }

    /// Create a new branch pointing at the resolution of `from`; no commit
    /// is created.
    pub fn create_branch(
        &self,
        name: &str,
        from: &str,
        kind: BranchKind,
    ) -> Result<BranchRef, CatalogError> {
        if !is_valid_branch_name(name) {
            return Err(CatalogError::InvalidName(name.to_string()));
        }
        let _lock = self.lock()?;
        if self.branch_exists(name) {
            return Err(CatalogError::AlreadyExists(name.to_string()));
        }
        let head = match self.resolve_commit(from) {
            Ok(c) => c.id,
            Err(CatalogError::UnknownRef(r)) => return Err(CatalogError::UnknownSource(r)),
            Err(e) => return Err(e),
        };
        let branch = BranchRef {
            name: name.to_string(),
            head,
            kind,
        };
        self.write_ref(&branch)?;
        Ok(branch)
    }

    /// Commit a new state to a branch, guarded by compare-and-swap on the
    /// expected head. Exactly one of N concurrent committers with the same
    /// `expected_head` wins; the rest get `StaleHead`.
    pub fn commit(
        &self,
        branch: &str,
        new_state: CatalogState,
        message: &str,
        expected_head: &CommitId,
    ) -> Result<CommitId, CatalogError> {
        for name in new_state.tables.keys() {
            if !is_valid_table_name(name) {
                return Err(CatalogError::InvalidName(name.clone()));
            }
        }
        let _lock = self.lock()?;
        let mut branch_ref = self.branch(branch)?;
        if &branch_ref.head != expected_head {
            return Err(CatalogError::StaleHead {
                branch: branch.to_string(),
                expected: expected_head.clone(),
                actual: branch_ref.head,
            });
        }
        let id = self.store_commit(&CatalogCommit {
            id: BlobId::of(b""),
            parents: vec![branch_ref.head.clone()],
            state: new_state,
            message: message.to_string(),
            timestamp: epoch_seconds(),
        })?;
        branch_ref.head = id.clone();
        self.write_ref(&branch_ref)?;
        Ok(id)
    }

    /// All ancestors of a commit, itself included.
    fn ancestors(&self, id: &CommitId) -> Result<HashSet<CommitId>, CatalogError> {
        let mut seen = HashSet::new();
        let mut queue = VecDeque::from([id.clone()]);
        while let Some(cur) = queue.pop_front() {
            if !seen.insert(cur.clone()) {
                continue;
            }
            for parent in self.load_commit(&cur)?.parents {
                queue.push_back(parent);
            }
        }
        Ok(seen)
    }

    fn is_ancestor(&self, maybe_ancestor: &CommitId, of: &CommitId) -> Result<bool, CatalogError> {
        Ok(self.ancestors(of)?.contains(maybe_ancestor))
    }

    /// Latest common ancestor: among the common ancestors that no other
    /// common ancestor descends from (the DAG-maximal ones), pick by
    /// (timestamp, id). There is always one because every branch descends
    /// from the genesis commit.
    fn merge_base(&self, a: &CommitId, b: &CommitId) -> Result<CatalogCommit, CatalogError> {
        let aa = self.ancestors(a)?;
        let bb = self.ancestors(b)?;
        let common: Vec<&CommitId> = aa.intersection(&bb).collect();
        let mut best: Option<CatalogCommit> = None;
        for id in &common {
            let dominated = common.iter().any(|other| {
                other != id
                    && self
                        .ancestors(other)
                        .map(|anc| anc.contains(*id))
                        .unwrap_or(false)
            });
            if dominated {
                continue;
            }
            let c = self.load_commit(id)?;
            let better = match &best {
                None => true,
                Some(cur) => (c.timestamp, &c.id) > (cur.timestamp, &cur.id),
            };
            if better {
                best = Some(c);
            }
        }
        best.ok_or_else(|| CatalogError::UnknownRef("no common ancestor".to_string()))
    }

    /// Merge `source` into `target`. Fast-forwards when possible; otherwise
    /// a per-table three-way merge against the latest common ancestor. A
    /// table changed on both sides (to different snapshots) is a conflict
    /// and the target head stays untouched. The source is never mutated.
    pub fn merge(&self, source: &str, target: &str) -> Result<CommitId, CatalogError> {
        let _lock = self.lock()?;
        let source_ref = self.branch(source)?;
        let mut target_ref = self.branch(target)?;

        if source_ref.head == target_ref.head
            || self.is_ancestor(&source_ref.head, &target_ref.head)?
        {
            // Nothing new on source.
            return Ok(target_ref.head);
        }
        if self.is_ancestor(&target_ref.head, &source_ref.head)? {
            target_ref.head = source_ref.head.clone();
            self.write_ref(&target_ref)?;
            return Ok(source_ref.head);
        }

        let base = self.merge_base(&source_ref.head, &target_ref.head)?;
        let src = self.load_commit(&source_ref.head)?.state;
        let tgt = self.load_commit(&target_ref.head)?.state;

        let mut names: Vec<&String> = src
            .tables
            .keys()
            .chain(tgt.tables.keys())
            .chain(base.state.tables.keys())
            .collect();
        names.sort();
        names.dedup();

        let mut merged = BTreeMap::new();
        let mut conflicts = Vec::new();
        for name in names {
            let b = base.state.tables.get(name);
            let s = src.tables.get(name);
            let t = tgt.tables.get(name);
            let src_changed = s != b;
            let tgt_changed = t != b;
            let chosen = match (src_changed, tgt_changed) {
                (false, false) => b,
                (true, false) => s,
                (false, true) => t,
                (true, true) => {
                    if s == t {
                        s
                    } else {
                        conflicts.push(name.clone());
                        continue;
                    }
                }
            };
            if let Some(snapshot) = chosen {
                merged.insert(name.clone(), snapshot.clone());
            }
        }
        if !conflicts.is_empty() {
            return Err(CatalogError::Conflict(conflicts));
        }

        let id = self.store_commit(&CatalogCommit {
            id: BlobId::of(b""),
            parents: vec![target_ref.head.clone(), source_ref.head.clone()],
            state: CatalogState { tables: merged },
            message: format!("merge {source} into {target}"),
            timestamp: epoch_seconds(),
        })?;
        target_ref.head = id.clone();
        self.write_ref(&target_ref)?;
        Ok(id)
    }

    /// Remove a branch ref. History stays reachable by commit id; `main` is
    /// protected.
    pub fn delete_branch(&self, name: &str) -> Result<(), CatalogError> {
        if name == "main" {
            return Err(CatalogError::ProtectedBranch(name.to_string()));
        }
        let _lock = self.lock()?;
        if !self.branch_exists(name) {
            return Err(CatalogError::UnknownBranch(name.to_string()));
        }
        fs::remove_file(self.ref_path(name))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> (tempfile::TempDir, Catalog) {
        let dir = tempfile::tempdir().unwrap();
        let store = ObjectStore::open(dir.path().join("objects")).unwrap();
        let cat = Catalog::open(store, dir.path().join("refs")).unwrap();
        (dir, cat)
    }

    fn fake_snapshot(_cat: &Catalog, tag: &str) -> SnapshotId {
        // Commit-state validation only needs the names to be legal; tests
        // use opaque blobs as snapshot stand-ins.
        BlobId::of(tag.as_bytes())
    }

    #[test]
    fn fresh_workspace_resolves_main_to_empty_state() {
        let (_d, cat) = catalog();
        let state = cat.resolve("main").unwrap();
        assert!(state.tables.is_empty());
    }

    #[test]
    fn create_branch_points_at_source_head() {
        let (_d, cat) = catalog();
        let b = cat
            .create_branch("feat_1", "main", BranchKind::Persistent)
            .unwrap();
        assert_eq!(b.head, cat.head("main").unwrap());
        assert!(matches!(
            cat.create_branch("main", "main", BranchKind::Persistent),
            Err(CatalogError::AlreadyExists(_))
        ));
        assert!(matches!(
            cat.create_branch("x", "ghost", BranchKind::Persistent),
            Err(CatalogError::UnknownSource(_))
        ));
        let run = cat
            .create_branch("run_12", "feat_1", BranchKind::Ephemeral)
            .unwrap();
        assert_eq!(run.kind, BranchKind::Ephemeral);
        assert_eq!(run.head, cat.head("feat_1").unwrap());
    }

    #[test]
    fn commit_advances_head_and_empty_delta_still_commits() {
        let (_d, cat) = catalog();
        let head = cat.head("main").unwrap();
        let state = cat.resolve("main").unwrap();
        let c1 = cat.commit("main", state.clone(), "noop", &head).unwrap();
        assert_ne!(c1, head);
        let reloaded = cat.load_commit(&c1).unwrap();
        assert_eq!(reloaded.state, state);
        assert_eq!(reloaded.parents, vec![head]);
    }

    #[test]
    fn commit_with_stale_head_fails() {
        let (_d, cat) = catalog();
        let head = cat.head("main").unwrap();
        let state = cat.resolve("main").unwrap();
        cat.commit("main", state.clone(), "first", &head).unwrap();
        assert!(matches!(
            cat.commit("main", state, "second", &head),
            Err(CatalogError::StaleHead { .. })
        ));
    }

    #[test]
    fn commit_adding_table_is_visible_via_resolve() {
        let (_d, cat) = catalog();
        let head = cat.head("main").unwrap();
        let snap = fake_snapshot(&cat, "trips-v1");
        let state = cat.resolve("main").unwrap().with_table("trips", snap.clone());
        cat.commit("main", state, "materialize trips", &head).unwrap();
        assert_eq!(cat.resolve("main").unwrap().tables.get("trips"), Some(&snap));
    }

    #[test]
    fn time_travel_resolves_old_commits_bit_identically() {
        let (_d, cat) = catalog();
        let h0 = cat.head("main").unwrap();
        let s1 = cat
            .resolve("main")
            .unwrap()
            .with_table("t", fake_snapshot(&cat, "v1"));
        let c1 = cat.commit("main", s1.clone(), "v1", &h0).unwrap();
        let s2 = s1.with_table("t", fake_snapshot(&cat, "v2"));
        cat.commit("main", s2.clone(), "v2", &c1).unwrap();

        assert_eq!(cat.resolve(c1.as_str()).unwrap(), s1);
        assert_eq!(cat.resolve("main").unwrap(), s2);
        // resolve(branch) == resolve(head(branch))
        let head = cat.head("main").unwrap();
        assert_eq!(cat.resolve("main").unwrap(), cat.resolve(head.as_str()).unwrap());
    }

    #[test]
    fn merge_fast_forwards_and_noops() {
        let (_d, cat) = catalog();
        cat.create_branch("feat_1", "main", BranchKind::Persistent)
            .unwrap();
        cat.create_branch("run_12", "feat_1", BranchKind::Ephemeral)
            .unwrap();
        let rh = cat.head("run_12").unwrap();
        let state = cat
            .resolve("run_12")
            .unwrap()
            .with_table("trips", fake_snapshot(&cat, "trips"));
        let c = cat.commit("run_12", state.clone(), "materialize", &rh).unwrap();

        // feat_1 untouched since fork: fast-forward.
        let merged = cat.merge("run_12", "feat_1").unwrap();
        assert_eq!(merged, c);
        assert_eq!(cat.resolve("feat_1").unwrap(), state);

        // Merging a branch with zero new commits is a no-op.
        let again = cat.merge("run_12", "feat_1").unwrap();
        assert_eq!(again, cat.head("feat_1").unwrap());
    }

    #[test]
    fn divergent_same_table_edits_conflict_and_leave_target_alone() {
        let (_d, cat) = catalog();
        let h = cat.head("main").unwrap();
        let base = cat
            .resolve("main")
            .unwrap()
            .with_table("pickups", fake_snapshot(&cat, "base"));
        let c0 = cat.commit("main", base.clone(), "base", &h).unwrap();
        cat.create_branch("left", "main", BranchKind::Persistent)
            .unwrap();
        cat.create_branch("right", "main", BranchKind::Persistent)
            .unwrap();

        let lh = cat.head("left").unwrap();
        cat.commit(
            "left",
            base.with_table("pickups", fake_snapshot(&cat, "left")),
            "left edit",
            &lh,
        )
        .unwrap();
        let rh = cat.head("right").unwrap();
        cat.commit(
            "right",
            base.with_table("pickups", fake_snapshot(&cat, "right")),
            "right edit",
            &rh,
        )
        .unwrap();

        let before = cat.head("right").unwrap();
        match cat.merge("left", "right") {
            Err(CatalogError::Conflict(tables)) => assert_eq!(tables, vec!["pickups"]),
            other => panic!("expected conflict, got {other:?}"),
        }
        assert_eq!(cat.head("right").unwrap(), before);
        let _ = c0;
    }

    #[test]
    fn three_way_merge_takes_the_changed_side_per_table() {
        let (_d, cat) = catalog();
        let h = cat.head("main").unwrap();
        let base = cat
            .resolve("main")
            .unwrap()
            .with_table("a", fake_snapshot(&cat, "a0"))
            .with_table("b", fake_snapshot(&cat, "b0"));
        cat.commit("main", base.clone(), "base", &h).unwrap();
        cat.create_branch("left", "main", BranchKind::Persistent)
            .unwrap();
        cat.create_branch("right", "main", BranchKind::Persistent)
            .unwrap();

        let lh = cat.head("left").unwrap();
        let a1 = fake_snapshot(&cat, "a1");
        cat.commit("left", base.with_table("a", a1.clone()), "edit a", &lh)
            .unwrap();
        let rh = cat.head("right").unwrap();
        let b1 = fake_snapshot(&cat, "b1");
        cat.commit("right", base.with_table("b", b1.clone()), "edit b", &rh)
            .unwrap();

        cat.merge("left", "right").unwrap();
        let merged = cat.resolve("right").unwrap();
        assert_eq!(merged.tables.get("a"), Some(&a1));
        assert_eq!(merged.tables.get("b"), Some(&b1));
        // merge never mutates the source
        assert_eq!(cat.resolve("left").unwrap().tables.get("b"), Some(&fake_snapshot(&cat, "b0")));
    }

    #[test]
    fn delete_branch_keeps_commits_resolvable() {
        let (_d, cat) = catalog();
        cat.create_branch("run_12", "main", BranchKind::Ephemeral)
            .unwrap();
        let rh = cat.head("run_12").unwrap();
        let state = cat
            .resolve("run_12")
            .unwrap()
            .with_table("t", fake_snapshot(&cat, "x"));
        let c = cat.commit("run_12", state.clone(), "work", &rh).unwrap();

        cat.delete_branch("run_12").unwrap();
        assert!(matches!(
            cat.resolve("run_12"),
            Err(CatalogError::UnknownRef(_))
        ));
        assert_eq!(cat.resolve(c.as_str()).unwrap(), state);

        assert!(matches!(
            cat.delete_branch("main"),
            Err(CatalogError::ProtectedBranch(_))
        ));
        assert!(matches!(
            cat.delete_branch("run_12"),
            Err(CatalogError::UnknownBranch(_))
        ));
    }

    #[test]
    fn branch_isolation_until_merge() {
        let (_d, cat) = catalog();
        cat.create_branch("feat_1", "main", BranchKind::Persistent)
            .unwrap();
        cat.create_branch("run_12", "feat_1", BranchKind::Ephemeral)
            .unwrap();
        let rh = cat.head("run_12").unwrap();
        cat.commit(
            "run_12",
            cat.resolve("run_12")
                .unwrap()
                .with_table("t", fake_snapshot(&cat, "x")),
            "work",
            &rh,
        )
        .unwrap();
        assert!(cat.resolve("feat_1").unwrap().tables.is_empty());
    }
}
