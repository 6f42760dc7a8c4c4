//! Table format: schemas, in-memory relations, and snapshots over immutable
//! data files.
//!
//! A table is a [`TableSnapshot`]: a schema plus an ordered list of
//! content-addressed data files, with a parent link giving time travel.
//! Data files are headerless RFC-4180 CSV; the schema lives in the snapshot
//! JSON, never in the file (see [`codec`]).

pub mod codec;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objectstore::{BlobId, ObjectStore, StoreError};
use crate::sqlsubset::ast::Expr;
use crate::util::canonical_json;

/// Snapshot ids are content hashes of the snapshot's canonical JSON.
pub type SnapshotId = BlobId;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("unknown column '{0}'")]
    UnknownColumn(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("unknown snapshot: {0}")]
    UnknownSnapshot(SnapshotId),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("data file decode: {0}")]
    Decode(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColumnType {
    #[serde(rename = "INT64")]
    Int64,
    #[serde(rename = "FLOAT64")]
    Float64,
    #[serde(rename = "STRING")]
    String,
    #[serde(rename = "BOOL")]
    Bool,
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ColumnType::Int64 => "INT64",
            ColumnType::Float64 => "FLOAT64",
            ColumnType::String => "STRING",
            ColumnType::Bool => "BOOL",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
}

/// Ordered list of named, typed columns. Names are unique and at least one
/// column is required.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<Column>,
}

impl Schema {
    pub fn new(columns: Vec<(impl Into<String>, ColumnType)>) -> Result<Schema, TableError> {
        let columns: Vec<Column> = columns
            .into_iter()
            .map(|(name, ty)| Column {
                name: name.into(),
                ty,
            })
            .collect();
        let schema = Schema { columns };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), TableError> {
        if self.columns.is_empty() {
            return Err(TableError::SchemaViolation(
                "schema needs at least one column".into(),
            ));
        }
        let mut seen = HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(TableError::SchemaViolation(format!(
                    "duplicate column name '{}'",
                    c.name
                )));
            }
        }
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }
}

/// A single nullable cell value.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Int(i64),
    Float(f64),
    Str(String),
    Bool(bool),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    /// True when the value conforms to the declared column type (NULL fits
    /// everywhere).
    pub fn conforms_to(&self, ty: ColumnType) -> bool {
        matches!(
            (self, ty),
            (Value::Null, _)
                | (Value::Int(_), ColumnType::Int64)
                | (Value::Float(_), ColumnType::Float64)
                | (Value::Str(_), ColumnType::String)
                | (Value::Bool(_), ColumnType::Bool)
        )
    }
}

/// In-memory columnar table: a schema plus one value vector per column, all
/// the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct Relation {
    schema: Schema,
    columns: Vec<Vec<Value>>,
}

impl Relation {
    /// An empty relation with the given schema.
    pub fn empty(schema: Schema) -> Result<Relation, TableError> {
        schema.validate()?;
        let columns = vec![Vec::new(); schema.columns.len()];
        Ok(Relation { schema, columns })
    }

    /// Build from row-major data, validating shape and types.
    pub fn from_rows(schema: Schema, rows: Vec<Vec<Value>>) -> Result<Relation, TableError> {
        let mut rel = Relation::empty(schema)?;
        for row in rows {
            rel.push_row(row)?;
        }
        Ok(rel)
    }

    pub fn push_row(&mut self, row: Vec<Value>) -> Result<(), TableError> {
        if row.len() != self.schema.columns.len() {
            return Err(TableError::SchemaViolation(format!(
                "row has {} values, schema has {} columns",
                row.len(),
                self.schema.columns.len()
            )));
        }
        for (v, c) in row.iter().zip(&self.schema.columns) {
            if !v.conforms_to(c.ty) {
                return Err(TableError::Type(format!(
                    "value {v:?} does not conform to column '{}' of type {}",
                    c.name, c.ty
                )));
            }
        }
        for (col, v) in self.columns.iter_mut().zip(row) {
            col.push(v);
        }
        Ok(())
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn row_count(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column_values(&self, idx: usize) -> &[Value] {
        &self.columns[idx]
    }

    pub fn column_by_name(&self, name: &str) -> Option<&[Value]> {
        self.schema.index_of(name).map(|i| self.columns[i].as_slice())
    }

    /// Row-major view of row `i`.
    pub fn row(&self, i: usize) -> Vec<Value> {
        self.columns.iter().map(|c| c[i].clone()).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = Vec<Value>> + '_ {
        (0..self.row_count()).map(|i| self.row(i))
    }
}

/// One immutable data file belonging to a snapshot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataFileRef {
    pub blob: BlobId,
    pub rows: u64,
    pub bytes: u64,
}

/// A table version: schema plus ordered data files, with lineage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSnapshot {
    #[serde(skip)]
    pub id: SnapshotId,
    pub schema: Schema,
    pub data_files: Vec<DataFileRef>,
    pub parent: Option<SnapshotId>,
    pub row_count: u64,
    pub total_bytes: u64,
}

impl TableSnapshot {
    fn canonical_bytes(&self) -> Result<Vec<u8>, TableError> {
        Ok(canonical_json(self)?)
    }
}

/// Result of a scan: the matching rows plus how many stored rows were
/// decoded to produce them (the pushdown bookkeeping counter).
#[derive(Debug, Clone)]
pub struct ScanResult {
    pub relation: Relation,
    pub rows_scanned: u64,
}

/// Table read/write operations over an object store.
#[derive(Debug, Clone)]
pub struct TableStore {
    store: ObjectStore,
}

impl TableStore {
    pub fn new(store: ObjectStore) -> TableStore {
        TableStore { store }
    }

    pub fn objects(&self) -> &ObjectStore {
        &self.store
    }

    /// Encode a relation into data files and record a snapshot, chaining the
    /// optional parent for lineage. One data file per write; an empty
    /// relation yields no files.
    pub fn write_table(
        &self,
        rel: &Relation,
        parent: Option<SnapshotId>,
    ) -> Result<TableSnapshot, TableError> {
        rel.schema().validate()?;
        let mut data_files = Vec::new();
        if rel.row_count() > 0 {
            let bytes = codec::encode_csv(rel);
            let blob = self.store.put(&bytes)?;
            data_files.push(DataFileRef {
                blob,
                rows: rel.row_count() as u64,
                bytes: bytes.len() as u64,
            });
        }
        let mut snapshot = TableSnapshot {
            id: BlobId::of(b""),
            schema: rel.schema().clone(),
            data_files,
            parent,
            row_count: rel.row_count() as u64,
            total_bytes: 0,
        };
        snapshot.total_bytes = snapshot.data_files.iter().map(|f| f.bytes).sum();
        let bytes = snapshot.canonical_bytes()?;
        snapshot.id = self.store.put(&bytes)?;
        Ok(snapshot)
    }

    pub fn load_snapshot(&self, id: &SnapshotId) -> Result<TableSnapshot, TableError> {
        let bytes = match self.store.get(id) {
            Ok(b) => b,
            Err(StoreError::NotFound(_)) => return Err(TableError::UnknownSnapshot(id.clone())),
            Err(e) => return Err(e.into()),
        };
        let mut snapshot: TableSnapshot = serde_json::from_slice(&bytes)?;
        snapshot.id = id.clone();
        Ok(snapshot)
    }

    /// Decode every data file of a snapshot, preserving file and row order.
    pub fn read_all(&self, snapshot: &TableSnapshot) -> Result<Relation, TableError> {
        let mut rel = Relation::empty(snapshot.schema.clone())?;
        for file in &snapshot.data_files {
            let bytes = self.store.get(&file.blob)?;
            codec::decode_csv_into(&snapshot.schema, &bytes, &mut rel)?;
        }
        Ok(rel)
    }

    /// Scan a snapshot with projection and an optional predicate, returning
    /// matching rows in storage order plus the scanned-row counter.
    pub fn scan(
        &self,
        snapshot: &TableSnapshot,
        projection: &[String],
        predicate: Option<&Expr>,
    ) -> Result<ScanResult, TableError> {
        let schema = &snapshot.schema;
        let mut proj_idx = Vec::with_capacity(projection.len());
        for name in projection {
            let idx = schema
                .index_of(name)
                .ok_or_else(|| TableError::UnknownColumn(name.clone()))?;
            proj_idx.push(idx);
        }
        let out_schema = Schema {
            columns: proj_idx.iter().map(|&i| schema.columns[i].clone()).collect(),
        };
        out_schema.validate()?;

        let full = self.read_all(snapshot)?;
        let rows_scanned = full.row_count() as u64;
        let mut out = Relation::empty(out_schema)?;
        for i in 0..full.row_count() {
            let row = full.row(i);
            let keep = match predicate {
                None => true,
                Some(expr) => crate::engine::eval::predicate_matches(expr, schema, &row)
                    .map_err(|e| TableError::Type(e.to_string()))?,
            };
            if keep {
                out.push_row(proj_idx.iter().map(|&i| row[i].clone()).collect())?;
            }
        }
        Ok(ScanResult {
            relation: out,
            rows_scanned,
        })
    }

    /// Chain from the given snapshot back to the root via parent links,
    /// newest first.
    pub fn snapshot_lineage(&self, id: &SnapshotId) -> Result<Vec<SnapshotId>, TableError> {
        let mut chain = Vec::new();
        let mut cursor = Some(id.clone());
        while let Some(cur) = cursor {
            let snap = self.load_snapshot(&cur)?;
            chain.push(cur);
            cursor = snap.parent;
        }
        Ok(chain)
    }
}
