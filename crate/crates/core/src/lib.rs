//! A desk-scale serverless lakehouse: content-addressed storage, a git-like
//! versioned catalog with branch/merge semantics, an Iceberg-style table
//! format with time travel, a SQL-subset pipeline compiler with predicate
//! pushdown and operator fusion, a transactional DAG runner, and a
//! heavy-tail workload analyzer.
//!
//! The crate is organized bottom-up:
//!
//! - [`objectstore`]: immutable, content-addressed blobs on disk
//! - [`tables`]: schemas, in-memory relations, table snapshots, scans
//! - [`sqlsubset`]: parser and AST for the pipeline SQL dialect
//! - [`engine`]: columnar evaluator, expectations, external functions
//! - [`catalog`]: branches, commits, compare-and-swap heads, merges
//! - [`planner`]: project ingestion, logical/physical plans, optimization
//! - [`runner`]: transform-audit-write execution over ephemeral branches
//! - [`workload`]: CCDF, power-law fitting and cost-share analysis
//! - [`workspace`]: the on-disk layout tying everything together

pub mod catalog;
pub mod demo;
pub mod engine;
pub mod objectstore;
pub mod planner;
pub mod runner;
pub mod sqlsubset;
pub mod tables;
pub mod util;
pub mod workload;
pub mod workspace;

#[cfg(feature = "testkit")]
pub mod testkit;
