//! Test-only support: the naive reference interpreter and seeded random
//! generators for relations, queries and whole projects.
//!
//! Compiled only for the test suites (feature `testkit`); nothing here is
//! part of the library surface.

pub mod gen;
pub mod harness;
pub mod oracle;
