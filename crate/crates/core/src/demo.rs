//! Seeded demo datasets: a synthetic taxi-trip table for the sample
//! pipeline and a heavy-tailed bytes-scanned workload for the analyzer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tables::{ColumnType, Relation, Schema, Value};
use crate::workload::{sample_power_law, WorkloadSample};

/// 80th percentile of the demo bytes-scanned distribution, scaled to
/// roughly 750 MB. A documented constant of the generator, not a measured
/// claim.
pub const DEMO_P80_BYTES: f64 = 750.0e6;

pub fn taxi_schema() -> Schema {
    Schema::new(vec![
        ("pickup_at", ColumnType::String),
        ("pickup_location_id", ColumnType::Int64),
        ("dropoff_location_id", ColumnType::Int64),
        ("passenger_count", ColumnType::Int64),
    ])
    .expect("static schema")
}

/// Deterministic synthetic taxi trips. Timestamps are ISO-8601 strings
/// spread over March-May 2019, so the sample pipeline's
/// `pickup_at >= '2019-04-01'` filter keeps roughly two thirds of the
/// rows. Passenger counts run 1..=30, putting the filtered mean well above
/// the expectation threshold of 10.
pub fn taxi_relation(rows: usize, seed: u64) -> Relation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rel = Relation::empty(taxi_schema()).expect("static schema");
    for _ in 0..rows {
        let day = rng.random_range(0..92u32); // March 1 .. May 31
        let (month, dom) = if day < 31 {
            (3, day + 1)
        } else if day < 61 {
            (4, day - 30)
        } else {
            (5, day - 60)
        };
        let ts = format!(
            "2019-{:02}-{:02}T{:02}:{:02}:{:02}",
            month,
            dom,
            rng.random_range(0..24u32),
            rng.random_range(0..60u32),
            rng.random_range(0..60u32)
        );
        let row = vec![
            Value::Str(ts),
            Value::Int(rng.random_range(1..=20i64)),
            Value::Int(rng.random_range(1..=20i64)),
            Value::Int(rng.random_range(1..=30i64)),
        ];
        rel.push_row(row).expect("row matches schema");
    }
    rel
}

/// Bytes-scanned workload mimicking the shape of partner query logs: a
/// power-law tail rescaled so the 80th percentile sits at
/// [`DEMO_P80_BYTES`], with credits charged as a per-query billing floor
/// plus a small byte-proportional component (minimum billing units are why
/// the bulk of small queries still carries most of the spend).
pub fn demo_bytes_workload(n: usize, seed: u64) -> WorkloadSample {
    let raw = sample_power_law(2.1, 1.0, n, seed).expect("valid parameters");
    let mut sorted = raw.clone();
    sorted.sort_by(f64::total_cmp);
    let p80_idx = ((0.8 * n as f64).ceil() as usize).clamp(1, n) - 1;
    let scale = DEMO_P80_BYTES / sorted[p80_idx];
    let bytes: Vec<f64> = raw.iter().map(|v| v * scale).collect();

    // Billing floor of 1 credit per query; the byte-linear part is
    // normalized to one ninth of the floor spend in aggregate.
    let total_bytes: f64 = bytes.iter().sum();
    let rate = n as f64 / (9.0 * total_bytes);
    let costs: Vec<f64> = bytes.iter().map(|b| 1.0 + b * rate).collect();
    WorkloadSample::new(bytes, Some(costs)).expect("generator invariants")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{cost_share_at, cost_share_curve};

    #[test]
    fn taxi_fixture_is_deterministic() {
        let a = taxi_relation(100, 7);
        let b = taxi_relation(100, 7);
        assert_eq!(a, b);
        assert_eq!(a.row_count(), 100);
        assert_ne!(a, taxi_relation(100, 8));
    }

    #[test]
    fn taxi_timestamps_are_iso_sortable() {
        let rel = taxi_relation(200, 1);
        for row in rel.rows() {
            match &row[0] {
                Value::Str(s) => {
                    assert_eq!(s.len(), 19);
                    assert!(s.starts_with("2019-0"));
                }
                other => panic!("expected string timestamp, got {other:?}"),
            }
        }
    }

    #[test]
    fn demo_workload_p80_lands_on_the_constant() {
        let w = demo_bytes_workload(10_000, 42);
        let mut sorted = w.values.clone();
        sorted.sort_by(f64::total_cmp);
        let p80 = sorted[(0.8 * sorted.len() as f64).ceil() as usize - 1];
        assert!((p80 - DEMO_P80_BYTES).abs() / DEMO_P80_BYTES < 1e-9);
    }

    #[test]
    fn demo_workload_share80_is_in_the_observed_band() {
        let w = demo_bytes_workload(10_000, 42);
        let curve = cost_share_curve(&w).unwrap();
        let share = cost_share_at(&curve, 80.0);
        assert!((0.7..=0.9).contains(&share), "share(80) = {share}");
    }
}
