//! In-memory columnar evaluator for the SQL subset, expectation checks, and
//! the external-function protocol.
//!
//! Execution order is filter, then project/aggregate, then sort, then
//! limit. Aggregation contract (mirrored by the reference interpreter in
//! the test tree, so every detail matters):
//!
//! - `COUNT(*)` counts all rows of the group, `COUNT(col)` the non-NULL
//!   values;
//! - `SUM`/`AVG`/`MIN`/`MAX` skip NULLs and yield NULL when no value
//!   remains; INT64 sums accumulate exactly (checked), FLOAT64 sums
//!   accumulate in row order; `AVG` divides the sum by the non-NULL count;
//! - `GROUP BY` keys compare with NULL equal to NULL; groups appear in
//!   first-seen order;
//! - `ORDER BY` is a stable sort; NULLs sort last ascending, first
//!   descending; without `ORDER BY`, input order is preserved.

pub mod check;
pub mod eval;
pub mod external;

use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use thiserror::Error;

use crate::sqlsubset::ast::{AggregateFn, Expr, SelectQuery, SortDir};
use crate::sqlsubset::{expand_items, output_schema};
use crate::tables::{ColumnType, Relation, Value};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("unknown column '{0}'")]
    UnknownColumn(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("empty aggregate: {0}")]
    EmptyAggregate(String),
    #[error("{0}")]
    Analyze(#[from] crate::sqlsubset::AnalyzeError),
    #[error("check parse: {0}")]
    CheckParse(String),
    #[error("external function exited with code {code}: {stderr}")]
    NonZeroExit { code: i32, stderr: String },
    #[error("external function protocol: {0}")]
    Protocol(String),
    #[error("external function timed out after {0} s")]
    Timeout(u64),
    #[error("external function i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("internal: {0}")]
    Internal(String),
}

impl From<crate::tables::TableError> for EngineError {
    fn from(e: crate::tables::TableError) -> Self {
        EngineError::Internal(e.to_string())
    }
}

fn canon_f64_bits(x: f64) -> u64 {
    if x.is_nan() {
        f64::NAN.to_bits()
    } else if x == 0.0 {
        0
    } else {
        x.to_bits()
    }
}

/// Grouping key: NULLs group together, -0.0 and 0.0 are one key.
#[derive(Clone, Debug)]
struct GroupKey(Vec<Value>);

impl PartialEq for GroupKey {
    fn eq(&self, other: &Self) -> bool {
        self.0.len() == other.0.len()
            && self.0.iter().zip(&other.0).all(|(a, b)| match (a, b) {
                (Value::Null, Value::Null) => true,
                (Value::Int(x), Value::Int(y)) => x == y,
                (Value::Float(x), Value::Float(y)) => canon_f64_bits(*x) == canon_f64_bits(*y),
                (Value::Str(x), Value::Str(y)) => x == y,
                (Value::Bool(x), Value::Bool(y)) => x == y,
                _ => false,
            })
    }
}

impl Eq for GroupKey {}

impl Hash for GroupKey {
    fn hash<H: Hasher>(&self, state: &mut H) {
        for v in &self.0 {
            match v {
                Value::Null => 0u8.hash(state),
                Value::Int(x) => {
                    1u8.hash(state);
                    x.hash(state);
                }
                Value::Float(x) => {
                    2u8.hash(state);
                    canon_f64_bits(*x).hash(state);
                }
                Value::Str(s) => {
                    3u8.hash(state);
                    s.hash(state);
                }
                Value::Bool(b) => {
                    4u8.hash(state);
                    b.hash(state);
                }
            }
        }
    }
}

fn compute_aggregate(
    func: AggregateFn,
    column: Option<&str>,
    rows: &[usize],
    input: &Relation,
) -> Result<Value, EngineError> {
    if func == AggregateFn::CountStar {
        return Ok(Value::Int(rows.len() as i64));
    }
    let name = column.ok_or_else(|| EngineError::Type("aggregate needs a column".into()))?;
    let idx = input
        .schema()
        .index_of(name)
        .ok_or_else(|| EngineError::UnknownColumn(name.to_string()))?;
    let values = input.column_values(idx);
    let non_null = || rows.iter().map(|&r| &values[r]).filter(|v| !v.is_null());

    match func {
        AggregateFn::Count => Ok(Value::Int(non_null().count() as i64)),
        AggregateFn::Sum | AggregateFn::Avg => {
            let ty = input.schema().columns[idx].ty;
            let mut count = 0i64;
            let mut int_sum = 0i64;
            let mut float_sum = 0.0f64;
            for v in non_null() {
                count += 1;
                match v {
                    Value::Int(i) => {
                        int_sum = int_sum
                            .checked_add(*i)
                            .ok_or_else(|| EngineError::Type("INT64 overflow in SUM".into()))?;
                    }
                    Value::Float(x) => float_sum += x,
                    other => {
                        return Err(EngineError::Type(format!(
                            "{} over non-numeric value {other:?}",
                            func.name()
                        )))
                    }
                }
            }
            if count == 0 {
                return Ok(Value::Null);
            }
            match func {
                AggregateFn::Sum => Ok(match ty {
                    ColumnType::Int64 => Value::Int(int_sum),
                    _ => Value::Float(float_sum),
                }),
                AggregateFn::Avg => {
                    let total = match ty {
                        ColumnType::Int64 => int_sum as f64,
                        _ => float_sum,
                    };
                    Ok(Value::Float(total / count as f64))
                }
                _ => unreachable!(),
            }
        }
        AggregateFn::Min | AggregateFn::Max => {
            let mut best: Option<Value> = None;
            for v in non_null() {
                let replace = match &best {
                    None => true,
                    Some(cur) => {
                        let ord = order_values(v, cur)?;
                        if func == AggregateFn::Min {
                            ord == std::cmp::Ordering::Less
                        } else {
                            ord == std::cmp::Ordering::Greater
                        }
                    }
                };
                if replace {
                    best = Some(v.clone());
                }
            }
            Ok(best.unwrap_or(Value::Null))
        }
        AggregateFn::CountStar => unreachable!(),
    }
}

fn order_values(a: &Value, b: &Value) -> Result<std::cmp::Ordering, EngineError> {
    Ok(match (a, b) {
        (Value::Int(x), Value::Int(y)) => x.cmp(y),
        (Value::Float(x), Value::Float(y)) => x.total_cmp(y),
        (Value::Int(x), Value::Float(y)) => (*x as f64).total_cmp(y),
        (Value::Float(x), Value::Int(y)) => x.total_cmp(&(*y as f64)),
        (Value::Str(x), Value::Str(y)) => x.cmp(y),
        (Value::Bool(x), Value::Bool(y)) => x.cmp(y),
        _ => {
            return Err(EngineError::Type(format!(
                "cannot order {a:?} against {b:?}"
            )))
        }
    })
}

/// Ascending comparison with NULLs last; flip the arguments for descending
/// (which puts NULLs first).
fn sort_cmp(a: &Value, b: &Value) -> std::cmp::Ordering {
    use std::cmp::Ordering;
    match (a.is_null(), b.is_null()) {
        (true, true) => Ordering::Equal,
        (true, false) => Ordering::Greater,
        (false, true) => Ordering::Less,
        (false, false) => order_values(a, b).unwrap_or(Ordering::Equal),
    }
}

/// Evaluate an expression in grouped context: aggregates compute over the
/// group's rows, bare columns resolve to the group key.
fn eval_grouped(
    expr: &Expr,
    rows: &[usize],
    input: &Relation,
) -> Result<Value, EngineError> {
    match expr {
        Expr::Aggregate { func, column } => {
            compute_aggregate(*func, column.as_deref(), rows, input)
        }
        Expr::Column(name) => {
            // Parser guarantees this is a GROUP BY column; every row of the
            // group carries the same value.
            let idx = input
                .schema()
                .index_of(name)
                .ok_or_else(|| EngineError::UnknownColumn(name.clone()))?;
            let r = rows
                .first()
                .ok_or_else(|| EngineError::Internal("empty group".into()))?;
            Ok(input.column_values(idx)[*r].clone())
        }
        Expr::Literal(l) => Ok(eval::literal_value(l)),
        Expr::Binary { op, left, right } => {
            let l = eval_grouped(left, rows, input)?;
            let r = eval_grouped(right, rows, input)?;
            eval::apply_binary(*op, &l, &r)
        }
        Expr::Not(inner) => match eval_grouped(inner, rows, input)? {
            Value::Bool(b) => Ok(Value::Bool(!b)),
            Value::Null => Ok(Value::Null),
            other => Err(EngineError::Type(format!("NOT over non-boolean {other:?}"))),
        },
    }
}

fn coerce(value: Value, ty: ColumnType) -> Result<Value, EngineError> {
    match (value, ty) {
        (Value::Int(i), ColumnType::Float64) => Ok(Value::Float(i as f64)),
        (v, t) => {
            if v.conforms_to(t) {
                Ok(v)
            } else {
                Err(EngineError::Internal(format!(
                    "evaluated value {v:?} does not fit declared type {t}"
                )))
            }
        }
    }
}

/// Execute a query against an in-memory relation with bag semantics.
pub fn execute(q: &SelectQuery, input: &Relation) -> Result<Relation, EngineError> {
    let in_schema = input.schema();
    let out_schema = output_schema(q, in_schema)?;
    let items = expand_items(q, in_schema);

    // Filter.
    let mut kept: Vec<usize> = Vec::with_capacity(input.row_count());
    for i in 0..input.row_count() {
        let keep = match &q.where_clause {
            None => true,
            Some(pred) => eval::predicate_matches(pred, in_schema, &input.row(i))?,
        };
        if keep {
            kept.push(i);
        }
    }

    // Project or aggregate.
    let mut out_rows: Vec<Vec<Value>> = Vec::new();
    if q.is_aggregation() {
        let groups: Vec<Vec<usize>> = if q.group_by.is_empty() {
            // Global aggregation always emits exactly one row.
            vec![kept]
        } else {
            let key_idx: Vec<usize> = q
                .group_by
                .iter()
                .map(|name| {
                    in_schema
                        .index_of(name)
                        .ok_or_else(|| EngineError::UnknownColumn(name.clone()))
                })
                .collect::<Result<_, _>>()?;
            let mut order: Vec<Vec<usize>> = Vec::new();
            let mut seen: HashMap<GroupKey, usize> = HashMap::new();
            for &r in &kept {
                let key = GroupKey(
                    key_idx
                        .iter()
                        .map(|&c| input.column_values(c)[r].clone())
                        .collect(),
                );
                match seen.get(&key) {
                    Some(&g) => order[g].push(r),
                    None => {
                        seen.insert(key, order.len());
                        order.push(vec![r]);
                    }
                }
            }
            order
        };
        for rows in &groups {
            let mut row = Vec::with_capacity(items.len());
            for ((expr, _), col) in items.iter().zip(&out_schema.columns) {
                let v = eval_grouped(expr, rows, input)?;
                row.push(coerce(v, col.ty)?);
            }
            out_rows.push(row);
        }
    } else {
        for &r in &kept {
            let in_row = input.row(r);
            let mut row = Vec::with_capacity(items.len());
            for ((expr, _), col) in items.iter().zip(&out_schema.columns) {
                let v = eval::eval_scalar(expr, in_schema, &in_row)?;
                row.push(coerce(v, col.ty)?);
            }
            out_rows.push(row);
        }
    }

    // Sort.
    if let Some((col, dir)) = &q.order_by {
        let idx = out_schema
            .index_of(col)
            .ok_or_else(|| EngineError::UnknownColumn(col.clone()))?;
        match dir {
            SortDir::Asc => out_rows.sort_by(|a, b| sort_cmp(&a[idx], &b[idx])),
            SortDir::Desc => out_rows.sort_by(|a, b| sort_cmp(&b[idx], &a[idx])),
        }
    }

    // Limit.
    if let Some(n) = q.limit {
        out_rows.truncate(n as usize);
    }

    Ok(Relation::from_rows(out_schema, out_rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sqlsubset::parse;
    use crate::tables::Schema;

    fn trips() -> Relation {
        let schema = Schema::new(vec![
            ("pickup", ColumnType::Int64),
            ("dropoff", ColumnType::Int64),
        ])
        .unwrap();
        Relation::from_rows(
            schema,
            vec![
                vec![Value::Int(1), Value::Int(2)],
                vec![Value::Int(1), Value::Int(2)],
                vec![Value::Int(3), Value::Int(4)],
            ],
        )
        .unwrap()
    }

    #[test]
    fn group_count_order_desc_matches_hand_computation() {
        // Brute force over the 3-row fixture: (1,2) twice, (3,4) once.
        let q = parse(
            "SELECT pickup, dropoff, COUNT(*) AS counts FROM t GROUP BY pickup, dropoff ORDER BY counts DESC",
        )
        .unwrap();
        let out = execute(&q, &trips()).unwrap();
        assert_eq!(out.row_count(), 2);
        assert_eq!(
            out.row(0),
            vec![Value::Int(1), Value::Int(2), Value::Int(2)]
        );
        assert_eq!(
            out.row(1),
            vec![Value::Int(3), Value::Int(4), Value::Int(1)]
        );
    }

    #[test]
    fn identity_projection_with_true_predicate_is_a_noop() {
        let q = parse("SELECT pickup, dropoff FROM t WHERE 1 = 1").unwrap();
        let out = execute(&q, &trips()).unwrap();
        assert_eq!(out, trips());
    }

    #[test]
    fn always_false_predicate_yields_empty_with_schema() {
        let q = parse("SELECT pickup, dropoff FROM t WHERE 1 = 0").unwrap();
        let out = execute(&q, &trips()).unwrap();
        assert_eq!(out.row_count(), 0);
        assert_eq!(out.schema(), trips().schema());
    }

    #[test]
    fn group_by_over_empty_input_yields_no_rows() {
        let schema = trips().schema().clone();
        let empty = Relation::empty(schema).unwrap();
        let q = parse("SELECT pickup, COUNT(*) AS n FROM t GROUP BY pickup").unwrap();
        let out = execute(&q, &empty).unwrap();
        assert_eq!(out.row_count(), 0);
    }

    #[test]
    fn global_aggregate_over_empty_input_yields_one_row() {
        let empty = Relation::empty(trips().schema().clone()).unwrap();
        let q = parse("SELECT COUNT(*) AS n, SUM(pickup) AS s FROM t").unwrap();
        let out = execute(&q, &empty).unwrap();
        assert_eq!(out.row_count(), 1);
        assert_eq!(out.row(0), vec![Value::Int(0), Value::Null]);
    }

    #[test]
    fn count_col_skips_nulls_count_star_does_not() {
        let schema = Schema::new(vec![("x", ColumnType::Int64)]).unwrap();
        let rel = Relation::from_rows(
            schema,
            vec![vec![Value::Int(5)], vec![Value::Null], vec![Value::Int(7)]],
        )
        .unwrap();
        let q = parse("SELECT COUNT(*) AS all_rows, COUNT(x) AS xs, SUM(x) AS s, AVG(x) AS m FROM t")
            .unwrap();
        let out = execute(&q, &rel).unwrap();
        assert_eq!(
            out.row(0),
            vec![Value::Int(3), Value::Int(2), Value::Int(12), Value::Float(6.0)]
        );
    }

    #[test]
    fn nulls_sort_last_asc_first_desc() {
        let schema = Schema::new(vec![("x", ColumnType::Int64)]).unwrap();
        let rel = Relation::from_rows(
            schema,
            vec![vec![Value::Int(2)], vec![Value::Null], vec![Value::Int(1)]],
        )
        .unwrap();
        let q = parse("SELECT x FROM t ORDER BY x ASC").unwrap();
        let out = execute(&q, &rel).unwrap();
        assert_eq!(
            (0..3).map(|i| out.row(i)[0].clone()).collect::<Vec<_>>(),
            vec![Value::Int(1), Value::Int(2), Value::Null]
        );
        let q = parse("SELECT x FROM t ORDER BY x DESC").unwrap();
        let out = execute(&q, &rel).unwrap();
        assert_eq!(
            (0..3).map(|i| out.row(i)[0].clone()).collect::<Vec<_>>(),
            vec![Value::Null, Value::Int(2), Value::Int(1)]
        );
    }

    #[test]
    fn order_by_is_stable_and_limit_truncates() {
        let schema = Schema::new(vec![
            ("k", ColumnType::Int64),
            ("tag", ColumnType::String),
        ])
        .unwrap();
        let rel = Relation::from_rows(
            schema,
            vec![
                vec![Value::Int(1), Value::Str("first".into())],
                vec![Value::Int(1), Value::Str("second".into())],
                vec![Value::Int(0), Value::Str("zero".into())],
            ],
        )
        .unwrap();
        let q = parse("SELECT k, tag FROM t ORDER BY k ASC LIMIT 2").unwrap();
        let out = execute(&q, &rel).unwrap();
        assert_eq!(out.row_count(), 2);
        assert_eq!(out.row(0)[1], Value::Str("zero".into()));
        assert_eq!(out.row(1)[1], Value::Str("first".into()));
    }

    #[test]
    fn star_expands_in_schema_order() {
        let q = parse("SELECT * FROM t").unwrap();
        let out = execute(&q, &trips()).unwrap();
        assert_eq!(out, trips());
    }
}
