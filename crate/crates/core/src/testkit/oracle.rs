//! Naive row-at-a-time reference interpreter.
//!
//! Written straight from the documented engine semantics and kept
//! deliberately independent of the engine's own evaluation path: it walks
//! rows one by one, matches group keys by linear scan, and derives output
//! names and types with its own little inference. It shares only the AST
//! and value data structures with the implementation it checks.
//!
//! Semantics implemented here (and nowhere borrowed from the engine):
//! NULL-strict scalar ops with Kleene AND/OR; division always to float and
//! by zero always an error; `COUNT(col)`/`SUM`/`AVG`/`MIN`/`MAX` skipping
//! NULLs with NULL results over empty sets (except COUNT); integer sums
//! exact, float sums in row order, `AVG = sum / count` once at the end;
//! group keys equal with NULL == NULL and -0.0 == 0.0; stable sort with
//! NULLs last ascending / first descending, floats in IEEE total order.

use crate::sqlsubset::ast::{
    AggregateFn, BinaryOp, Expr, Literal, SelectItem, SelectQuery, SortDir,
};
use crate::tables::{ColumnType, Relation, Value};

/// Plain row-major table, the oracle's output shape.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTable {
    pub columns: Vec<(String, ColumnType)>,
    pub rows: Vec<Vec<Value>>,
}

impl OracleTable {
    pub fn from_relation(rel: &Relation) -> OracleTable {
        OracleTable {
            columns: rel
                .schema()
                .columns
                .iter()
                .map(|c| (c.name.clone(), c.ty))
                .collect(),
            rows: rel.rows().collect(),
        }
    }
}

type OracleResult<T> = Result<T, String>;

fn as_num(v: &Value) -> Option<f64> {
    match v {
        Value::Int(i) => Some(*i as f64),
        Value::Float(f) => Some(*f),
        _ => None,
    }
}

fn eval_value(expr: &Expr, columns: &[(String, ColumnType)], row: &[Value]) -> OracleResult<Value> {
    match expr {
        Expr::Column(name) => {
            let idx = columns
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| format!("unknown column {name}"))?;
            Ok(row[idx].clone())
        }
        Expr::Literal(Literal::Int(i)) => Ok(Value::Int(*i)),
        Expr::Literal(Literal::Float(f)) => Ok(Value::Float(*f)),
        Expr::Literal(Literal::Str(s)) => Ok(Value::Str(s.clone())),
        Expr::Literal(Literal::Bool(b)) => Ok(Value::Bool(*b)),
        Expr::Not(inner) => match eval_value(inner, columns, row)? {
            Value::Bool(b) => Ok(Value::Bool(!b)),
            Value::Null => Ok(Value::Null),
            other => Err(format!("NOT over {other:?}")),
        },
        Expr::Binary { op, left, right } => {
            let l = eval_value(left, columns, row)?;
            let r = eval_value(right, columns, row)?;
            binary(*op, &l, &r)
        }
        Expr::Aggregate { .. } => Err("aggregate outside grouping".to_string()),
    }
}

fn binary(op: BinaryOp, l: &Value, r: &Value) -> OracleResult<Value> {
    use BinaryOp::*;
    match op {
        And | Or => {
            let to_opt = |v: &Value| -> OracleResult<Option<bool>> {
                match v {
                    Value::Bool(b) => Ok(Some(*b)),
                    Value::Null => Ok(None),
                    other => Err(format!("logical op over {other:?}")),
                }
            };
            let (a, b) = (to_opt(l)?, to_opt(r)?);
            let out = if op == And {
                match (a, b) {
                    (Some(false), _) | (_, Some(false)) => Some(false),
                    (Some(true), Some(true)) => Some(true),
                    _ => None,
                }
            } else {
                match (a, b) {
                    (Some(true), _) | (_, Some(true)) => Some(true),
                    (Some(false), Some(false)) => Some(false),
                    _ => None,
                }
            };
            Ok(out.map_or(Value::Null, Value::Bool))
        }
        _ => {
            if matches!(l, Value::Null) || matches!(r, Value::Null) {
                return Ok(Value::Null);
            }
            match op {
                Eq | NotEq | Lt | LtEq | Gt | GtEq => {
                    let ord = match (l, r) {
                        (Value::Int(a), Value::Int(b)) => a.cmp(b),
                        (Value::Str(a), Value::Str(b)) => a.cmp(b),
                        (Value::Bool(a), Value::Bool(b)) => {
                            if !matches!(op, Eq | NotEq) {
                                return Err("bool ordering".to_string());
                            }
                            a.cmp(b)
                        }
                        _ => match (as_num(l), as_num(r)) {
                            (Some(a), Some(b)) => a
                                .partial_cmp(&b)
                                .ok_or_else(|| "incomparable floats".to_string())?,
                            _ => return Err(format!("cannot compare {l:?} and {r:?}")),
                        },
                    };
                    let b = match op {
                        Eq => ord.is_eq(),
                        NotEq => !ord.is_eq(),
                        Lt => ord.is_lt(),
                        LtEq => ord.is_le(),
                        Gt => ord.is_gt(),
                        GtEq => ord.is_ge(),
                        _ => unreachable!(),
                    };
                    Ok(Value::Bool(b))
                }
                Div => {
                    let (a, b) = (
                        as_num(l).ok_or("non-numeric division")?,
                        as_num(r).ok_or("non-numeric division")?,
                    );
                    if b == 0.0 {
                        return Err("division by zero".to_string());
                    }
                    Ok(Value::Float(a / b))
                }
                Add | Sub | Mul => match (l, r) {
                    (Value::Int(a), Value::Int(b)) => {
                        let v = match op {
                            Add => a.checked_add(*b),
                            Sub => a.checked_sub(*b),
                            Mul => a.checked_mul(*b),
                            _ => unreachable!(),
                        };
                        v.map(Value::Int).ok_or_else(|| "overflow".to_string())
                    }
                    _ => {
                        let (a, b) = (
                            as_num(l).ok_or("non-numeric arithmetic")?,
                            as_num(r).ok_or("non-numeric arithmetic")?,
                        );
                        Ok(Value::Float(match op {
                            Add => a + b,
                            Sub => a - b,
                            Mul => a * b,
                            _ => unreachable!(),
                        }))
                    }
                },
                _ => unreachable!(),
            }
        }
    }
}

fn keys_equal(a: &[Value], b: &[Value]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| match (x, y) {
            (Value::Null, Value::Null) => true,
            (Value::Float(p), Value::Float(q)) => {
                (p.is_nan() && q.is_nan()) || p == q // IEEE ==: -0.0 == 0.0
            }
            _ => x == y,
        })
}

fn infer_type(
    expr: &Expr,
    columns: &[(String, ColumnType)],
) -> OracleResult<ColumnType> {
    match expr {
        Expr::Column(name) => columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| format!("unknown column {name}")),
        Expr::Literal(Literal::Int(_)) => Ok(ColumnType::Int64),
        Expr::Literal(Literal::Float(_)) => Ok(ColumnType::Float64),
        Expr::Literal(Literal::Str(_)) => Ok(ColumnType::String),
        Expr::Literal(Literal::Bool(_)) => Ok(ColumnType::Bool),
        Expr::Not(_) => Ok(ColumnType::Bool),
        Expr::Binary { op, left, right } => {
            if op.is_comparison() || op.is_logical() {
                return Ok(ColumnType::Bool);
            }
            let lt = infer_type(left, columns)?;
            let rt = infer_type(right, columns)?;
            if *op == BinaryOp::Div
                || lt == ColumnType::Float64
                || rt == ColumnType::Float64
            {
                Ok(ColumnType::Float64)
            } else {
                Ok(ColumnType::Int64)
            }
        }
        Expr::Aggregate { func, column } => match func {
            AggregateFn::CountStar | AggregateFn::Count => Ok(ColumnType::Int64),
            AggregateFn::Avg => Ok(ColumnType::Float64),
            AggregateFn::Sum | AggregateFn::Min | AggregateFn::Max => {
                let name = column.as_ref().ok_or("aggregate without column")?;
                columns
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, t)| *t)
                    .ok_or_else(|| format!("unknown column {name}"))
            }
        },
    }
}

fn aggregate(
    func: AggregateFn,
    column: Option<&str>,
    columns: &[(String, ColumnType)],
    rows: &[&Vec<Value>],
) -> OracleResult<Value> {
    if func == AggregateFn::CountStar {
        return Ok(Value::Int(rows.len() as i64));
    }
    let name = column.ok_or("aggregate without column")?;
    let idx = columns
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| format!("unknown column {name}"))?;
    let ty = columns[idx].1;
    let present: Vec<&Value> = rows
        .iter()
        .map(|r| &r[idx])
        .filter(|v| !matches!(v, Value::Null))
        .collect();
    match func {
        AggregateFn::Count => Ok(Value::Int(present.len() as i64)),
        AggregateFn::Sum | AggregateFn::Avg => {
            if present.is_empty() {
                return Ok(Value::Null);
            }
            let mut int_sum: i64 = 0;
            let mut float_sum: f64 = 0.0;
            for v in &present {
                match v {
                    Value::Int(i) => {
                        int_sum = int_sum.checked_add(*i).ok_or("overflow")?;
                    }
                    Value::Float(f) => float_sum += f,
                    other => return Err(format!("sum over {other:?}")),
                }
            }
            let total = if ty == ColumnType::Int64 {
                int_sum as f64
            } else {
                float_sum
            };
            if func == AggregateFn::Sum {
                Ok(if ty == ColumnType::Int64 {
                    Value::Int(int_sum)
                } else {
                    Value::Float(float_sum)
                })
            } else {
                Ok(Value::Float(total / present.len() as f64))
            }
        }
        AggregateFn::Min | AggregateFn::Max => {
            let mut best: Option<&Value> = None;
            for v in &present {
                let take = match best {
                    None => true,
                    Some(cur) => {
                        let ord = match (*v, cur) {
                            (Value::Int(a), Value::Int(b)) => a.cmp(b),
                            (Value::Float(a), Value::Float(b)) => a.total_cmp(b),
                            (Value::Str(a), Value::Str(b)) => a.cmp(b),
                            _ => return Err("mixed-type min/max".to_string()),
                        };
                        if func == AggregateFn::Min {
                            ord.is_lt()
                        } else {
                            ord.is_gt()
                        }
                    }
                };
                if take {
                    best = Some(v);
                }
            }
            Ok(best.cloned().unwrap_or(Value::Null))
        }
        AggregateFn::CountStar => unreachable!(),
    }
}

fn eval_grouped(
    expr: &Expr,
    columns: &[(String, ColumnType)],
    rows: &[&Vec<Value>],
) -> OracleResult<Value> {
    match expr {
        Expr::Aggregate { func, column } => aggregate(*func, column.as_deref(), columns, rows),
        Expr::Column(_) => {
            let first = rows.first().ok_or("empty group")?;
            eval_value(expr, columns, first)
        }
        Expr::Literal(_) => eval_value(expr, columns, &[]),
        Expr::Not(inner) => match eval_grouped(inner, columns, rows)? {
            Value::Bool(b) => Ok(Value::Bool(!b)),
            Value::Null => Ok(Value::Null),
            other => Err(format!("NOT over {other:?}")),
        },
        Expr::Binary { op, left, right } => {
            let l = eval_grouped(left, columns, rows)?;
            let r = eval_grouped(right, columns, rows)?;
            binary(*op, &l, &r)
        }
    }
}

fn sort_key_cmp(a: &Value, b: &Value) -> std::cmp::Ordering {
    use std::cmp::Ordering;
    match (a, b) {
        (Value::Null, Value::Null) => Ordering::Equal,
        (Value::Null, _) => Ordering::Greater,
        (_, Value::Null) => Ordering::Less,
        (Value::Int(x), Value::Int(y)) => x.cmp(y),
        (Value::Float(x), Value::Float(y)) => x.total_cmp(y),
        (Value::Int(x), Value::Float(y)) => (*x as f64).total_cmp(y),
        (Value::Float(x), Value::Int(y)) => x.total_cmp(&(*y as f64)),
        (Value::Str(x), Value::Str(y)) => x.cmp(y),
        (Value::Bool(x), Value::Bool(y)) => x.cmp(y),
        _ => Ordering::Equal,
    }
}

/// Execute a query over a table the slow, obvious way.
pub fn run_query(q: &SelectQuery, input: &OracleTable) -> OracleResult<OracleTable> {
    // Filter.
    let mut kept: Vec<&Vec<Value>> = Vec::new();
    for row in &input.rows {
        let keep = match &q.where_clause {
            None => true,
            Some(pred) => match eval_value(pred, &input.columns, row)? {
                Value::Bool(b) => b,
                Value::Null => false,
                other => return Err(format!("predicate value {other:?}")),
            },
        };
        if keep {
            kept.push(row);
        }
    }

    // Expand items.
    let mut items: Vec<(Expr, Option<String>)> = Vec::new();
    for item in &q.items {
        match item {
            SelectItem::Star => {
                for (name, _) in &input.columns {
                    items.push((Expr::Column(name.clone()), Some(name.clone())));
                }
            }
            SelectItem::Expr { expr, alias } => items.push((expr.clone(), alias.clone())),
        }
    }
    let out_columns: Vec<(String, ColumnType)> = items
        .iter()
        .enumerate()
        .map(|(i, (expr, alias))| {
            let name = match (alias, expr) {
                (Some(a), _) => a.clone(),
                (None, Expr::Column(c)) => c.clone(),
                _ => format!("col_{i}"),
            };
            infer_type(expr, &input.columns).map(|t| (name, t))
        })
        .collect::<OracleResult<_>>()?;

    let grouped = !q.group_by.is_empty()
        || items.iter().any(|(e, _)| e.contains_aggregate());

    let mut out_rows: Vec<Vec<Value>> = Vec::new();
    if grouped {
        let groups: Vec<Vec<&Vec<Value>>> = if q.group_by.is_empty() {
            vec![kept]
        } else {
            let key_idx: Vec<usize> = q
                .group_by
                .iter()
                .map(|name| {
                    input
                        .columns
                        .iter()
                        .position(|(n, _)| n == name)
                        .ok_or_else(|| format!("unknown column {name}"))
                })
                .collect::<OracleResult<_>>()?;
            let mut keys: Vec<Vec<Value>> = Vec::new();
            let mut groups: Vec<Vec<&Vec<Value>>> = Vec::new();
            for row in kept {
                let key: Vec<Value> = key_idx.iter().map(|&i| row[i].clone()).collect();
                match keys.iter().position(|k| keys_equal(k, &key)) {
                    Some(g) => groups[g].push(row),
                    None => {
                        keys.push(key);
                        groups.push(vec![row]);
                    }
                }
            }
            groups
        };
        for group in &groups {
            let mut row = Vec::new();
            for ((expr, _), (_, ty)) in items.iter().zip(&out_columns) {
                let v = eval_grouped(expr, &input.columns, group)?;
                row.push(coerce(v, *ty)?);
            }
            out_rows.push(row);
        }
    } else {
        for row in kept {
            let mut out = Vec::new();
            for ((expr, _), (_, ty)) in items.iter().zip(&out_columns) {
                let v = eval_value(expr, &input.columns, row)?;
                out.push(coerce(v, *ty)?);
            }
            out_rows.push(out);
        }
    }

    if let Some((col, dir)) = &q.order_by {
        let idx = out_columns
            .iter()
            .position(|(n, _)| n == col)
            .ok_or_else(|| format!("unknown order column {col}"))?;
        match dir {
            SortDir::Asc => out_rows.sort_by(|a, b| sort_key_cmp(&a[idx], &b[idx])),
            SortDir::Desc => out_rows.sort_by(|a, b| sort_key_cmp(&b[idx], &a[idx])),
        }
    }
    if let Some(n) = q.limit {
        out_rows.truncate(n as usize);
    }

    Ok(OracleTable {
        columns: out_columns,
        rows: out_rows,
    })
}

fn coerce(v: Value, ty: ColumnType) -> OracleResult<Value> {
    match (v, ty) {
        (Value::Int(i), ColumnType::Float64) => Ok(Value::Float(i as f64)),
        (v, _) => Ok(v),
    }
}
