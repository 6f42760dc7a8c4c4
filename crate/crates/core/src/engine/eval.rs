//! Row-level expression evaluation with SQL NULL semantics.
//!
//! The rules, pinned here because the reference interpreter in the test
//! tree implements them independently:
//!
//! - scalar operators are strict: any NULL operand yields NULL, except
//!   AND/OR which use Kleene three-valued logic and NOT which maps NULL to
//!   NULL;
//! - comparisons promote INT64 to FLOAT64 when mixed; strings compare
//!   bytewise; booleans support only `=` and `!=`;
//! - arithmetic over two INT64 stays INT64 (checked, overflow is an error)
//!   except division, which always yields FLOAT64; division by zero is an
//!   error, not NULL, literal or not;
//! - a WHERE predicate keeps a row only when it evaluates to exactly TRUE.

use crate::sqlsubset::ast::{BinaryOp, Expr, Literal};
use crate::tables::{Schema, Value};

use super::EngineError;

pub fn literal_value(l: &Literal) -> Value {
    match l {
        Literal::Int(i) => Value::Int(*i),
        Literal::Float(x) => Value::Float(*x),
        Literal::Str(s) => Value::Str(s.clone()),
        Literal::Bool(b) => Value::Bool(*b),
    }
}

fn num(v: &Value) -> Option<f64> {
    match v {
        Value::Int(i) => Some(*i as f64),
        Value::Float(x) => Some(*x),
        _ => None,
    }
}

fn compare(op: BinaryOp, left: &Value, right: &Value) -> Result<Value, EngineError> {
    use std::cmp::Ordering;
    let ord = match (left, right) {
        (Value::Int(a), Value::Int(b)) => a.cmp(b),
        (Value::Str(a), Value::Str(b)) => a.cmp(b),
        (Value::Bool(a), Value::Bool(b)) => {
            if !matches!(op, BinaryOp::Eq | BinaryOp::NotEq) {
                return Err(EngineError::Type(format!(
                    "BOOL supports only = and !=, not {}",
                    op.symbol()
                )));
            }
            a.cmp(b)
        }
        (a, b) => match (num(a), num(b)) {
            (Some(x), Some(y)) => x
                .partial_cmp(&y)
                .unwrap_or_else(|| x.to_bits().cmp(&y.to_bits())),
            _ => {
                return Err(EngineError::Type(format!(
                    "cannot compare {left:?} {} {right:?}",
                    op.symbol()
                )))
            }
        },
    };
    let b = match op {
        BinaryOp::Eq => ord == Ordering::Equal,
        BinaryOp::NotEq => ord != Ordering::Equal,
        BinaryOp::Lt => ord == Ordering::Less,
        BinaryOp::LtEq => ord != Ordering::Greater,
        BinaryOp::Gt => ord == Ordering::Greater,
        BinaryOp::GtEq => ord != Ordering::Less,
        _ => unreachable!(),
    };
    Ok(Value::Bool(b))
}

fn arithmetic(op: BinaryOp, left: &Value, right: &Value) -> Result<Value, EngineError> {
    if op == BinaryOp::Div {
        let (x, y) = match (num(left), num(right)) {
            (Some(x), Some(y)) => (x, y),
            _ => {
                return Err(EngineError::Type(format!(
                    "arithmetic over non-numeric values {left:?}, {right:?}"
                )))
            }
        };
        if y == 0.0 {
            return Err(EngineError::DivisionByZero);
        }
        return Ok(Value::Float(x / y));
    }
    match (left, right) {
        (Value::Int(a), Value::Int(b)) => {
            let r = match op {
                BinaryOp::Add => a.checked_add(*b),
                BinaryOp::Sub => a.checked_sub(*b),
                BinaryOp::Mul => a.checked_mul(*b),
                _ => unreachable!(),
            };
            r.map(Value::Int)
                .ok_or_else(|| EngineError::Type("INT64 overflow".into()))
        }
        (a, b) => match (num(a), num(b)) {
            (Some(x), Some(y)) => Ok(Value::Float(match op {
                BinaryOp::Add => x + y,
                BinaryOp::Sub => x - y,
                BinaryOp::Mul => x * y,
                _ => unreachable!(),
            })),
            _ => Err(EngineError::Type(format!(
                "arithmetic over non-numeric values {a:?}, {b:?}"
            ))),
        },
    }
}

/// Apply a binary operator to two already-evaluated values.
pub fn apply_binary(op: BinaryOp, left: &Value, right: &Value) -> Result<Value, EngineError> {
    if op.is_logical() {
        // Kleene logic; NULL is "unknown".
        let l = match left {
            Value::Bool(b) => Some(*b),
            Value::Null => None,
            other => {
                return Err(EngineError::Type(format!(
                    "{} over non-boolean value {other:?}",
                    op.symbol()
                )))
            }
        };
        let r = match right {
            Value::Bool(b) => Some(*b),
            Value::Null => None,
            other => {
                return Err(EngineError::Type(format!(
                    "{} over non-boolean value {other:?}",
                    op.symbol()
                )))
            }
        };
        let out = match op {
            BinaryOp::And => match (l, r) {
                (Some(false), _) | (_, Some(false)) => Some(false),
                (Some(true), Some(true)) => Some(true),
                _ => None,
            },
            BinaryOp::Or => match (l, r) {
                (Some(true), _) | (_, Some(true)) => Some(true),
                (Some(false), Some(false)) => Some(false),
                _ => None,
            },
            _ => unreachable!(),
        };
        return Ok(out.map_or(Value::Null, Value::Bool));
    }
    if left.is_null() || right.is_null() {
        return Ok(Value::Null);
    }
    if op.is_comparison() {
        compare(op, left, right)
    } else {
        arithmetic(op, left, right)
    }
}

/// Evaluate a scalar expression against one row. Aggregates are rejected;
/// they only make sense under grouped evaluation.
pub fn eval_scalar(expr: &Expr, schema: &Schema, row: &[Value]) -> Result<Value, EngineError> {
    match expr {
        Expr::Column(name) => {
            let idx = schema
                .index_of(name)
                .ok_or_else(|| EngineError::UnknownColumn(name.clone()))?;
            Ok(row[idx].clone())
        }
        Expr::Literal(l) => Ok(literal_value(l)),
        Expr::Binary { op, left, right } => {
            let l = eval_scalar(left, schema, row)?;
            let r = eval_scalar(right, schema, row)?;
            apply_binary(*op, &l, &r)
        }
        Expr::Not(inner) => match eval_scalar(inner, schema, row)? {
            Value::Bool(b) => Ok(Value::Bool(!b)),
            Value::Null => Ok(Value::Null),
            other => Err(EngineError::Type(format!("NOT over non-boolean {other:?}"))),
        },
        Expr::Aggregate { .. } => Err(EngineError::Type(
            "aggregate in scalar context".into(),
        )),
    }
}

/// True only when the predicate evaluates to TRUE (NULL and FALSE both
/// exclude the row).
pub fn predicate_matches(expr: &Expr, schema: &Schema, row: &[Value]) -> Result<bool, EngineError> {
    match eval_scalar(expr, schema, row)? {
        Value::Bool(b) => Ok(b),
        Value::Null => Ok(false),
        other => Err(EngineError::Type(format!(
            "predicate evaluated to non-boolean {other:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sqlsubset::parse;
    use crate::tables::ColumnType;

    fn schema() -> Schema {
        Schema::new(vec![
            ("a", ColumnType::Int64),
            ("f", ColumnType::Float64),
            ("s", ColumnType::String),
        ])
        .unwrap()
    }

    fn where_of(sql: &str) -> Expr {
        parse(sql).unwrap().where_clause.unwrap()
    }

    #[test]
    fn null_propagates_through_comparison() {
        let e = where_of("SELECT a FROM t WHERE a > 1");
        let row = vec![Value::Null, Value::Null, Value::Null];
        assert_eq!(eval_scalar(&e, &schema(), &row).unwrap(), Value::Null);
        assert!(!predicate_matches(&e, &schema(), &row).unwrap());
    }

    #[test]
    fn kleene_and_or() {
        let s = schema();
        let null_row = vec![Value::Null, Value::Float(1.0), Value::Str("x".into())];
        // NULL AND FALSE = FALSE
        let e = where_of("SELECT a FROM t WHERE a > 0 AND f < 0.0");
        assert_eq!(eval_scalar(&e, &s, &null_row).unwrap(), Value::Bool(false));
        // NULL OR TRUE = TRUE
        let e = where_of("SELECT a FROM t WHERE a > 0 OR f > 0.0");
        assert_eq!(eval_scalar(&e, &s, &null_row).unwrap(), Value::Bool(true));
        // NULL AND TRUE = NULL
        let e = where_of("SELECT a FROM t WHERE a > 0 AND f > 0.0");
        assert_eq!(eval_scalar(&e, &s, &null_row).unwrap(), Value::Null);
    }

    #[test]
    fn division_by_zero_is_an_error_even_for_literals() {
        let e = where_of("SELECT a FROM t WHERE 1 / 0 > 1");
        let row = vec![Value::Int(1), Value::Float(1.0), Value::Str("".into())];
        assert!(matches!(
            eval_scalar(&e, &schema(), &row),
            Err(EngineError::DivisionByZero)
        ));
        let e = where_of("SELECT a FROM t WHERE a / f > 1");
        let row = vec![Value::Int(1), Value::Float(0.0), Value::Str("".into())];
        assert!(matches!(
            eval_scalar(&e, &schema(), &row),
            Err(EngineError::DivisionByZero)
        ));
    }

    #[test]
    fn int_division_promotes_to_float() {
        let e = where_of("SELECT a FROM t WHERE 3 / 2 = 1.5");
        let row = vec![Value::Int(0), Value::Float(0.0), Value::Str("".into())];
        assert!(predicate_matches(&e, &schema(), &row).unwrap());
    }

    #[test]
    fn string_comparison_is_lexicographic() {
        let e = where_of("SELECT s FROM t WHERE s >= '2019-04-01'");
        let s = schema();
        let hit = vec![Value::Int(0), Value::Float(0.0), Value::Str("2019-04-02".into())];
        let miss = vec![Value::Int(0), Value::Float(0.0), Value::Str("2019-03-31".into())];
        assert!(predicate_matches(&e, &s, &hit).unwrap());
        assert!(!predicate_matches(&e, &s, &miss).unwrap());
    }

    #[test]
    fn mixed_numeric_comparison_promotes() {
        let e = where_of("SELECT a FROM t WHERE a = 1.0");
        let row = vec![Value::Int(1), Value::Float(0.0), Value::Str("".into())];
        assert!(predicate_matches(&e, &schema(), &row).unwrap());
    }
}
