//! Parser and analysis for the pipeline SQL subset.
//!
//! The accepted grammar (keywords case-insensitive, identifiers lowercased,
//! strings single-quoted with `''` escapes):
//!
//! ```text
//! SELECT items FROM ident [WHERE pred] [GROUP BY cols]
//!                         [ORDER BY col [ASC|DESC]] [LIMIT n]
//! ```
//!
//! Single-table FROM only: cross-table dependencies arise across files, one
//! query producing one artifact. JOINs, subqueries, CTEs and window
//! functions are rejected with a named `UnsupportedFeature`.

pub mod ast;
pub(crate) mod lexer;
mod parser;

use thiserror::Error;

use crate::tables::{Column, ColumnType, Schema};
use ast::{AggregateFn, BinaryOp, Expr, Literal, SelectItem, SelectQuery};

pub use parser::parse;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParseError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: u32,
        column: u32,
        message: String,
    },
    #[error("unsupported feature: {0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AnalyzeError {
    #[error("unknown column '{0}'")]
    UnknownColumn(String),
    #[error("type error: {0}")]
    Type(String),
}

/// Source tables a query reads from (always one in this dialect).
pub fn extract_references(q: &SelectQuery) -> Vec<String> {
    vec![q.from_table.clone()]
}

/// Infer the type of a scalar or aggregate expression against an input
/// schema.
pub fn infer_type(expr: &Expr, input: &Schema) -> Result<ColumnType, AnalyzeError> {
    match expr {
        Expr::Column(name) => input
            .column(name)
            .map(|c| c.ty)
            .ok_or_else(|| AnalyzeError::UnknownColumn(name.clone())),
        Expr::Literal(l) => Ok(match l {
            Literal::Int(_) => ColumnType::Int64,
            Literal::Float(_) => ColumnType::Float64,
            Literal::Str(_) => ColumnType::String,
            Literal::Bool(_) => ColumnType::Bool,
        }),
        Expr::Not(inner) => {
            let t = infer_type(inner, input)?;
            if t != ColumnType::Bool {
                return Err(AnalyzeError::Type(format!("NOT requires BOOL, got {t}")));
            }
            Ok(ColumnType::Bool)
        }
        Expr::Binary { op, left, right } => {
            let lt = infer_type(left, input)?;
            let rt = infer_type(right, input)?;
            if op.is_logical() {
                if lt != ColumnType::Bool || rt != ColumnType::Bool {
                    return Err(AnalyzeError::Type(format!(
                        "{} requires BOOL operands, got {lt} and {rt}",
                        op.symbol()
                    )));
                }
                return Ok(ColumnType::Bool);
            }
            if op.is_comparison() {
                let comparable = match (lt, rt) {
                    (ColumnType::Int64 | ColumnType::Float64, ColumnType::Int64 | ColumnType::Float64) => true,
                    (ColumnType::String, ColumnType::String) => true,
                    (ColumnType::Bool, ColumnType::Bool) => {
                        matches!(op, BinaryOp::Eq | BinaryOp::NotEq)
                    }
                    _ => false,
                };
                if !comparable {
                    return Err(AnalyzeError::Type(format!(
                        "cannot compare {lt} {} {rt}",
                        op.symbol()
                    )));
                }
                return Ok(ColumnType::Bool);
            }
            // Arithmetic: numeric only; division always promotes to float.
            let numeric = |t: ColumnType| matches!(t, ColumnType::Int64 | ColumnType::Float64);
            if !numeric(lt) || !numeric(rt) {
                return Err(AnalyzeError::Type(format!(
                    "arithmetic {} requires numeric operands, got {lt} and {rt}",
                    op.symbol()
                )));
            }
            if *op == BinaryOp::Div || lt == ColumnType::Float64 || rt == ColumnType::Float64 {
                Ok(ColumnType::Float64)
            } else {
                Ok(ColumnType::Int64)
            }
        }
        Expr::Aggregate { func, column } => match func {
            AggregateFn::CountStar | AggregateFn::Count => Ok(ColumnType::Int64),
            AggregateFn::Sum | AggregateFn::Avg | AggregateFn::Min | AggregateFn::Max => {
                let name = column
                    .as_ref()
                    .ok_or_else(|| AnalyzeError::Type(format!("{}() needs a column", func.name())))?;
                let ty = input
                    .column(name)
                    .map(|c| c.ty)
                    .ok_or_else(|| AnalyzeError::UnknownColumn(name.clone()))?;
                match func {
                    AggregateFn::Avg => {
                        if !matches!(ty, ColumnType::Int64 | ColumnType::Float64) {
                            return Err(AnalyzeError::Type(format!("AVG requires numeric, got {ty}")));
                        }
                        Ok(ColumnType::Float64)
                    }
                    AggregateFn::Sum => {
                        if !matches!(ty, ColumnType::Int64 | ColumnType::Float64) {
                            return Err(AnalyzeError::Type(format!("SUM requires numeric, got {ty}")));
                        }
                        Ok(ty)
                    }
                    AggregateFn::Min | AggregateFn::Max => {
                        if ty == ColumnType::Bool {
                            return Err(AnalyzeError::Type("MIN/MAX over BOOL".into()));
                        }
                        Ok(ty)
                    }
                    _ => unreachable!(),
                }
            }
        },
    }
}

/// Name of a projection item: alias if given, else the bare column name,
/// else `col_<i>` by position.
fn item_name(item: &SelectItem, index: usize) -> String {
    match item {
        SelectItem::Star => unreachable!("stars are expanded before naming"),
        SelectItem::Expr { alias: Some(a), .. } => a.clone(),
        SelectItem::Expr {
            expr: Expr::Column(name),
            ..
        } => name.clone(),
        SelectItem::Expr { .. } => format!("col_{index}"),
    }
}

/// Expand `*` items against an input schema.
pub fn expand_items(q: &SelectQuery, input: &Schema) -> Vec<(Expr, Option<String>)> {
    let mut out = Vec::new();
    for item in &q.items {
        match item {
            SelectItem::Star => {
                for c in &input.columns {
                    out.push((Expr::Column(c.name.clone()), Some(c.name.clone())));
                }
            }
            SelectItem::Expr { expr, alias } => out.push((expr.clone(), alias.clone())),
        }
    }
    out
}

/// Compute the output schema of a query applied to an input schema,
/// validating every referenced column and operand type along the way.
pub fn output_schema(q: &SelectQuery, input: &Schema) -> Result<Schema, AnalyzeError> {
    if let Some(w) = &q.where_clause {
        let t = infer_type(w, input)?;
        if t != ColumnType::Bool {
            return Err(AnalyzeError::Type(format!("WHERE must be BOOL, got {t}")));
        }
    }
    for col in &q.group_by {
        if input.column(col).is_none() {
            return Err(AnalyzeError::UnknownColumn(col.clone()));
        }
    }

    let mut columns = Vec::new();
    let mut index = 0usize;
    for item in &q.items {
        match item {
            SelectItem::Star => {
                for c in &input.columns {
                    columns.push(c.clone());
                    index += 1;
                }
            }
            SelectItem::Expr { expr, .. } => {
                let ty = infer_type(expr, input)?;
                columns.push(Column {
                    name: item_name(item, index),
                    ty,
                });
                index += 1;
            }
        }
    }
    let schema = Schema { columns };
    schema
        .validate()
        .map_err(|e| AnalyzeError::Type(e.to_string()))?;

    if let Some((col, _)) = &q.order_by {
        if schema.column(col).is_none() {
            return Err(AnalyzeError::UnknownColumn(format!(
                "{col} (ORDER BY must name an output column)"
            )));
        }
    }
    Ok(schema)
}
