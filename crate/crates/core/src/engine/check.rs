//! Expectations: statistical assertions gating a merge.
//!
//! Builtin checks use a one-line grammar,
//! `check := clause ((AND|OR) clause)*` with
//! `clause := [NOT] agg '(' [col] ')' cmp number`
//! and aggregates `mean`, `sum`, `min`, `max`, `count`, `null_fraction`.
//! AND binds tighter than OR; clauses evaluate strictly (an error on either
//! side of an OR is an error, not a pass).
//!
//! External checks are a JSON manifest naming a command; see
//! `docs/function-protocol.md` for the wire contract.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::sqlsubset::ast::BinaryOp;
use crate::sqlsubset::lexer::{tokenize, Tok};
use crate::tables::{Relation, Value};

use super::EngineError;

/// What an expectation runs: a builtin aggregate comparison or an external
/// command speaking the function protocol.
#[derive(Debug, Clone, PartialEq)]
pub enum CheckBody {
    Builtin(CheckExpr),
    External(ExternalFunction),
}

/// An expectation bound to the table it audits (derived from the
/// `<table>_expectation.*` file naming convention).
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectationSpec {
    pub target_table: String,
    pub body: CheckBody,
}

/// Manifest of an external function: the command to run and its declared
/// package requirements. Requirements are fingerprinted, never installed;
/// the command owns its environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalFunction {
    pub command: Vec<String>,
    #[serde(default)]
    pub requirements: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckAgg {
    Mean,
    Sum,
    Min,
    Max,
    Count,
    NullFraction,
}

impl CheckAgg {
    fn name(self) -> &'static str {
        match self {
            CheckAgg::Mean => "mean",
            CheckAgg::Sum => "sum",
            CheckAgg::Min => "min",
            CheckAgg::Max => "max",
            CheckAgg::Count => "count",
            CheckAgg::NullFraction => "null_fraction",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CheckExpr {
    Clause {
        negated: bool,
        agg: CheckAgg,
        column: Option<String>,
        cmp: BinaryOp,
        threshold: f64,
    },
    And(Box<CheckExpr>, Box<CheckExpr>),
    Or(Box<CheckExpr>, Box<CheckExpr>),
}

fn agg_of(word: &str) -> Option<CheckAgg> {
    match word {
        "mean" => Some(CheckAgg::Mean),
        "sum" => Some(CheckAgg::Sum),
        "min" => Some(CheckAgg::Min),
        "max" => Some(CheckAgg::Max),
        "count" => Some(CheckAgg::Count),
        "null_fraction" => Some(CheckAgg::NullFraction),
        _ => None,
    }
}

/// Parse the builtin check grammar.
pub fn parse_check(text: &str) -> Result<CheckExpr, EngineError> {
    let tokens = tokenize(text).map_err(|e| EngineError::CheckParse(e.to_string()))?;
    let mut idx = 0usize;
    let expr = parse_or(&tokens, &mut idx)?;
    if idx != tokens.len() {
        return Err(EngineError::CheckParse(format!(
            "trailing input after check expression: {}",
            tokens[idx].tok.describe()
        )));
    }
    Ok(expr)
}

fn parse_or(tokens: &[crate::sqlsubset::lexer::Token], idx: &mut usize) -> Result<CheckExpr, EngineError> {
    let mut left = parse_and(tokens, idx)?;
    while matches!(tokens.get(*idx).map(|t| &t.tok), Some(Tok::Word(w)) if w == "or") {
        *idx += 1;
        let right = parse_and(tokens, idx)?;
        left = CheckExpr::Or(Box::new(left), Box::new(right));
    }
    Ok(left)
}

fn parse_and(tokens: &[crate::sqlsubset::lexer::Token], idx: &mut usize) -> Result<CheckExpr, EngineError> {
    let mut left = parse_clause(tokens, idx)?;
    while matches!(tokens.get(*idx).map(|t| &t.tok), Some(Tok::Word(w)) if w == "and") {
        *idx += 1;
        let right = parse_clause(tokens, idx)?;
        left = CheckExpr::And(Box::new(left), Box::new(right));
    }
    Ok(left)
}

fn parse_clause(tokens: &[crate::sqlsubset::lexer::Token], idx: &mut usize) -> Result<CheckExpr, EngineError> {
    let bad = |msg: String| EngineError::CheckParse(msg);
    let mut negated = false;
    if matches!(tokens.get(*idx).map(|t| &t.tok), Some(Tok::Word(w)) if w == "not") {
        negated = true;
        *idx += 1;
    }
    let agg = match tokens.get(*idx).map(|t| &t.tok) {
        Some(Tok::Word(w)) => {
            agg_of(w).ok_or_else(|| bad(format!("unknown check aggregate '{w}'")))?
        }
        other => {
            return Err(bad(format!(
                "expected aggregate name, found {}",
                other.map_or("end of input".to_string(), |t| t.describe())
            )))
        }
    };
    *idx += 1;
    if !matches!(tokens.get(*idx).map(|t| &t.tok), Some(Tok::LParen)) {
        return Err(bad(format!("expected '(' after {}", agg.name())));
    }
    *idx += 1;
    let column = match tokens.get(*idx).map(|t| &t.tok) {
        Some(Tok::Word(w)) => {
            let w = w.clone();
            *idx += 1;
            Some(w)
        }
        _ => None,
    };
    if !matches!(tokens.get(*idx).map(|t| &t.tok), Some(Tok::RParen)) {
        return Err(bad("expected ')'".into()));
    }
    *idx += 1;
    if column.is_none() && agg != CheckAgg::Count {
        return Err(bad(format!("{}() needs a column", agg.name())));
    }
    let cmp = match tokens.get(*idx).map(|t| &t.tok) {
        Some(Tok::Eq) => BinaryOp::Eq,
        Some(Tok::NotEq) => BinaryOp::NotEq,
        Some(Tok::Lt) => BinaryOp::Lt,
        Some(Tok::LtEq) => BinaryOp::LtEq,
        Some(Tok::Gt) => BinaryOp::Gt,
        Some(Tok::GtEq) => BinaryOp::GtEq,
        other => {
            return Err(bad(format!(
                "expected comparison operator, found {}",
                other.map_or("end of input".to_string(), |t| t.describe())
            )))
        }
    };
    *idx += 1;
    let mut negative = false;
    if matches!(tokens.get(*idx).map(|t| &t.tok), Some(Tok::Minus)) {
        negative = true;
        *idx += 1;
    }
    let threshold = match tokens.get(*idx).map(|t| &t.tok) {
        Some(Tok::Int(i)) => *i as f64,
        Some(Tok::Float(x)) => *x,
        other => {
            return Err(bad(format!(
                "expected numeric threshold, found {}",
                other.map_or("end of input".to_string(), |t| t.describe())
            )))
        }
    };
    *idx += 1;
    Ok(CheckExpr::Clause {
        negated,
        agg,
        column,
        cmp,
        threshold: if negative { -threshold } else { threshold },
    })
}

fn numeric_column<'a>(
    input: &'a Relation,
    column: &str,
) -> Result<impl Iterator<Item = Result<Option<f64>, EngineError>> + 'a, EngineError> {
    let idx = input
        .schema()
        .index_of(column)
        .ok_or_else(|| EngineError::UnknownColumn(column.to_string()))?;
    let name = column.to_string();
    Ok(input.column_values(idx).iter().map(move |v| match v {
        Value::Null => Ok(None),
        Value::Int(i) => Ok(Some(*i as f64)),
        Value::Float(x) => Ok(Some(*x)),
        other => Err(EngineError::Type(format!(
            "check aggregate over non-numeric column '{name}' value {other:?}"
        ))),
    }))
}

fn compute_check_agg(
    agg: CheckAgg,
    column: Option<&str>,
    input: &Relation,
) -> Result<f64, EngineError> {
    match agg {
        CheckAgg::Count => match column {
            None => Ok(input.row_count() as f64),
            Some(col) => {
                let idx = input
                    .schema()
                    .index_of(col)
                    .ok_or_else(|| EngineError::UnknownColumn(col.to_string()))?;
                Ok(input
                    .column_values(idx)
                    .iter()
                    .filter(|v| !v.is_null())
                    .count() as f64)
            }
        },
        CheckAgg::NullFraction => {
            let col = column.expect("parser enforces a column");
            let idx = input
                .schema()
                .index_of(col)
                .ok_or_else(|| EngineError::UnknownColumn(col.to_string()))?;
            if input.row_count() == 0 {
                return Err(EngineError::EmptyAggregate(format!(
                    "null_fraction({col}) over empty table"
                )));
            }
            let nulls = input
                .column_values(idx)
                .iter()
                .filter(|v| v.is_null())
                .count();
            Ok(nulls as f64 / input.row_count() as f64)
        }
        CheckAgg::Mean | CheckAgg::Sum | CheckAgg::Min | CheckAgg::Max => {
            let col = column.expect("parser enforces a column");
            let mut count = 0usize;
            let mut sum = 0.0f64;
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for v in numeric_column(input, col)? {
                if let Some(x) = v? {
                    count += 1;
                    sum += x;
                    min = min.min(x);
                    max = max.max(x);
                }
            }
            match agg {
                CheckAgg::Sum => Ok(sum),
                CheckAgg::Mean => {
                    if count == 0 {
                        Err(EngineError::EmptyAggregate(format!(
                            "mean({col}) over empty or all-NULL column"
                        )))
                    } else {
                        Ok(sum / count as f64)
                    }
                }
                CheckAgg::Min | CheckAgg::Max => {
                    if count == 0 {
                        Err(EngineError::EmptyAggregate(format!(
                            "{}({col}) over empty or all-NULL column",
                            agg.name()
                        )))
                    } else if agg == CheckAgg::Min {
                        Ok(min)
                    } else {
                        Ok(max)
                    }
                }
                _ => unreachable!(),
            }
        }
    }
}

/// Evaluate a builtin check against a relation.
pub fn evaluate_builtin_check(check: &CheckExpr, input: &Relation) -> Result<bool, EngineError> {
    match check {
        CheckExpr::And(a, b) => {
            let l = evaluate_builtin_check(a, input)?;
            let r = evaluate_builtin_check(b, input)?;
            Ok(l && r)
        }
        CheckExpr::Or(a, b) => {
            let l = evaluate_builtin_check(a, input)?;
            let r = evaluate_builtin_check(b, input)?;
            Ok(l || r)
        }
        CheckExpr::Clause {
            negated,
            agg,
            column,
            cmp,
            threshold,
        } => {
            let actual = compute_check_agg(*agg, column.as_deref(), input)?;
            let pass = match cmp {
                BinaryOp::Eq => actual == *threshold,
                BinaryOp::NotEq => actual != *threshold,
                BinaryOp::Lt => actual < *threshold,
                BinaryOp::LtEq => actual <= *threshold,
                BinaryOp::Gt => actual > *threshold,
                BinaryOp::GtEq => actual >= *threshold,
                _ => unreachable!("parser only admits comparisons"),
            };
            Ok(if *negated { !pass } else { pass })
        }
    }
}
