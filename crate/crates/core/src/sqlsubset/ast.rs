//! AST for the pipeline SQL dialect, plus the canonical printer.
//!
//! The printer fully parenthesizes nested expressions; `parse(print(q))`
//! yields `q` back for every accepted query.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Eq,
    NotEq,
    Lt,
    LtEq,
    Gt,
    GtEq,
    Add,
    Sub,
    Mul,
    Div,
    And,
    Or,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Eq => "=",
            BinaryOp::NotEq => "!=",
            BinaryOp::Lt => "<",
            BinaryOp::LtEq => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::GtEq => ">=",
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::And => "AND",
            BinaryOp::Or => "OR",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            BinaryOp::Eq
                | BinaryOp::NotEq
                | BinaryOp::Lt
                | BinaryOp::LtEq
                | BinaryOp::Gt
                | BinaryOp::GtEq
        )
    }

    pub fn is_arithmetic(self) -> bool {
        matches!(
            self,
            BinaryOp::Add | BinaryOp::Sub | BinaryOp::Mul | BinaryOp::Div
        )
    }

    pub fn is_logical(self) -> bool {
        matches!(self, BinaryOp::And | BinaryOp::Or)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Int(i64),
    Float(f64),
    Str(String),
    Bool(bool),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AggregateFn {
    CountStar,
    Count,
    Sum,
    Avg,
    Min,
    Max,
}

impl AggregateFn {
    pub fn name(self) -> &'static str {
        match self {
            AggregateFn::CountStar | AggregateFn::Count => "COUNT",
            AggregateFn::Sum => "SUM",
            AggregateFn::Avg => "AVG",
            AggregateFn::Min => "MIN",
            AggregateFn::Max => "MAX",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Column(String),
    Literal(Literal),
    Binary {
        op: BinaryOp,
        left: Box<Expr>,
        right: Box<Expr>,
    },
    Not(Box<Expr>),
    Aggregate {
        func: AggregateFn,
        column: Option<String>,
    },
}

impl Expr {
    pub fn binary(op: BinaryOp, left: Expr, right: Expr) -> Expr {
        Expr::Binary {
            op,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn contains_aggregate(&self) -> bool {
        match self {
            Expr::Aggregate { .. } => true,
            Expr::Binary { left, right, .. } => {
                left.contains_aggregate() || right.contains_aggregate()
            }
            Expr::Not(inner) => inner.contains_aggregate(),
            Expr::Column(_) | Expr::Literal(_) => false,
        }
    }

    /// Column names referenced outside aggregate arguments.
    pub fn scalar_columns(&self, out: &mut Vec<String>) {
        match self {
            Expr::Column(name) => out.push(name.clone()),
            Expr::Binary { left, right, .. } => {
                left.scalar_columns(out);
                right.scalar_columns(out);
            }
            Expr::Not(inner) => inner.scalar_columns(out),
            Expr::Aggregate { .. } | Expr::Literal(_) => {}
        }
    }

    /// All referenced column names, aggregate arguments included.
    pub fn all_columns(&self, out: &mut Vec<String>) {
        match self {
            Expr::Column(name) => out.push(name.clone()),
            Expr::Binary { left, right, .. } => {
                left.all_columns(out);
                right.all_columns(out);
            }
            Expr::Not(inner) => inner.all_columns(out),
            Expr::Aggregate {
                column: Some(name), ..
            } => out.push(name.clone()),
            Expr::Aggregate { column: None, .. } | Expr::Literal(_) => {}
        }
    }

    /// Rename every column reference through the given mapping; None when a
    /// referenced column has no image.
    pub fn rename_columns(&self, map: &dyn Fn(&str) -> Option<String>) -> Option<Expr> {
        Some(match self {
            Expr::Column(name) => Expr::Column(map(name)?),
            Expr::Literal(l) => Expr::Literal(l.clone()),
            Expr::Binary { op, left, right } => Expr::binary(
                *op,
                left.rename_columns(map)?,
                right.rename_columns(map)?,
            ),
            Expr::Not(inner) => Expr::Not(Box::new(inner.rename_columns(map)?)),
            Expr::Aggregate { func, column } => Expr::Aggregate {
                func: *func,
                column: match column {
                    Some(name) => Some(map(name)?),
                    None => None,
                },
            },
        })
    }
}

/// Split an expression into its top-level AND conjuncts.
pub fn conjuncts(expr: &Expr) -> Vec<Expr> {
    match expr {
        Expr::Binary {
            op: BinaryOp::And,
            left,
            right,
        } => {
            let mut out = conjuncts(left);
            out.extend(conjuncts(right));
            out
        }
        other => vec![other.clone()],
    }
}

/// Rebuild a predicate from conjuncts (left-deep ANDs); None when empty.
pub fn conjoin(parts: Vec<Expr>) -> Option<Expr> {
    let mut iter = parts.into_iter();
    let first = iter.next()?;
    Some(iter.fold(first, |acc, next| Expr::binary(BinaryOp::And, acc, next)))
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectItem {
    Star,
    Expr { expr: Expr, alias: Option<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SortDir {
    Asc,
    Desc,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectQuery {
    pub items: Vec<SelectItem>,
    pub from_table: String,
    pub where_clause: Option<Expr>,
    pub group_by: Vec<String>,
    pub order_by: Option<(String, SortDir)>,
    pub limit: Option<u64>,
}

impl SelectQuery {
    pub fn has_aggregates(&self) -> bool {
        self.items.iter().any(|item| match item {
            SelectItem::Expr { expr, .. } => expr.contains_aggregate(),
            SelectItem::Star => false,
        })
    }

    /// True when execution groups rows: either GROUP BY is present or the
    /// projection aggregates globally.
    pub fn is_aggregation(&self) -> bool {
        !self.group_by.is_empty() || self.has_aggregates()
    }
}

fn fmt_string_literal(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_str("'")?;
    for ch in s.chars() {
        if ch == '\'' {
            f.write_str("''")?;
        } else {
            write!(f, "{ch}")?;
        }
    }
    f.write_str("'")
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Int(i) => write!(f, "{i}"),
            Literal::Float(x) => {
                // Keep a decimal point so the literal reparses as a float.
                let s = x.to_string();
                if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
                    f.write_str(&s)
                } else {
                    write!(f, "{s}.0")
                }
            }
            Literal::Str(s) => fmt_string_literal(f, s),
            Literal::Bool(b) => f.write_str(if *b { "TRUE" } else { "FALSE" }),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Column(name) => f.write_str(name),
            Expr::Literal(l) => write!(f, "{l}"),
            Expr::Binary { op, left, right } => {
                write!(f, "({left} {} {right})", op.symbol())
            }
            Expr::Not(inner) => write!(f, "(NOT {inner})"),
            Expr::Aggregate { func, column } => match (func, column) {
                (AggregateFn::CountStar, _) => f.write_str("COUNT(*)"),
                (_, Some(col)) => write!(f, "{}({col})", func.name()),
                (_, None) => write!(f, "{}()", func.name()),
            },
        }
    }
}

impl fmt::Display for SelectQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SELECT ")?;
        for (i, item) in self.items.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            match item {
                SelectItem::Star => f.write_str("*")?,
                SelectItem::Expr { expr, alias } => {
                    write!(f, "{expr}")?;
                    if let Some(a) = alias {
                        write!(f, " AS {a}")?;
                    }
                }
            }
        }
        write!(f, " FROM {}", self.from_table)?;
        if let Some(w) = &self.where_clause {
            write!(f, " WHERE {w}")?;
        }
        if !self.group_by.is_empty() {
            write!(f, " GROUP BY {}", self.group_by.join(", "))?;
        }
        if let Some((col, dir)) = &self.order_by {
            let d = match dir {
                SortDir::Asc => "ASC",
                SortDir::Desc => "DESC",
            };
            write!(f, " ORDER BY {col} {d}")?;
        }
        if let Some(n) = self.limit {
            write!(f, " LIMIT {n}")?;
        }
        Ok(())
    }
}
