//! Recursive-descent parser for the frozen grammar:
//!
//! ```text
//! query := SELECT items FROM ident [WHERE pred] [GROUP BY cols]
//!          [ORDER BY col [ASC|DESC]] [LIMIT n]
//! ```
//!
//! Anything outside the subset fails with a named `UnsupportedFeature`
//! where we can recognize the construct (JOIN, subqueries, DISTINCT, ...),
//! or a positioned syntax error otherwise.

use super::ast::*;
use super::lexer::{tokenize, Pos, Tok, Token};
use super::ParseError;

struct Parser {
    tokens: Vec<Token>,
    idx: usize,
    end: Pos,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.idx).map(|t| &t.tok)
    }

    fn pos(&self) -> Pos {
        self.tokens.get(self.idx).map(|t| t.pos).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.idx).map(|t| t.tok.clone());
        if t.is_some() {
            self.idx += 1;
        }
        t
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        let pos = self.pos();
        ParseError::Syntax {
            line: pos.line,
            column: pos.column,
            message: message.into(),
        }
    }

    fn at_word(&self, word: &str) -> bool {
        matches!(self.peek(), Some(Tok::Word(w)) if w == word)
    }

    fn eat_word(&mut self, word: &str) -> bool {
        if self.at_word(word) {
            self.idx += 1;
            true
        } else {
            false
        }
    }

    fn expect_word(&mut self, word: &str) -> Result<(), ParseError> {
        if self.eat_word(word) {
            Ok(())
        } else {
            Err(match self.peek() {
                Some(t) => self.error(format!("expected {}, found {}", word.to_uppercase(), t.describe())),
                None => self.error(format!("expected {}, found end of input", word.to_uppercase())),
            })
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Word(w)) if !is_reserved(w) => {
                let w = w.clone();
                self.idx += 1;
                Ok(w)
            }
            Some(t) => Err(self.error(format!("expected {what}, found {}", t.describe()))),
            None => Err(self.error(format!("expected {what}, found end of input"))),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.idx += 1;
            Ok(())
        } else {
            Err(match self.peek() {
                Some(t) => self.error(format!("expected {what}, found {}", t.describe())),
                None => self.error(format!("expected {what}, found end of input")),
            })
        }
    }
}

/// Keywords that cannot be used as plain identifiers.
fn is_reserved(word: &str) -> bool {
    matches!(
        word,
        "select"
            | "from"
            | "where"
            | "group"
            | "order"
            | "by"
            | "asc"
            | "desc"
            | "limit"
            | "and"
            | "or"
            | "not"
            | "as"
            | "true"
            | "false"
            | "join"
            | "having"
            | "distinct"
            | "union"
            | "with"
    )
}

fn aggregate_fn(word: &str) -> Option<AggregateFn> {
    match word {
        "count" => Some(AggregateFn::Count),
        "sum" => Some(AggregateFn::Sum),
        "avg" => Some(AggregateFn::Avg),
        "min" => Some(AggregateFn::Min),
        "max" => Some(AggregateFn::Max),
        _ => None,
    }
}

/// Parse one SELECT statement. Keywords are case-insensitive; identifiers
/// come back lowercased.
pub fn parse(sql_text: &str) -> Result<SelectQuery, ParseError> {
    let tokens = tokenize(sql_text)?;
    let end = tokens
        .last()
        .map(|t| Pos {
            line: t.pos.line,
            column: t.pos.column + 1,
        })
        .unwrap_or(Pos { line: 1, column: 1 });
    let mut p = Parser { tokens, idx: 0, end };

    if p.at_word("with") {
        return Err(ParseError::Unsupported("CTE (WITH)".into()));
    }
    p.expect_word("select")?;
    if p.at_word("distinct") {
        return Err(ParseError::Unsupported("DISTINCT".into()));
    }

    let mut items = Vec::new();
    loop {
        items.push(parse_item(&mut p)?);
        if !matches!(p.peek(), Some(Tok::Comma)) {
            break;
        }
        p.bump();
    }

    p.expect_word("from")?;
    if p.at_word("select") || matches!(p.peek(), Some(Tok::LParen)) {
        return Err(ParseError::Unsupported("subquery in FROM".into()));
    }
    let from_table = p.expect_ident("table name")?;

    match p.peek() {
        Some(Tok::Word(w)) if w == "join" => {
            return Err(ParseError::Unsupported("JOIN".into()))
        }
        Some(Tok::Word(w)) if matches!(w.as_str(), "inner" | "left" | "right" | "cross" | "outer" | "full") => {
            return Err(ParseError::Unsupported("JOIN".into()))
        }
        Some(Tok::Comma) => {
            return Err(ParseError::Unsupported("multi-table FROM".into()))
        }
        _ => {}
    }

    let where_clause = if p.eat_word("where") {
        Some(parse_expr(&mut p)?)
    } else {
        None
    };

    let mut group_by = Vec::new();
    if p.eat_word("group") {
        p.expect_word("by")?;
        loop {
            group_by.push(p.expect_ident("column name")?);
            if !matches!(p.peek(), Some(Tok::Comma)) {
                break;
            }
            p.bump();
        }
    }
    if p.at_word("having") {
        return Err(ParseError::Unsupported("HAVING".into()));
    }

    let order_by = if p.eat_word("order") {
        p.expect_word("by")?;
        let col = p.expect_ident("column name")?;
        let dir = if p.eat_word("desc") {
            SortDir::Desc
        } else {
            p.eat_word("asc");
            SortDir::Asc
        };
        Some((col, dir))
    } else {
        None
    };

    let limit = if p.eat_word("limit") {
        match p.bump() {
            Some(Tok::Int(n)) if n > 0 => Some(n as u64),
            Some(Tok::Int(_)) => {
                return Err(p.error("LIMIT requires a positive integer"));
            }
            _ => return Err(p.error("LIMIT requires a positive integer")),
        }
    } else {
        None
    };

    if p.at_word("union") {
        return Err(ParseError::Unsupported("UNION".into()));
    }
    if let Some(t) = p.peek() {
        return Err(p.error(format!("unexpected {} after end of query", t.describe())));
    }

    let query = SelectQuery {
        items,
        from_table,
        where_clause,
        group_by,
        order_by,
        limit,
    };
    validate(&query)?;
    Ok(query)
}

fn parse_item(p: &mut Parser) -> Result<SelectItem, ParseError> {
    if matches!(p.peek(), Some(Tok::Star)) {
        p.bump();
        return Ok(SelectItem::Star);
    }
    let expr = parse_expr(p)?;
    let alias = if p.eat_word("as") {
        Some(p.expect_ident("alias")?)
    } else {
        None
    };
    Ok(SelectItem::Expr { expr, alias })
}

fn parse_expr(p: &mut Parser) -> Result<Expr, ParseError> {
    parse_or(p)
}

fn parse_or(p: &mut Parser) -> Result<Expr, ParseError> {
    let mut left = parse_and(p)?;
    while p.eat_word("or") {
        let right = parse_and(p)?;
        left = Expr::binary(BinaryOp::Or, left, right);
    }
    Ok(left)
}

fn parse_and(p: &mut Parser) -> Result<Expr, ParseError> {
    let mut left = parse_not(p)?;
    while p.eat_word("and") {
        let right = parse_not(p)?;
        left = Expr::binary(BinaryOp::And, left, right);
    }
    Ok(left)
}

fn parse_not(p: &mut Parser) -> Result<Expr, ParseError> {
    if p.eat_word("not") {
        Ok(Expr::Not(Box::new(parse_not(p)?)))
    } else {
        parse_comparison(p)
    }
}

fn parse_comparison(p: &mut Parser) -> Result<Expr, ParseError> {
    let left = parse_additive(p)?;
    let op = match p.peek() {
        Some(Tok::Eq) => BinaryOp::Eq,
        Some(Tok::NotEq) => BinaryOp::NotEq,
        Some(Tok::Lt) => BinaryOp::Lt,
        Some(Tok::LtEq) => BinaryOp::LtEq,
        Some(Tok::Gt) => BinaryOp::Gt,
        Some(Tok::GtEq) => BinaryOp::GtEq,
        _ => return Ok(left),
    };
    p.bump();
    let right = parse_additive(p)?;
    Ok(Expr::binary(op, left, right))
}

fn parse_additive(p: &mut Parser) -> Result<Expr, ParseError> {
    let mut left = parse_multiplicative(p)?;
    loop {
        let op = match p.peek() {
            Some(Tok::Plus) => BinaryOp::Add,
            Some(Tok::Minus) => BinaryOp::Sub,
            _ => break,
        };
        p.bump();
        let right = parse_multiplicative(p)?;
        left = Expr::binary(op, left, right);
    }
    Ok(left)
}

fn parse_multiplicative(p: &mut Parser) -> Result<Expr, ParseError> {
    let mut left = parse_primary(p)?;
    loop {
        let op = match p.peek() {
            Some(Tok::Star) => BinaryOp::Mul,
            Some(Tok::Slash) => BinaryOp::Div,
            _ => break,
        };
        p.bump();
        let right = parse_primary(p)?;
        left = Expr::binary(op, left, right);
    }
    Ok(left)
}

fn parse_primary(p: &mut Parser) -> Result<Expr, ParseError> {
    match p.peek().cloned() {
        Some(Tok::Minus) => {
            p.bump();
            match p.bump() {
                Some(Tok::Int(n)) => Ok(Expr::Literal(Literal::Int(-n))),
                Some(Tok::Float(x)) => Ok(Expr::Literal(Literal::Float(-x))),
                _ => Err(p.error("'-' must be followed by a numeric literal")),
            }
        }
        Some(Tok::Int(n)) => {
            p.bump();
            Ok(Expr::Literal(Literal::Int(n)))
        }
        Some(Tok::Float(x)) => {
            p.bump();
            Ok(Expr::Literal(Literal::Float(x)))
        }
        Some(Tok::Str(s)) => {
            p.bump();
            Ok(Expr::Literal(Literal::Str(s)))
        }
        Some(Tok::LParen) => {
            p.bump();
            if p.at_word("select") {
                return Err(ParseError::Unsupported("subquery".into()));
            }
            let inner = parse_expr(p)?;
            p.expect(Tok::RParen, "')'")?;
            Ok(inner)
        }
        Some(Tok::Word(w)) if w == "true" => {
            p.bump();
            Ok(Expr::Literal(Literal::Bool(true)))
        }
        Some(Tok::Word(w)) if w == "false" => {
            p.bump();
            Ok(Expr::Literal(Literal::Bool(false)))
        }
        Some(Tok::Word(w)) if aggregate_fn(&w).is_some() && p.tokens.get(p.idx + 1).map(|t| &t.tok) == Some(&Tok::LParen) => {
            p.bump();
            p.bump();
            let func = aggregate_fn(&w).unwrap();
            if func == AggregateFn::Count && matches!(p.peek(), Some(Tok::Star)) {
                p.bump();
                p.expect(Tok::RParen, "')'")?;
                return Ok(Expr::Aggregate {
                    func: AggregateFn::CountStar,
                    column: None,
                });
            }
            let column = p.expect_ident("column name")?;
            p.expect(Tok::RParen, "')'")?;
            Ok(Expr::Aggregate {
                func,
                column: Some(column),
            })
        }
        Some(Tok::Word(w)) if !is_reserved(&w) => {
            p.bump();
            Ok(Expr::Column(w))
        }
        Some(t) => Err(p.error(format!("expected expression, found {}", t.describe()))),
        None => Err(p.error("expected expression, found end of input")),
    }
}

/// Structural rules that do not need a schema.
fn validate(q: &SelectQuery) -> Result<(), ParseError> {
    fn no_nested_aggregates(expr: &Expr, inside: bool) -> bool {
        match expr {
            Expr::Aggregate { .. } => !inside,
            Expr::Binary { left, right, .. } => {
                no_nested_aggregates(left, inside) && no_nested_aggregates(right, inside)
            }
            Expr::Not(inner) => no_nested_aggregates(inner, inside),
            _ => true,
        }
    }

    let top_error = |message: &str| ParseError::Syntax {
        line: 1,
        column: 1,
        message: message.to_string(),
    };

    if let Some(w) = &q.where_clause {
        if w.contains_aggregate() {
            return Err(top_error("aggregates are not allowed in WHERE"));
        }
    }
    for item in &q.items {
        if let SelectItem::Expr { expr, .. } = item {
            if !no_nested_aggregates(expr, false) {
                return Err(top_error("aggregates cannot be nested"));
            }
        }
    }
    if !q.group_by.is_empty() {
        for item in &q.items {
            match item {
                SelectItem::Star => {
                    return Err(top_error("SELECT * cannot be combined with GROUP BY"));
                }
                SelectItem::Expr { expr, .. } => {
                    let mut scalar = Vec::new();
                    expr.scalar_columns(&mut scalar);
                    for col in scalar {
                        if !q.group_by.contains(&col) {
                            return Err(top_error(&format!(
                                "column '{col}' must appear in GROUP BY or inside an aggregate"
                            )));
                        }
                    }
                    if !expr.contains_aggregate() {
                        if !matches!(expr, Expr::Column(_)) {
                            return Err(top_error(
                                "grouped projections must be group columns or aggregates",
                            ));
                        }
                    }
                }
            }
        }
    } else if q.has_aggregates() {
        // Global aggregation: no bare column may leak through.
        for item in &q.items {
            match item {
                SelectItem::Star => {
                    return Err(top_error("SELECT * cannot be combined with aggregates"));
                }
                SelectItem::Expr { expr, .. } => {
                    let mut scalar = Vec::new();
                    expr.scalar_columns(&mut scalar);
                    if !scalar.is_empty() {
                        return Err(top_error(&format!(
                            "column '{}' must appear inside an aggregate",
                            scalar[0]
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}
