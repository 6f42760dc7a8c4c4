//! Seeded random generators: relations, type-correct queries, and whole
//! pipeline projects for the equivalence suites.

use rand::prelude::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::sqlsubset::ast::{
    AggregateFn, BinaryOp, Expr, Literal, SelectItem, SelectQuery, SortDir,
};
use crate::tables::{ColumnType, Relation, Schema, Value};

const STRING_POOL: &[&str] = &[
    "", "a", "ab", "zebra", "2019-03-15", "2019-04-01", "2019-04-20", "x,y", "it's",
];

pub fn gen_schema(rng: &mut ChaCha8Rng) -> Schema {
    let n = rng.random_range(1..=5usize);
    let types = [
        ColumnType::Int64,
        ColumnType::Float64,
        ColumnType::String,
        ColumnType::Bool,
    ];
    Schema::new(
        (0..n)
            .map(|i| (format!("c{i}"), *types.choose(rng).expect("nonempty")))
            .collect::<Vec<_>>(),
    )
    .expect("generated names are unique")
}

fn gen_value(rng: &mut ChaCha8Rng, ty: ColumnType, null_rate: f64) -> Value {
    if rng.random_bool(null_rate) {
        return Value::Null;
    }
    match ty {
        ColumnType::Int64 => Value::Int(rng.random_range(-20..=20)),
        // Multiples of 0.25 stay exact through parsing and printing.
        ColumnType::Float64 => Value::Float(rng.random_range(-20..=20) as f64 * 0.25),
        ColumnType::String => Value::Str(STRING_POOL.choose(rng).expect("nonempty").to_string()),
        ColumnType::Bool => Value::Bool(rng.random_bool(0.5)),
    }
}

pub fn gen_relation(rng: &mut ChaCha8Rng, schema: &Schema, max_rows: usize) -> Relation {
    let rows = rng.random_range(0..=max_rows);
    let mut rel = Relation::empty(schema.clone()).expect("valid schema");
    for _ in 0..rows {
        let row = schema
            .columns
            .iter()
            .map(|c| gen_value(rng, c.ty, 0.15))
            .collect();
        rel.push_row(row).expect("generated row conforms");
    }
    rel
}

fn numeric_columns(schema: &Schema) -> Vec<String> {
    schema
        .columns
        .iter()
        .filter(|c| matches!(c.ty, ColumnType::Int64 | ColumnType::Float64))
        .map(|c| c.name.clone())
        .collect()
}

fn comparable_literal(rng: &mut ChaCha8Rng, ty: ColumnType) -> Literal {
    match ty {
        ColumnType::Int64 => Literal::Int(rng.random_range(-20..=20)),
        ColumnType::Float64 => Literal::Float(rng.random_range(-20..=20) as f64 * 0.25),
        ColumnType::String => {
            Literal::Str(STRING_POOL.choose(rng).expect("nonempty").to_string())
        }
        ColumnType::Bool => Literal::Bool(rng.random_bool(0.5)),
    }
}

/// A type-correct predicate over the schema, depth-limited.
pub fn gen_predicate(rng: &mut ChaCha8Rng, schema: &Schema, depth: usize) -> Expr {
    if depth > 0 && rng.random_bool(0.4) {
        let op = if rng.random_bool(0.5) {
            BinaryOp::And
        } else {
            BinaryOp::Or
        };
        let left = gen_predicate(rng, schema, depth - 1);
        let right = gen_predicate(rng, schema, depth - 1);
        let combined = Expr::binary(op, left, right);
        return if rng.random_bool(0.2) {
            Expr::Not(Box::new(combined))
        } else {
            combined
        };
    }
    let col = schema
        .columns
        .choose(rng)
        .expect("schemas have a column");
    let cmp = match col.ty {
        ColumnType::Bool => *[BinaryOp::Eq, BinaryOp::NotEq]
            .choose(rng)
            .expect("nonempty"),
        _ => *[
            BinaryOp::Eq,
            BinaryOp::NotEq,
            BinaryOp::Lt,
            BinaryOp::LtEq,
            BinaryOp::Gt,
            BinaryOp::GtEq,
        ]
        .choose(rng)
        .expect("nonempty"),
    };
    Expr::binary(
        cmp,
        Expr::Column(col.name.clone()),
        Expr::Literal(comparable_literal(rng, col.ty)),
    )
}

fn gen_scalar_item(rng: &mut ChaCha8Rng, schema: &Schema, index: usize) -> SelectItem {
    let nums = numeric_columns(schema);
    let pick = rng.random_range(0..10u32);
    let expr = if pick < 6 || nums.is_empty() {
        Expr::Column(schema.columns.choose(rng).expect("nonempty").name.clone())
    } else if pick < 9 {
        // arithmetic over a numeric column; division only by nonzero
        // literals so the oracle comparison never trips on errors
        let col = nums.choose(rng).expect("nonempty").clone();
        let op = *[BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div]
            .choose(rng)
            .expect("nonempty");
        let rhs = if op == BinaryOp::Div {
            Literal::Int(*[1, 2, 4, 5].choose(rng).expect("nonempty"))
        } else {
            Literal::Int(rng.random_range(-5..=5))
        };
        Expr::binary(op, Expr::Column(col), Expr::Literal(rhs))
    } else {
        gen_predicate(rng, schema, 0)
    };
    let alias = if matches!(expr, Expr::Column(_)) && rng.random_bool(0.7) {
        None
    } else {
        Some(format!("out_{index}"))
    };
    SelectItem::Expr { expr, alias }
}

fn gen_aggregate(rng: &mut ChaCha8Rng, schema: &Schema) -> Expr {
    let nums = numeric_columns(schema);
    let non_bool: Vec<String> = schema
        .columns
        .iter()
        .filter(|c| c.ty != ColumnType::Bool)
        .map(|c| c.name.clone())
        .collect();
    let any: Vec<String> = schema.names().map(str::to_string).collect();
    let mut choices: Vec<(AggregateFn, Option<String>)> =
        vec![(AggregateFn::CountStar, None)];
    choices.push((AggregateFn::Count, any.choose(rng).cloned()));
    if let Some(c) = nums.choose(rng) {
        choices.push((AggregateFn::Sum, Some(c.clone())));
        choices.push((AggregateFn::Avg, Some(c.clone())));
    }
    if let Some(c) = non_bool.choose(rng) {
        choices.push((AggregateFn::Min, Some(c.clone())));
        choices.push((AggregateFn::Max, Some(c.clone())));
    }
    let (func, column) = choices.choose(rng).expect("nonempty").clone();
    Expr::Aggregate { func, column }
}

/// A random query the parser's structural validation accepts and the
/// engine can type-check against `schema`.
pub fn gen_query(rng: &mut ChaCha8Rng, schema: &Schema, table: &str) -> SelectQuery {
    let aggregated = rng.random_bool(0.45);
    let mut items: Vec<SelectItem> = Vec::new();
    let mut group_by: Vec<String> = Vec::new();

    if aggregated {
        let grouped = rng.random_bool(0.75);
        if grouped {
            let mut cols: Vec<String> = schema.names().map(str::to_string).collect();
            let take = rng.random_range(1..=cols.len().min(2));
            for _ in 0..take {
                let i = rng.random_range(0..cols.len());
                group_by.push(cols.swap_remove(i));
            }
            for col in &group_by {
                items.push(SelectItem::Expr {
                    expr: Expr::Column(col.clone()),
                    alias: None,
                });
            }
        }
        let n_aggs = rng.random_range(1..=2usize);
        for i in 0..n_aggs {
            items.push(SelectItem::Expr {
                expr: gen_aggregate(rng, schema),
                alias: Some(format!("agg_{i}")),
            });
        }
    } else if rng.random_bool(0.15) {
        items.push(SelectItem::Star);
    } else {
        let n = rng.random_range(1..=3usize);
        for i in 0..n {
            items.push(gen_scalar_item(rng, schema, i));
        }
    }

    // Output names, for ORDER BY and to reject duplicate-name queries.
    let mut names: Vec<String> = Vec::new();
    for (i, item) in items.iter().enumerate() {
        match item {
            SelectItem::Star => names.extend(schema.names().map(str::to_string)),
            SelectItem::Expr { alias: Some(a), .. } => names.push(a.clone()),
            SelectItem::Expr {
                expr: Expr::Column(c),
                ..
            } => names.push(c.clone()),
            SelectItem::Expr { .. } => names.push(format!("col_{i}")),
        }
    }
    {
        let mut seen = std::collections::HashSet::new();
        names.retain(|n| seen.insert(n.clone()));
        let total: usize = items
            .iter()
            .map(|i| match i {
                SelectItem::Star => schema.columns.len(),
                _ => 1,
            })
            .sum();
        if names.len() != total {
            // Duplicate projection names: fall back to a star query.
            items = vec![SelectItem::Star];
            names = schema.names().map(str::to_string).collect();
            group_by.clear();
        }
    }

    let where_clause = if rng.random_bool(0.6) {
        Some(gen_predicate(rng, schema, 2))
    } else {
        None
    };
    let order_by = if rng.random_bool(0.5) && !names.is_empty() {
        let col = names.choose(rng).expect("nonempty").clone();
        let dir = if rng.random_bool(0.5) {
            SortDir::Asc
        } else {
            SortDir::Desc
        };
        Some((col, dir))
    } else {
        None
    };
    let limit = if rng.random_bool(0.25) {
        Some(rng.random_range(1..=10u64))
    } else {
        None
    };

    SelectQuery {
        items,
        from_table: table.to_string(),
        where_clause,
        group_by,
        order_by,
        limit,
    }
}

/// A generated pipeline project: catalog fixtures plus model/expectation
/// files, structured as a DAG of depth <= `max_depth`.
pub struct GenProject {
    /// File name -> contents.
    pub files: Vec<(String, String)>,
    /// Catalog tables the project reads.
    pub base_tables: Vec<(String, Relation)>,
}

/// Generate a random project over 1-2 base tables with models stacked up
/// to `max_depth` levels and an always-evaluable builtin expectation on
/// some models.
pub fn gen_project(rng: &mut ChaCha8Rng, max_depth: usize, max_rows: usize) -> GenProject {
    let n_base = rng.random_range(1..=2usize);
    let mut base_tables = Vec::new();
    // Base tables always carry at least one numeric column so selective
    // predicates and aggregates have something to chew on.
    for b in 0..n_base {
        let mut schema = gen_schema(rng);
        if numeric_columns(&schema).is_empty() {
            let mut cols: Vec<(String, ColumnType)> = schema
                .columns
                .iter()
                .map(|c| (c.name.clone(), c.ty))
                .collect();
            cols.push((format!("c{}", cols.len()), ColumnType::Int64));
            schema = Schema::new(cols).expect("unique names");
        }
        let rel = gen_relation(rng, &schema, max_rows);
        base_tables.push((format!("base_{b}"), rel));
    }

    let mut files = Vec::new();
    // name -> output schema, for generating well-typed downstream queries
    let mut producible: Vec<(String, Schema)> = base_tables
        .iter()
        .map(|(n, r)| (n.clone(), r.schema().clone()))
        .collect();

    let mut model_idx = 0usize;
    let depth = rng.random_range(1..=max_depth.max(1));
    for _level in 0..depth {
        let n_models = rng.random_range(1..=2usize);
        for _ in 0..n_models {
            let (parent, parent_schema) = producible
                .choose(rng)
                .expect("at least the base tables")
                .clone();
            // Retry until the query type-checks (cheap, nearly always
            // first try; the generator only misses on exotic combinations).
            let mut attempts = 0;
            let (query, out_schema) = loop {
                let q = gen_query(rng, &parent_schema, &parent);
                match crate::sqlsubset::output_schema(&q, &parent_schema) {
                    Ok(s) => break (q, s),
                    Err(_) if attempts < 20 => {
                        attempts += 1;
                        continue;
                    }
                    Err(_) => break (
                        SelectQuery {
                            items: vec![SelectItem::Star],
                            from_table: parent.clone(),
                            where_clause: None,
                            group_by: vec![],
                            order_by: None,
                            limit: None,
                        },
                        parent_schema.clone(),
                    ),
                }
            };
            let name = format!("model_{model_idx}");
            model_idx += 1;
            files.push((format!("{name}.sql"), query.to_string()));
            // Roughly a third of the models get an expectation that can
            // pass or fail but never errors.
            if rng.random_bool(0.3) {
                files.push((
                    format!("{name}_expectation.check"),
                    format!("count() >= {}\n", rng.random_range(0..=2)),
                ));
            }
            producible.push((name, out_schema));
        }
    }

    GenProject { files, base_tables }
}
