//! The CSV interchange codec for data files and the function wire protocol.
//!
//! Data files are headerless RFC-4180 CSV with `\n` record terminators;
//! the schema travels separately. Two rules disambiguate the cases plain
//! CSV cannot: NULL is the empty field, the empty string is `""`. Strings
//! containing a comma, quote, CR or LF are quoted with `""` escapes.
//!
//! Floats are encoded with Rust's shortest round-trip formatting, so
//! decode(encode(x)) is bit-exact.

use super::{ColumnType, Relation, Schema, TableError, Value};

fn needs_quoting(s: &str) -> bool {
    s.is_empty() || s.contains(',') || s.contains('"') || s.contains('\r') || s.contains('\n')
}

fn push_field(out: &mut String, value: &Value) {
    match value {
        Value::Null => {}
        Value::Int(i) => out.push_str(&i.to_string()),
        Value::Float(f) => out.push_str(&f.to_string()),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Str(s) => {
            if needs_quoting(s) {
                out.push('"');
                for ch in s.chars() {
                    if ch == '"' {
                        out.push('"');
                    }
                    out.push(ch);
                }
                out.push('"');
            } else {
                out.push_str(s);
            }
        }
    }
}

/// Encode a relation's rows as headerless CSV.
pub fn encode_csv(rel: &Relation) -> Vec<u8> {
    let mut out = String::new();
    for i in 0..rel.row_count() {
        for (j, _) in rel.schema().columns.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            push_field(&mut out, &rel.column_values(j)[i]);
        }
        out.push('\n');
    }
    out.into_bytes()
}

/// Encode with a leading header row of column names (the wire format for
/// external functions).
pub fn encode_csv_with_header(rel: &Relation) -> Vec<u8> {
    let mut out = String::new();
    for (j, col) in rel.schema().columns.iter().enumerate() {
        if j > 0 {
            out.push(',');
        }
        push_field(&mut out, &Value::Str(col.name.clone()));
    }
    out.push('\n');
    let mut body = encode_csv(rel);
    let mut bytes = out.into_bytes();
    bytes.append(&mut body);
    bytes
}

/// Split CSV bytes into records of raw fields. A quoted field comes back
/// with a marker distinguishing `""` (empty string) from an unquoted empty
/// field (NULL).
fn parse_records(bytes: &[u8]) -> Result<Vec<Vec<(String, bool)>>, TableError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| TableError::Decode("data file is not valid UTF-8".into()))?;
    let mut records = Vec::new();
    let mut record: Vec<(String, bool)> = Vec::new();
    let mut field = String::new();
    let mut quoted = false;
    let mut in_quotes = false;
    let mut chars = text.chars().peekable();

    while let Some(ch) = chars.next() {
        if in_quotes {
            match ch {
                '"' => {
                    if chars.peek() == Some(&'"') {
                        chars.next();
                        field.push('"');
                    } else {
                        in_quotes = false;
                    }
                }
                _ => field.push(ch),
            }
            continue;
        }
        match ch {
            '"' if field.is_empty() && !quoted => {
                in_quotes = true;
                quoted = true;
            }
            ',' => {
                record.push((std::mem::take(&mut field), quoted));
                quoted = false;
            }
            '\n' => {
                record.push((std::mem::take(&mut field), quoted));
                quoted = false;
                records.push(std::mem::take(&mut record));
            }
            '\r' => {
                // Accept CRLF terminators.
                if chars.peek() == Some(&'\n') {
                    chars.next();
                    record.push((std::mem::take(&mut field), quoted));
                    quoted = false;
                    records.push(std::mem::take(&mut record));
                } else {
                    field.push('\r');
                }
            }
            _ => field.push(ch),
        }
    }
    if in_quotes {
        return Err(TableError::Decode("unterminated quoted field".into()));
    }
    if !field.is_empty() || quoted || !record.is_empty() {
        record.push((field, quoted));
        records.push(record);
    }
    Ok(records)
}

fn decode_field(raw: &str, quoted: bool, ty: ColumnType) -> Result<Value, TableError> {
    if raw.is_empty() && !quoted {
        return Ok(Value::Null);
    }
    let v = match ty {
        ColumnType::Int64 => Value::Int(
            raw.parse::<i64>()
                .map_err(|_| TableError::Decode(format!("bad INT64 field {raw:?}")))?,
        ),
        ColumnType::Float64 => Value::Float(
            raw.parse::<f64>()
                .map_err(|_| TableError::Decode(format!("bad FLOAT64 field {raw:?}")))?,
        ),
        ColumnType::Bool => match raw {
            "true" => Value::Bool(true),
            "false" => Value::Bool(false),
            _ => return Err(TableError::Decode(format!("bad BOOL field {raw:?}"))),
        },
        ColumnType::String => Value::Str(raw.to_string()),
    };
    Ok(v)
}

/// Decode headerless CSV rows into an existing relation with the given
/// schema.
pub fn decode_csv_into(
    schema: &Schema,
    bytes: &[u8],
    rel: &mut Relation,
) -> Result<(), TableError> {
    for record in parse_records(bytes)? {
        if record.len() != schema.columns.len() {
            return Err(TableError::Decode(format!(
                "record has {} fields, schema has {} columns",
                record.len(),
                schema.columns.len()
            )));
        }
        let mut row = Vec::with_capacity(record.len());
        for ((raw, quoted), col) in record.iter().zip(&schema.columns) {
            row.push(decode_field(raw, *quoted, col.ty)?);
        }
        rel.push_row(row)?;
    }
    Ok(())
}

/// Decode header-bearing CSV (the wire format). The header names must match
/// the schema's column order.
pub fn decode_csv_with_header(schema: &Schema, bytes: &[u8]) -> Result<Relation, TableError> {
    let mut records = parse_records(bytes)?;
    if records.is_empty() {
        return Err(TableError::Decode("missing header row".into()));
    }
    let header = records.remove(0);
    let got: Vec<&str> = header.iter().map(|(s, _)| s.as_str()).collect();
    let want: Vec<&str> = schema.names().collect();
    if got != want {
        return Err(TableError::Decode(format!(
            "header {got:?} does not match schema columns {want:?}"
        )));
    }
    let mut rel = Relation::empty(schema.clone())?;
    for record in records {
        if record.len() != schema.columns.len() {
            return Err(TableError::Decode(format!(
                "record has {} fields, schema has {} columns",
                record.len(),
                schema.columns.len()
            )));
        }
        let mut row = Vec::with_capacity(record.len());
        for ((raw, quoted), col) in record.iter().zip(&schema.columns) {
            row.push(decode_field(raw, *quoted, col.ty)?);
        }
        rel.push_row(row)?;
    }
    Ok(rel)
}

/// Serialize a whole relation as one blob: the schema JSON on the first
/// line, headerless CSV after. Used for cross-unit spills.
pub fn encode_relation_blob(rel: &Relation) -> Result<Vec<u8>, TableError> {
    let mut out = serde_json::to_vec(rel.schema())?;
    out.push(b'\n');
    out.extend_from_slice(&encode_csv(rel));
    Ok(out)
}

pub fn decode_relation_blob(bytes: &[u8]) -> Result<Relation, TableError> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| TableError::Decode("relation blob lacks a schema line".into()))?;
    let schema: Schema = serde_json::from_slice(&bytes[..split])?;
    schema.validate()?;
    let mut rel = Relation::empty(schema.clone())?;
    decode_csv_into(&schema, &bytes[split + 1..], &mut rel)?;
    Ok(rel)
}
