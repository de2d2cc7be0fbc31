use std::cmp::Ordering;
use std::fmt;

use chrono::{DateTime, NaiveDateTime, TimeZone, Utc};

use super::ColumnType;

/// A single cell. `Null` is the one sentinel shared by every type.
#[derive(Debug, Clone)]
pub enum Value {
    Null,
    Int(i64),
    Float(f64),
    Str(String),
    Bool(bool),
    /// Microseconds since the Unix epoch, UTC.
    Timestamp(i64),
}

// Floats compare by bit pattern so that equality means byte equality.
impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        use Value::*;
        match (self, other) {
            (Null, Null) => true,
            (Int(a), Int(b)) => a == b,
            (Float(a), Float(b)) => a.to_bits() == b.to_bits(),
            (Str(a), Str(b)) => a == b,
            (Bool(a), Bool(b)) => a == b,
            (Timestamp(a), Timestamp(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Value {}

impl std::hash::Hash for Value {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        std::mem::discriminant(self).hash(state);
        match self {
            Value::Null => {}
            Value::Int(v) | Value::Timestamp(v) => v.hash(state),
            Value::Float(v) => v.to_bits().hash(state),
            Value::Str(s) => s.hash(state),
            Value::Bool(b) => b.hash(state),
        }
    }
}

const TS_FORMAT: &str = "%Y-%m-%dT%H:%M:%S%.6fZ";

pub fn format_timestamp(micros: i64) -> String {
    match Utc.timestamp_micros(micros).single() {
        Some(dt) => dt.format(TS_FORMAT).to_string(),
        None => micros.to_string(),
    }
}

/// Parses RFC 3339 (any offset, normalized to UTC) or a naive
/// `YYYY-MM-DD[T ]HH:MM:SS[.f]` taken as UTC.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    if s.len() < 19 || !s.as_bytes()[0].is_ascii_digit() {
        return None;
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&Utc).timestamp_micros());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(n) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(n.and_utc().timestamp_micros());
        }
    }
    None
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn column_type(&self) -> Option<ColumnType> {
        Some(match self {
            Value::Null => return None,
            Value::Int(_) => ColumnType::Int64,
            Value::Float(_) => ColumnType::Float64,
            Value::Str(_) => ColumnType::String,
            Value::Bool(_) => ColumnType::Bool,
            Value::Timestamp(_) => ColumnType::TimestampMicrosUtc,
        })
    }

    /// Parses a non-empty cell as `ty`; `None` if it does not fit.
    pub fn parse_as(cell: &str, ty: ColumnType) -> Option<Value> {
        match ty {
            ColumnType::Int64 => cell.parse().ok().map(Value::Int),
            ColumnType::Float64 => cell.parse().ok().map(Value::Float),
            ColumnType::Bool => {
                if cell.eq_ignore_ascii_case("true") {
                    Some(Value::Bool(true))
                } else if cell.eq_ignore_ascii_case("false") {
                    Some(Value::Bool(false))
                } else {
                    None
                }
            }
            ColumnType::TimestampMicrosUtc => parse_timestamp(cell).map(Value::Timestamp),
            ColumnType::String => Some(Value::Str(cell.to_string())),
        }
    }

    /// Parses a cell against a known type; empty cells are nulls.
    pub fn parse_cell(cell: &str, ty: ColumnType) -> Option<Value> {
        if cell.is_empty() {
            Some(Value::Null)
        } else {
            Value::parse_as(cell, ty)
        }
    }

    /// Numeric view used by statistics; ints widen to f64.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Float(v) => Some(*v),
            _ => None,
        }
    }

    /// Ordering among values of one column type; nulls sort first.
    pub fn cmp_same_type(&self, other: &Value) -> Ordering {
        use Value::*;
        match (self, other) {
            (Null, Null) => Ordering::Equal,
            (Null, _) => Ordering::Less,
            (_, Null) => Ordering::Greater,
            (Int(a), Int(b)) | (Timestamp(a), Timestamp(b)) => a.cmp(b),
            (Float(a), Float(b)) => a.total_cmp(b),
            (Str(a), Str(b)) => a.cmp(b),
            (Bool(a), Bool(b)) => a.cmp(b),
            (a, b) => a.rank().cmp(&b.rank()),
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Int(_) => 1,
            Value::Float(_) => 2,
            Value::Str(_) => 3,
            Value::Bool(_) => 4,
            Value::Timestamp(_) => 5,
        }
    }
}

/// CSV cell text. Floats always carry a decimal point or exponent so that
/// re-inference keeps them float64.
impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => Ok(()),
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v:?}"),
            Value::Str(s) => f.write_str(s),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Timestamp(t) => f.write_str(&format_timestamp(*t)),
        }
    }
}
