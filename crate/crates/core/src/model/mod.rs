//! Tabular data model shared by every module: column types, schemas, tables
//! and data objects.

mod csv_io;
mod value;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ids::{DatasetId, ObjectId};

pub use csv_io::{parse_csv_records, CsvError};
pub use value::{format_timestamp, parse_timestamp, Value};

/// Closed set of cell types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColumnType {
    Int64,
    Float64,
    String,
    Bool,
    TimestampMicrosUtc,
}

impl ColumnType {
    /// Inference priority, narrowest first.
    pub const INFERENCE_ORDER: [ColumnType; 5] = [
        ColumnType::Int64,
        ColumnType::Float64,
        ColumnType::Bool,
        ColumnType::TimestampMicrosUtc,
        ColumnType::String,
    ];

    pub fn is_numeric(self) -> bool {
        matches!(self, ColumnType::Int64 | ColumnType::Float64)
    }

    pub fn name(self) -> &'static str {
        match self {
            ColumnType::Int64 => "int64",
            ColumnType::Float64 => "float64",
            ColumnType::String => "string",
            ColumnType::Bool => "bool",
            ColumnType::TimestampMicrosUtc => "timestamp-micros-utc",
        }
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ColumnType,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub nullable: bool,
}

impl Column {
    pub fn new(name: impl Into<String>, ty: ColumnType) -> Self {
        Column {
            name: name.into(),
            ty,
            nullable: false,
        }
    }

    pub fn nullable(mut self, nullable: bool) -> Self {
        self.nullable = nullable;
        self
    }
}

/// Ordered list of named, typed columns.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schema {
    pub columns: Vec<Column>,
}

impl Schema {
    pub fn new(columns: Vec<Column>) -> Self {
        Schema { columns }
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, c) in self.columns.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}:{}", c.name, c.ty)?;
            if c.nullable {
                f.write_str("?")?;
            }
        }
        f.write_str("]")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchemaError {
    #[error("header is empty")]
    EmptyHeader,
    #[error("duplicate column {0:?}")]
    DuplicateColumn(String),
    #[error("row {0} has the wrong number of cells")]
    RaggedRow(usize),
}

/// Infers a schema from header names and sampled text cells.
///
/// Each column gets the narrowest type (int64, float64, bool, timestamp,
/// string) that parses every non-empty sampled cell. Empty cells are nulls:
/// they are skipped for inference and make the column nullable.
pub fn infer_schema<S: AsRef<str>>(
    header: &[S],
    rows: &[Vec<S>],
) -> Result<Schema, SchemaError> {
    if header.is_empty() {
        return Err(SchemaError::EmptyHeader);
    }
    let mut seen = HashSet::new();
    for h in header {
        if !seen.insert(h.as_ref()) {
            return Err(SchemaError::DuplicateColumn(h.as_ref().to_string()));
        }
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != header.len()) {
        return Err(SchemaError::RaggedRow(bad));
    }
    let columns = header
        .iter()
        .enumerate()
        .map(|(ci, name)| {
            let mut candidates = ColumnType::INFERENCE_ORDER.to_vec();
            let mut nullable = false;
            for row in rows {
                let cell = row[ci].as_ref();
                if cell.is_empty() {
                    nullable = true;
                    continue;
                }
                candidates.retain(|ty| Value::parse_as(cell, *ty).is_some());
            }
            Column {
                name: name.as_ref().to_string(),
                ty: candidates[0],
                nullable,
            }
        })
        .collect();
    Ok(Schema { columns })
}

/// Columns present in every schema under the same name and type.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CommonColumns {
    /// In the first schema's column order. Nullable if nullable anywhere.
    pub columns: Vec<Column>,
    /// Names present everywhere whose types disagree.
    pub conflicts: Vec<String>,
}

pub fn common_columns(schemas: &[&Schema]) -> CommonColumns {
    let Some((first, rest)) = schemas.split_first() else {
        return CommonColumns::default();
    };
    let lookups: Vec<HashMap<&str, &Column>> = rest
        .iter()
        .map(|s| s.columns.iter().map(|c| (c.name.as_str(), c)).collect())
        .collect();
    let mut out = CommonColumns::default();
    'col: for col in &first.columns {
        let mut nullable = col.nullable;
        let mut conflict = false;
        for lookup in &lookups {
            match lookup.get(col.name.as_str()) {
                None => continue 'col,
                Some(other) => {
                    conflict |= other.ty != col.ty;
                    nullable |= other.nullable;
                }
            }
        }
        if conflict {
            out.conflicts.push(col.name.clone());
        } else {
            out.columns.push(Column {
                name: col.name.clone(),
                ty: col.ty,
                nullable,
            });
        }
    }
    out
}

/// One in-memory tabular data object.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub schema: Schema,
    pub rows: Vec<Vec<Value>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    DuplicateColumn { column: String },
    RaggedRow { row: usize },
    TypeMismatch { row: usize, column: String },
    UnexpectedNull { row: usize, column: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateColumn { column } => write!(f, "duplicate column {column:?}"),
            Violation::RaggedRow { row } => write!(f, "row {row}: wrong number of cells"),
            Violation::TypeMismatch { row, column } => {
                write!(f, "row {row}, column {column:?}: type mismatch")
            }
            Violation::UnexpectedNull { row, column } => {
                write!(f, "row {row}, column {column:?}: null in non-nullable column")
            }
        }
    }
}

impl Table {
    pub fn new(schema: Schema, rows: Vec<Vec<Value>>) -> Self {
        Table { schema, rows }
    }

    pub fn empty(schema: Schema) -> Self {
        Table {
            schema,
            rows: Vec::new(),
        }
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn column_values(&self, idx: usize) -> impl Iterator<Item = &Value> {
        self.rows.iter().map(move |r| &r[idx])
    }

    /// Checks every table invariant and reports each violation.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        for c in &self.schema.columns {
            if !seen.insert(c.name.as_str()) {
                out.push(Violation::DuplicateColumn {
                    column: c.name.clone(),
                });
            }
        }
        let width = self.schema.len();
        for (ri, row) in self.rows.iter().enumerate() {
            if row.len() != width {
                out.push(Violation::RaggedRow { row: ri });
                continue;
            }
            for (cell, col) in row.iter().zip(&self.schema.columns) {
                if cell.is_null() {
                    if !col.nullable {
                        out.push(Violation::UnexpectedNull {
                            row: ri,
                            column: col.name.clone(),
                        });
                    }
                } else if cell.column_type() != Some(col.ty) {
                    out.push(Violation::TypeMismatch {
                        row: ri,
                        column: col.name.clone(),
                    });
                }
            }
        }
        out
    }

    /// Projects onto `target`'s columns (looked up by name); `target` supplies
    /// the resulting schema, including nullability.
    pub fn project(&self, target: &Schema) -> Option<Table> {
        let idx: Vec<usize> = target
            .columns
            .iter()
            .map(|c| self.schema.index_of(&c.name))
            .collect::<Option<_>>()?;
        let rows = self
            .rows
            .iter()
            .map(|r| idx.iter().map(|&i| r[i].clone()).collect())
            .collect();
        Some(Table {
            schema: target.clone(),
            rows,
        })
    }

    pub fn slice_rows(&self, offset: usize, len: usize) -> Table {
        let end = (offset + len).min(self.rows.len());
        let start = offset.min(end);
        Table {
            schema: self.schema.clone(),
            rows: self.rows[start..end].to_vec(),
        }
    }
}

pub type Labels = BTreeMap<String, String>;

/// Row slice of a source object, used by window segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub offset: u64,
    pub len: u64,
}

/// Per-object link back to the object it was derived from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourceLink {
    pub dataset: DatasetId,
    pub object_id: ObjectId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment: Option<Segment>,
}

/// A data object: payload when materialized, source link when virtual.
#[derive(Debug, Clone, PartialEq)]
pub struct DataObject {
    pub object_id: ObjectId,
    pub payload: Option<Table>,
    pub labels: Labels,
    pub source_link: Option<SourceLink>,
}

impl DataObject {
    pub fn materialized(object_id: ObjectId, payload: Table, labels: Labels) -> Self {
        DataObject {
            object_id,
            payload: Some(payload),
            labels,
            source_link: None,
        }
    }

    pub fn is_virtual(&self) -> bool {
        self.payload.is_none()
    }
}
