//! The CSV dialect: UTF-8, `,` delimiter, `"` quoting with doubled-quote
//! escapes, `\n` line ends, first row is the header. Empty fields are nulls.

use super::{infer_schema, Schema, SchemaError, Table, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CsvError {
    #[error("malformed CSV: {0}")]
    Malformed(String),
    #[error("missing header row")]
    MissingHeader,
    #[error("row {0} has the wrong number of cells")]
    RaggedRow(usize),
    #[error("row {row}, column {column:?}: {reason}")]
    Parse {
        row: usize,
        column: String,
        reason: String,
    },
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

/// Splits CSV text into header and raw records. Ragged records are kept; the
/// caller decides whether they are fatal.
pub fn parse_csv_records(bytes: &[u8]) -> Result<(Vec<String>, Vec<Vec<String>>), CsvError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Err(CsvError::MissingHeader),
        Some(r) => r.map_err(|e| CsvError::Malformed(e.to_string()))?,
    };
    let header: Vec<String> = header.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| CsvError::Malformed(e.to_string()))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

impl Table {
    /// Serializes in the bit-exact dialect.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .quote_style(csv::QuoteStyle::Necessary)
            .from_writer(Vec::new());
        // Writing into a Vec cannot fail.
        w.write_record(self.schema.names()).expect("in-memory write");
        let mut cells: Vec<String> = Vec::with_capacity(self.schema.len());
        for row in &self.rows {
            cells.clear();
            cells.extend(row.iter().map(Value::to_string));
            w.write_record(&cells).expect("in-memory write");
        }
        let bytes = w.into_inner().expect("in-memory flush");
        String::from_utf8(bytes).expect("cells are UTF-8")
    }

    /// Parses CSV and infers the schema from every row.
    pub fn from_csv(bytes: &[u8]) -> Result<Table, CsvError> {
        let (header, rows) = parse_csv_records(bytes)?;
        if let Some(bad) = rows.iter().position(|r| r.len() != header.len()) {
            return Err(CsvError::RaggedRow(bad));
        }
        let schema = infer_schema(&header, &rows)?;
        Table::typed_from_records(schema, &rows)
    }

    /// Parses CSV whose header must match `schema`'s column names.
    pub fn from_csv_with_schema(bytes: &[u8], schema: &Schema) -> Result<Table, CsvError> {
        let (header, rows) = parse_csv_records(bytes)?;
        if !header.iter().map(String::as_str).eq(schema.names()) {
            return Err(CsvError::Malformed(format!(
                "header {header:?} does not match schema {schema}"
            )));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != header.len()) {
            return Err(CsvError::RaggedRow(bad));
        }
        Table::typed_from_records(schema.clone(), &rows)
    }

    fn typed_from_records(schema: Schema, rows: &[Vec<String>]) -> Result<Table, CsvError> {
        let typed = rows
            .iter()
            .enumerate()
            .map(|(ri, row)| {
                row.iter()
                    .zip(&schema.columns)
                    .map(|(cell, col)| {
                        Value::parse_cell(cell, col.ty).ok_or_else(|| CsvError::Parse {
                            row: ri,
                            column: col.name.clone(),
                            reason: format!("{cell:?} is not a valid {}", col.ty),
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Table::new(schema, typed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Column, ColumnType};

    #[test]
    fn quoting_and_nulls() {
        let t = Table::new(
            Schema::new(vec![
                Column::new("name", ColumnType::String).nullable(true),
                Column::new("v", ColumnType::Float64),
            ]),
            vec![
                vec![Value::Str("a,b".into()), Value::Float(1.5)],
                vec![Value::Str("say \"hi\"".into()), Value::Float(2.0)],
                vec![Value::Null, Value::Float(-0.0)],
            ],
        );
        let text = t.to_csv();
        assert_eq!(text, "name,v\n\"a,b\",1.5\n\"say \"\"hi\"\"\",2.0\n,-0.0\n");
        assert_eq!(Table::from_csv(text.as_bytes()).unwrap(), t);
    }

    #[test]
    fn header_only_is_empty_table() {
        let t = Table::from_csv(b"a,b\n").unwrap();
        assert_eq!(t.row_count(), 0);
        assert_eq!(t.schema.len(), 2);
    }

    #[test]
    fn ragged_is_rejected() {
        assert_eq!(Table::from_csv(b"a,b\n1,2\n3\n"), Err(CsvError::RaggedRow(1)));
    }
}
