//! Binary columnar encoding of a node's output: every slot, every table,
//! column by column, followed by an FNV-1a checksum of everything before it.

use crate::ids::fnv1a64;
use crate::model::{Column, ColumnType, Schema, Table, Value};

const MAGIC: &[u8; 4] = b"VDC1";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("corrupt cache payload: {0}")]
pub struct DecodeError(pub &'static str);

fn type_tag(t: ColumnType) -> u8 {
    match t {
        ColumnType::Int64 => 0,
        ColumnType::Float64 => 1,
        ColumnType::String => 2,
        ColumnType::Bool => 3,
        ColumnType::TimestampMicrosUtc => 4,
    }
}

fn tag_type(b: u8) -> Option<ColumnType> {
    Some(match b {
        0 => ColumnType::Int64,
        1 => ColumnType::Float64,
        2 => ColumnType::String,
        3 => ColumnType::Bool,
        4 => ColumnType::TimestampMicrosUtc,
        _ => return None,
    })
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

pub fn encode(slots: &[Vec<Table>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(64);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, slots.len());
    for slot in slots {
        put_u32(&mut out, slot.len());
        for t in slot {
            put_u32(&mut out, t.schema.columns.len());
            for c in &t.schema.columns {
                put_str(&mut out, &c.name);
                out.push(type_tag(c.ty));
                out.push(c.nullable as u8);
            }
            out.extend_from_slice(&(t.rows.len() as u64).to_le_bytes());
            for j in 0..t.schema.columns.len() {
                for row in &t.rows {
                    match &row[j] {
                        Value::Null => out.push(0),
                        Value::Int(v) => {
                            out.push(1);
                            out.extend_from_slice(&v.to_le_bytes());
                        }
                        Value::Float(v) => {
                            out.push(2);
                            out.extend_from_slice(&v.to_bits().to_le_bytes());
                        }
                        Value::Str(s) => {
                            out.push(3);
                            put_str(&mut out, s);
                        }
                        Value::Bool(b) => out.push(if *b { 5 } else { 4 }),
                        Value::Timestamp(v) => {
                            out.push(6);
                            out.extend_from_slice(&v.to_le_bytes());
                        }
                    }
                }
            }
        }
    }
    let sum = fnv1a64(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(DecodeError("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String, DecodeError> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| DecodeError("invalid utf-8"))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Vec<Table>>, DecodeError> {
    if bytes.len() < MAGIC.len() + 8 || &bytes[..4] != MAGIC {
        return Err(DecodeError("bad magic"));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 8);
    if fnv1a64(body).to_le_bytes() != sum {
        return Err(DecodeError("checksum mismatch"));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let nslots = r.u32()?;
    let mut slots = Vec::with_capacity(nslots.min(1 << 16));
    for _ in 0..nslots {
        let ntables = r.u32()?;
        let mut tables = Vec::with_capacity(ntables.min(1 << 20));
        for _ in 0..ntables {
            let ncols = r.u32()?;
            let mut columns = Vec::with_capacity(ncols.min(1 << 16));
            for _ in 0..ncols {
                let name = r.str()?;
                let ty = tag_type(r.u8()?).ok_or(DecodeError("bad column type"))?;
                let nullable = r.u8()? != 0;
                columns.push(Column::new(name, ty).nullable(nullable));
            }
            let nrows = usize::try_from(r.u64()?).map_err(|_| DecodeError("row count"))?;
            if nrows > body.len() {
                return Err(DecodeError("row count"));
            }
            let mut rows: Vec<Vec<Value>> = (0..nrows).map(|_| Vec::with_capacity(ncols)).collect();
            for _ in 0..ncols {
                for row in rows.iter_mut() {
                    let v = match r.u8()? {
                        0 => Value::Null,
                        1 => Value::Int(r.u64()? as i64),
                        2 => Value::Float(f64::from_bits(r.u64()?)),
                        3 => Value::Str(r.str()?),
                        4 => Value::Bool(false),
                        5 => Value::Bool(true),
                        6 => Value::Timestamp(r.u64()? as i64),
                        _ => return Err(DecodeError("bad value tag")),
                    };
                    row.push(v);
                }
            }
            tables.push(Table::new(Schema::new(columns), rows));
        }
        slots.push(tables);
    }
    if r.pos != body.len() {
        return Err(DecodeError("trailing bytes"));
    }
    Ok(slots)
}
