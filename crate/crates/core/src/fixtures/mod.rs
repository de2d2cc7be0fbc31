//! Synthetic wind-farm event data and long time series, used by tests,
//! benchmarks and the demo session.

pub mod pipelines;

use std::io;
use std::path::{Path, PathBuf};

use crate::ids::splitmix64;
use crate::model::{Column, ColumnType, Labels, Schema, Table, Value};
use crate::storage::{file_uri, MemObject, Storage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Farm {
    pub name: &'static str,
    pub objects: usize,
    pub columns: usize,
    pub anomalies: usize,
}

pub const FARMS: [Farm; 3] = [
    Farm {
        name: "farm_a",
        objects: 22,
        columns: 80,
        anomalies: 8,
    },
    Farm {
        name: "farm_b",
        objects: 38,
        columns: 90,
        anomalies: 14,
    },
    Farm {
        name: "farm_c",
        objects: 35,
        columns: 100,
        anomalies: 13,
    },
];

/// Columns present in every farm: `t`, `temp1`, `temp2` and `s04`..`s59`.
pub const SHARED_COLUMNS: usize = 59;

pub fn shared_column_names() -> Vec<String> {
    let mut names = vec!["t".to_string(), "temp1".to_string(), "temp2".to_string()];
    names.extend((4..=SHARED_COLUMNS).map(|i| format!("s{i:02}")));
    names
}

/// Farm-specific columns are interleaved with the shared ones so that the
/// common set is not simply a prefix.
pub fn farm_schema(farm: &Farm) -> Schema {
    let shared = shared_column_names();
    let own = farm.columns - SHARED_COLUMNS;
    let mut cols = Vec::with_capacity(farm.columns);
    let mut k = 0;
    for (i, name) in shared.iter().enumerate() {
        let ty = if i == 0 { ColumnType::Int64 } else { ColumnType::Float64 };
        cols.push(Column::new(name.clone(), ty));
        if i % 3 == 2 && k < own {
            cols.push(Column::new(format!("{}_x{k:02}", farm.name), ColumnType::Float64));
            k += 1;
        }
    }
    while k < own {
        cols.push(Column::new(format!("{}_x{k:02}", farm.name), ColumnType::Float64));
        k += 1;
    }
    Schema::new(cols)
}

pub fn object_id(farm: &Farm, k: usize) -> String {
    format!("{}-evt{k:03}", farm.name)
}

/// Exactly `farm.anomalies` objects are anomalies; 3 is coprime with every
/// object count, so `3k mod n` is a permutation.
pub fn status(farm: &Farm, k: usize) -> &'static str {
    if (3 * k) % farm.objects < farm.anomalies {
        "anomaly"
    } else {
        "normal"
    }
}

fn cell(seed: u64) -> f64 {
    // Two decimals keep CSV text short.
    (splitmix64(seed) % 100_000) as f64 / 100.0
}

pub fn event_table(farm_index: usize, k: usize, rows: usize) -> Table {
    let farm = &FARMS[farm_index];
    let schema = farm_schema(farm);
    let base = ((farm_index as u64) << 48) ^ ((k as u64) << 32);
    let rows = (0..rows)
        .map(|r| {
            schema
                .columns
                .iter()
                .enumerate()
                .map(|(j, c)| match c.ty {
                    ColumnType::Int64 => Value::Int(600 * r as i64),
                    _ => Value::Float(cell(base ^ ((r as u64) << 12) ^ j as u64)),
                })
                .collect()
        })
        .collect();
    Table::new(schema, rows)
}

pub fn event_labels(farm: &Farm, k: usize) -> Labels {
    Labels::from([
        ("farm".to_string(), farm.name.to_string()),
        ("status".to_string(), status(farm, k).to_string()),
    ])
}

/// Registers the three farms as `mem://<farm>` sources with `farm` and
/// `status` labels and returns their uris.
pub fn install_farms(storage: &Storage, rows: usize) -> Vec<String> {
    FARMS
        .iter()
        .enumerate()
        .map(|(i, farm)| {
            let objects = (0..farm.objects)
                .map(|k| MemObject::from_table(&object_id(farm, k), &event_table(i, k, rows), event_labels(farm, k)))
                .collect();
            storage.mem().put(farm.name, objects);
            format!("mem://{}", farm.name)
        })
        .collect()
}

/// Writes each farm as a directory of CSV files plus a `<farm>_labels.csv`
/// labels file; returns `(uri, labels path)` per farm.
pub fn write_farms(root: &Path, rows: usize) -> io::Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for (i, farm) in FARMS.iter().enumerate() {
        let dir = root.join(farm.name);
        std::fs::create_dir_all(&dir)?;
        let mut labels = String::from("object_id,farm,status\n");
        for k in 0..farm.objects {
            let id = object_id(farm, k);
            std::fs::write(dir.join(format!("{id}.csv")), event_table(i, k, rows).to_csv())?;
            labels.push_str(&format!("{id},{},{}\n", farm.name, status(farm, k)));
        }
        let labels_path = root.join(format!("{}_labels.csv", farm.name));
        std::fs::write(&labels_path, labels)?;
        out.push((file_uri(&dir), labels_path));
    }
    Ok(out)
}

/// A single long series `t, value` with integer time steps.
pub fn series_table(rows: usize) -> Table {
    let schema = Schema::new(vec![
        Column::new("t", ColumnType::Int64),
        Column::new("value", ColumnType::Float64),
    ]);
    let rows = (0..rows)
        .map(|r| vec![Value::Int(r as i64), Value::Float(cell(0x5e71e5 ^ r as u64))])
        .collect();
    Table::new(schema, rows)
}
