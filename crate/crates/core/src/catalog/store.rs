//! Durable catalog state: an append-only log of record versions
//! (`records.log`, entries are `<byte length>\n<canonical yaml>`) plus a
//! periodic snapshot of the latest versions (`snapshot.yaml`).

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DatasetRecord;
use crate::ids::DatasetId;

const SNAPSHOT_EVERY: usize = 128;

#[derive(Serialize, Deserialize)]
struct Snapshot {
    log_offset: u64,
    records: Vec<DatasetRecord>,
}

pub(crate) struct LogStore {
    dir: PathBuf,
    log: File,
    offset: u64,
    since_snapshot: usize,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> String {
    format!("{}: {e}", path.display())
}

/// Parses log entries from `bytes`; returns the records and the offset just
/// past the last complete entry.
fn replay(bytes: &[u8]) -> (Vec<DatasetRecord>, usize) {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let Some(nl) = bytes[pos..].iter().position(|&b| b == b'\n') else {
            break;
        };
        let Some(len) = std::str::from_utf8(&bytes[pos..pos + nl])
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
        else {
            break;
        };
        let start = pos + nl + 1;
        let Some(body) = bytes.get(start..start + len) else {
            break;
        };
        match serde_yaml::from_slice::<DatasetRecord>(body) {
            Ok(r) => out.push(r),
            Err(_) => break,
        }
        pos = start + len;
    }
    (out, pos)
}

impl LogStore {
    /// Opens (or creates) the store and returns the latest version of every
    /// record, in sequence order. A torn final entry is discarded.
    pub(crate) fn open(dir: &Path) -> Result<(LogStore, Vec<DatasetRecord>), String> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let log_path = dir.join("records.log");
        let snap_path = dir.join("snapshot.yaml");

        let mut latest: BTreeMap<DatasetId, DatasetRecord> = BTreeMap::new();
        let mut start = 0u64;
        if snap_path.exists() {
            let text = std::fs::read(&snap_path).map_err(|e| io_err(&snap_path, e))?;
            let snap: Snapshot = serde_yaml::from_slice(&text).map_err(|e| io_err(&snap_path, e))?;
            start = snap.log_offset;
            for r in snap.records {
                latest.insert(r.id, r);
            }
        }
        let bytes = match std::fs::read(&log_path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(io_err(&log_path, e)),
        };
        let start = (start as usize).min(bytes.len());
        let (records, consumed) = replay(&bytes[start..]);
        let good = start + consumed;
        let replayed = records.len();
        for r in records {
            latest.insert(r.id, r);
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| io_err(&log_path, e))?;
        if good < bytes.len() {
            tracing::warn!(dropped = bytes.len() - good, "discarding torn catalog log tail");
            log.set_len(good as u64).map_err(|e| io_err(&log_path, e))?;
        }
        let mut records: Vec<DatasetRecord> = latest.into_values().collect();
        records.sort_by_key(|r| r.seq);
        Ok((
            LogStore {
                dir: dir.to_path_buf(),
                log,
                offset: good as u64,
                since_snapshot: replayed,
            },
            records,
        ))
    }

    pub(crate) fn append(&mut self, record: &DatasetRecord) -> Result<(), String> {
        let body = record.to_yaml();
        let entry = format!("{}\n{body}", body.len());
        let path = self.dir.join("records.log");
        self.log.write_all(entry.as_bytes()).map_err(|e| io_err(&path, e))?;
        self.log.flush().map_err(|e| io_err(&path, e))?;
        self.offset += entry.len() as u64;
        self.since_snapshot += 1;
        Ok(())
    }

    pub(crate) fn wants_snapshot(&self) -> bool {
        self.since_snapshot >= SNAPSHOT_EVERY
    }

    pub(crate) fn snapshot(&mut self, records: &[DatasetRecord]) -> Result<(), String> {
        self.log.sync_data().map_err(|e| io_err(&self.dir, e))?;
        let snap = Snapshot {
            log_offset: self.offset,
            records: records.to_vec(),
        };
        let text = serde_yaml::to_string(&snap).map_err(|e| io_err(&self.dir, e))?;
        let tmp = self.dir.join("snapshot.yaml.tmp");
        let dst = self.dir.join("snapshot.yaml");
        std::fs::write(&tmp, text).map_err(|e| io_err(&tmp, e))?;
        std::fs::rename(&tmp, &dst).map_err(|e| io_err(&dst, e))?;
        self.since_snapshot = 0;
        Ok(())
    }
}
