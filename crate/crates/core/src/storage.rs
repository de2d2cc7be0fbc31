//! Read-only access to explicit datasets: directories of CSV files
//! (`file:///abs/dir`) and in-memory fixtures (`mem://name`).

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::SystemTime;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::ids::{Fingerprint, ObjectId};
use crate::model::{parse_csv_records, CsvError, Labels, Schema, Table, Violation};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StorageError {
    #[error("cannot read source {uri}: {reason}")]
    UnreadableSource { uri: String, reason: String },
    #[error("object {object_id} not found in {uri}")]
    NotFound { uri: String, object_id: ObjectId },
    #[error("object {object_id} in {uri}: {source}")]
    Parse {
        uri: String,
        object_id: ObjectId,
        source: CsvError,
    },
    #[error("object {object_id} in {uri} changed since registration")]
    SourceChanged { uri: String, object_id: ObjectId },
    #[error("unsupported storage uri {0:?}")]
    UnsupportedUri(String),
}

/// Statistics gathered for one source object in a single pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectStat {
    pub object_id: ObjectId,
    pub byte_size: u64,
    /// `None` when the object does not parse as a table.
    pub row_count: Option<u64>,
    pub schema: Option<Schema>,
    pub fingerprint: Fingerprint,
    #[serde(default, skip_serializing_if = "Labels::is_empty")]
    pub labels: Labels,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<Violation>,
}

impl ObjectStat {
    pub fn from_bytes(object_id: ObjectId, bytes: &[u8]) -> Self {
        let mut stat = ObjectStat {
            object_id,
            byte_size: bytes.len() as u64,
            row_count: None,
            schema: None,
            fingerprint: Fingerprint::of(bytes),
            labels: Labels::new(),
            warnings: Vec::new(),
        };
        if let Ok((header, rows)) = parse_csv_records(bytes) {
            stat.warnings = rows
                .iter()
                .enumerate()
                .filter(|(_, r)| r.len() != header.len())
                .map(|(row, _)| Violation::RaggedRow { row })
                .collect();
            if stat.warnings.is_empty() {
                if let Ok(t) = Table::from_csv(bytes) {
                    stat.row_count = Some(t.row_count() as u64);
                    stat.schema = Some(t.schema);
                }
            }
        }
        stat
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    File(PathBuf),
    Mem(String),
}

pub fn parse_uri(uri: &str) -> Result<Location, StorageError> {
    if let Some(path) = uri.strip_prefix("file://") {
        let p = PathBuf::from(path);
        if p.is_absolute() {
            return Ok(Location::File(p));
        }
    } else if let Some(name) = uri.strip_prefix("mem://") {
        if !name.is_empty() {
            return Ok(Location::Mem(name.to_string()));
        }
    }
    Err(StorageError::UnsupportedUri(uri.to_string()))
}

/// A backing store for explicit datasets.
pub trait StorageAdapter: Send + Sync {
    fn scheme(&self) -> &'static str;
    /// Object ids and raw bytes sizes, sorted by id.
    fn list(&self, uri: &str, loc: &Location) -> Result<Vec<ObjectStat>, StorageError>;
    fn read_bytes(&self, uri: &str, loc: &Location, object_id: &ObjectId) -> Result<Vec<u8>, StorageError>;
    /// Content fingerprint of the object as it is now.
    fn fingerprint(&self, uri: &str, loc: &Location, object_id: &ObjectId) -> Result<Fingerprint, StorageError>;
}

fn unreadable(uri: &str, e: impl std::fmt::Display) -> StorageError {
    StorageError::UnreadableSource {
        uri: uri.to_string(),
        reason: e.to_string(),
    }
}

/// Directories of `*.csv` files; the object id is the file stem.
#[derive(Default)]
pub struct FileAdapter {
    // (path, size, mtime) -> fingerprint, so unchanged files are hashed once.
    memo: Mutex<HashMap<PathBuf, (u64, SystemTime, Fingerprint)>>,
}

impl FileAdapter {
    fn dir<'a>(&self, loc: &'a Location) -> &'a Path {
        match loc {
            Location::File(p) => p,
            Location::Mem(_) => unreachable!("dispatched by scheme"),
        }
    }

    fn object_path(&self, uri: &str, loc: &Location, object_id: &ObjectId) -> Result<PathBuf, StorageError> {
        let id = object_id.as_str();
        if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
            return Err(StorageError::NotFound {
                uri: uri.to_string(),
                object_id: object_id.clone(),
            });
        }
        let p = self.dir(loc).join(format!("{id}.csv"));
        if !p.is_file() {
            return Err(StorageError::NotFound {
                uri: uri.to_string(),
                object_id: object_id.clone(),
            });
        }
        Ok(p)
    }
}

impl StorageAdapter for FileAdapter {
    fn scheme(&self) -> &'static str {
        "file"
    }

    fn list(&self, uri: &str, loc: &Location) -> Result<Vec<ObjectStat>, StorageError> {
        let dir = self.dir(loc);
        let entries = std::fs::read_dir(dir).map_err(|e| unreadable(uri, e))?;
        let mut files = Vec::new();
        for e in entries {
            let p = e.map_err(|e| unreadable(uri, e))?.path();
            if p.is_file() && p.extension().is_some_and(|x| x == "csv") {
                if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                    files.push((stem.to_string(), p));
                }
            }
        }
        files.sort();
        files
            .into_iter()
            .map(|(stem, p)| {
                let bytes = std::fs::read(&p).map_err(|e| unreadable(uri, e))?;
                Ok(ObjectStat::from_bytes(ObjectId(stem), &bytes))
            })
            .collect()
    }

    fn read_bytes(&self, uri: &str, loc: &Location, object_id: &ObjectId) -> Result<Vec<u8>, StorageError> {
        let p = self.object_path(uri, loc, object_id)?;
        std::fs::read(p).map_err(|e| unreadable(uri, e))
    }

    fn fingerprint(&self, uri: &str, loc: &Location, object_id: &ObjectId) -> Result<Fingerprint, StorageError> {
        let p = self.object_path(uri, loc, object_id)?;
        let meta = std::fs::metadata(&p).map_err(|e| unreadable(uri, e))?;
        let mtime = meta.modified().map_err(|e| unreadable(uri, e))?;
        if let Some(&(size, t, fp)) = self.memo.lock().get(&p) {
            if size == meta.len() && t == mtime {
                return Ok(fp);
            }
        }
        let fp = Fingerprint::of(&std::fs::read(&p).map_err(|e| unreadable(uri, e))?);
        self.memo.lock().insert(p, (meta.len(), mtime, fp));
        Ok(fp)
    }
}

/// One object of an in-memory fixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MemObject {
    pub object_id: ObjectId,
    pub bytes: Arc<Vec<u8>>,
    pub labels: Labels,
}

impl MemObject {
    pub fn from_table(id: &str, table: &Table, labels: Labels) -> Self {
        MemObject {
            object_id: ObjectId::new(id),
            bytes: Arc::new(table.to_csv().into_bytes()),
            labels,
        }
    }
}

/// Named in-memory fixtures. Replacing a fixture models a changed source.
#[derive(Default)]
pub struct MemAdapter {
    fixtures: RwLock<HashMap<String, Vec<MemObject>>>,
}

impl MemAdapter {
    pub fn put(&self, name: &str, mut objects: Vec<MemObject>) {
        objects.sort_by(|a, b| a.object_id.cmp(&b.object_id));
        self.fixtures.write().insert(name.to_string(), objects);
    }

    fn with_object<T>(
        &self,
        uri: &str,
        loc: &Location,
        object_id: &ObjectId,
        f: impl FnOnce(&MemObject) -> T,
    ) -> Result<T, StorageError> {
        let Location::Mem(name) = loc else {
            unreachable!("dispatched by scheme")
        };
        let fixtures = self.fixtures.read();
        let objects = fixtures.get(name).ok_or_else(|| unreadable(uri, "no such fixture"))?;
        objects
            .iter()
            .find(|o| &o.object_id == object_id)
            .map(f)
            .ok_or_else(|| StorageError::NotFound {
                uri: uri.to_string(),
                object_id: object_id.clone(),
            })
    }
}

impl StorageAdapter for MemAdapter {
    fn scheme(&self) -> &'static str {
        "mem"
    }

    fn list(&self, uri: &str, loc: &Location) -> Result<Vec<ObjectStat>, StorageError> {
        let Location::Mem(name) = loc else {
            unreachable!("dispatched by scheme")
        };
        let fixtures = self.fixtures.read();
        let objects = fixtures.get(name).ok_or_else(|| unreadable(uri, "no such fixture"))?;
        Ok(objects
            .iter()
            .map(|o| {
                let mut stat = ObjectStat::from_bytes(o.object_id.clone(), &o.bytes);
                stat.labels = o.labels.clone();
                stat
            })
            .collect())
    }

    fn read_bytes(&self, uri: &str, loc: &Location, object_id: &ObjectId) -> Result<Vec<u8>, StorageError> {
        self.with_object(uri, loc, object_id, |o| o.bytes.to_vec())
    }

    fn fingerprint(&self, uri: &str, loc: &Location, object_id: &ObjectId) -> Result<Fingerprint, StorageError> {
        self.with_object(uri, loc, object_id, |o| Fingerprint::of(&o.bytes))
    }
}

/// Dispatches URIs to the adapter for their scheme.
pub struct Storage {
    file: FileAdapter,
    mem: MemAdapter,
}

impl Default for Storage {
    fn default() -> Self {
        Self::new()
    }
}

impl Storage {
    pub fn new() -> Self {
        Storage {
            file: FileAdapter::default(),
            mem: MemAdapter::default(),
        }
    }

    pub fn mem(&self) -> &MemAdapter {
        &self.mem
    }

    fn adapter(&self, uri: &str) -> Result<(&dyn StorageAdapter, Location), StorageError> {
        let loc = parse_uri(uri)?;
        let a: &dyn StorageAdapter = match loc {
            Location::File(_) => &self.file,
            Location::Mem(_) => &self.mem,
        };
        Ok((a, loc))
    }

    /// One stat per object, sorted by object id.
    pub fn list_objects(&self, uri: &str) -> Result<Vec<ObjectStat>, StorageError> {
        let (a, loc) = self.adapter(uri)?;
        a.list(uri, &loc)
    }

    pub fn read_object(&self, uri: &str, object_id: &ObjectId) -> Result<Table, StorageError> {
        let (a, loc) = self.adapter(uri)?;
        let bytes = a.read_bytes(uri, &loc, object_id)?;
        parse_object(uri, object_id, &bytes)
    }

    /// Reads an object and checks it still has the registered fingerprint.
    pub fn read_verified(
        &self,
        uri: &str,
        object_id: &ObjectId,
        expected: Fingerprint,
    ) -> Result<Table, StorageError> {
        let (a, loc) = self.adapter(uri)?;
        let bytes = a.read_bytes(uri, &loc, object_id)?;
        if Fingerprint::of(&bytes) != expected {
            return Err(StorageError::SourceChanged {
                uri: uri.to_string(),
                object_id: object_id.clone(),
            });
        }
        parse_object(uri, object_id, &bytes)
    }

    pub fn fingerprint(&self, uri: &str, object_id: &ObjectId) -> Result<Fingerprint, StorageError> {
        let (a, loc) = self.adapter(uri)?;
        a.fingerprint(uri, &loc, object_id)
    }
}

fn parse_object(uri: &str, object_id: &ObjectId, bytes: &[u8]) -> Result<Table, StorageError> {
    Table::from_csv(bytes).map_err(|source| StorageError::Parse {
        uri: uri.to_string(),
        object_id: object_id.clone(),
        source,
    })
}

pub fn file_uri(path: &Path) -> String {
    format!("file://{}", path.display())
}
