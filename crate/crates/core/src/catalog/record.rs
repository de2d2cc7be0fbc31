use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_yaml::Value as Yaml;

use crate::ids::{DatasetId, Fingerprint, ObjectId};
use crate::model::{Labels, Schema, Segment, SourceLink};
use crate::ssvd::{spec_from_yaml, spec_to_yaml, DatasetKind, VirtualDatasetSpec};
use crate::transforms::{window_segment_id, EntryMeta, InputMeta, WindowRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Active,
    Removed,
}

/// One object of a dataset as recorded in the catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub object_id: ObjectId,
    #[serde(default, skip_serializing_if = "Labels::is_empty")]
    pub labels: Labels,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub source_links: Vec<SourceLink>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_count: Option<u64>,
    /// Index into the record's `schemas`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub byte_size: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<Fingerprint>,
}

/// Object index of a dataset. Sliding-window outputs are kept in compact
/// form: their entries follow from the source's object runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum ObjectIndex {
    Listed {
        objects: Vec<ObjectEntry>,
    },
    Windowed {
        source: DatasetId,
        width: u64,
        stride: u64,
        runs: Vec<WindowRun>,
    },
}

impl ObjectIndex {
    pub fn len(&self) -> usize {
        match self {
            ObjectIndex::Listed { objects } => objects.len(),
            ObjectIndex::Windowed { runs, .. } => runs.iter().map(|r| r.segments as usize).sum(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn window_entry(source: DatasetId, width: u64, stride: u64, run: &WindowRun, k: u64) -> ObjectEntry {
        let offset = k * stride;
        ObjectEntry {
            object_id: window_segment_id(&run.source_id, offset),
            labels: run.labels.clone(),
            source_links: vec![SourceLink {
                dataset: source,
                object_id: run.source_id.clone(),
                segment: Some(Segment { offset, len: width }),
            }],
            row_count: Some(width),
            schema: run.schema,
            byte_size: None,
            fingerprint: None,
        }
    }

    pub fn entry(&self, ordinal: usize) -> Option<ObjectEntry> {
        match self {
            ObjectIndex::Listed { objects } => objects.get(ordinal).cloned(),
            ObjectIndex::Windowed {
                source,
                width,
                stride,
                runs,
            } => {
                let mut rest = ordinal as u64;
                for run in runs {
                    if rest < run.segments {
                        return Some(Self::window_entry(*source, *width, *stride, run, rest));
                    }
                    rest -= run.segments;
                }
                None
            }
        }
    }

    pub fn position(&self, object_id: &ObjectId) -> Option<usize> {
        match self {
            ObjectIndex::Listed { objects } => objects.iter().position(|e| &e.object_id == object_id),
            ObjectIndex::Windowed { stride, runs, .. } => {
                let (src, offset) = object_id.as_str().rsplit_once('@')?;
                let offset: u64 = offset.parse().ok()?;
                if !offset.is_multiple_of(*stride) || window_segment_id(&ObjectId::new(src), offset) != *object_id {
                    return None;
                }
                let k = offset / stride;
                let mut before = 0usize;
                for run in runs {
                    if run.source_id.as_str() == src {
                        return (k < run.segments).then_some(before + k as usize);
                    }
                    before += run.segments as usize;
                }
                None
            }
        }
    }

    pub fn iter(&self) -> Box<dyn Iterator<Item = ObjectEntry> + '_> {
        match self {
            ObjectIndex::Listed { objects } => Box::new(objects.iter().cloned()),
            ObjectIndex::Windowed {
                source,
                width,
                stride,
                runs,
            } => Box::new(
                runs.iter()
                    .flat_map(move |run| (0..run.segments).map(move |k| Self::window_entry(*source, *width, *stride, run, k))),
            ),
        }
    }
}

/// A catalog entry for an explicit or virtual dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "RecordWire", try_from = "RecordWire")]
pub struct DatasetRecord {
    pub id: DatasetId,
    pub seq: u64,
    pub kind: DatasetKind,
    pub name: String,
    pub status: Status,
    pub created_at: DateTime<Utc>,
    pub creator: String,
    /// Virtual only.
    pub spec: Option<VirtualDatasetSpec>,
    /// Resolved input ids, parallel to the spec's inputs. Virtual only.
    pub inputs: Vec<DatasetId>,
    /// Explicit only.
    pub uri: Option<String>,
    pub format: Option<String>,
    /// Free-form metadata of explicit datasets.
    pub metadata: BTreeMap<String, Yaml>,
    pub schemas: Vec<Schema>,
    pub object_index: ObjectIndex,
}

impl DatasetRecord {
    pub fn is_active(&self) -> bool {
        self.status == Status::Active
    }

    pub fn transform_id(&self) -> Option<&str> {
        self.spec.as_ref().map(|s| s.transform.transform_id.as_str())
    }

    /// String entries of `metadata.labels`, used by search.
    pub fn labels(&self) -> BTreeMap<String, String> {
        match &self.spec {
            Some(spec) => spec.labels(),
            None => match self.metadata.get("labels") {
                Some(Yaml::Mapping(m)) => m
                    .iter()
                    .filter_map(|(k, v)| {
                        let v = match v {
                            Yaml::String(s) => s.clone(),
                            Yaml::Number(n) => n.to_string(),
                            Yaml::Bool(b) => b.to_string(),
                            _ => return None,
                        };
                        Some((k.as_str()?.to_string(), v))
                    })
                    .collect(),
                _ => BTreeMap::new(),
            },
        }
    }

    pub fn schema_of(&self, entry: &ObjectEntry) -> Option<&Schema> {
        entry.schema.map(|i| &self.schemas[i as usize])
    }

    /// Transform-facing view of the object index.
    pub fn input_meta(&self) -> InputMeta {
        InputMeta {
            name: self.name.clone(),
            schemas: self.schemas.clone(),
            objects: self
                .object_index
                .iter()
                .map(|e| EntryMeta {
                    object_id: e.object_id,
                    labels: e.labels,
                    row_count: e.row_count,
                    schema: e.schema,
                })
                .collect(),
        }
    }

    /// Canonical YAML text of this record.
    pub fn to_yaml(&self) -> String {
        let v = serde_yaml::to_value(self).expect("records serialize");
        crate::ssvd::to_canonical_yaml_string(&v)
    }
}

#[derive(Serialize, Deserialize)]
struct RecordWire {
    id: DatasetId,
    seq: u64,
    kind: DatasetKind,
    name: String,
    status: Status,
    created_at: DateTime<Utc>,
    creator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spec: Option<Yaml>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    inputs: Vec<DatasetId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    uri: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    format: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, Yaml>,
    #[serde(default)]
    schemas: Vec<Schema>,
    object_index: ObjectIndex,
}

impl From<DatasetRecord> for RecordWire {
    fn from(r: DatasetRecord) -> Self {
        RecordWire {
            id: r.id,
            seq: r.seq,
            kind: r.kind,
            name: r.name,
            status: r.status,
            created_at: r.created_at,
            creator: r.creator,
            spec: r.spec.as_ref().map(spec_to_yaml),
            inputs: r.inputs,
            uri: r.uri,
            format: r.format,
            metadata: r.metadata,
            schemas: r.schemas,
            object_index: r.object_index,
        }
    }
}

impl TryFrom<RecordWire> for DatasetRecord {
    type Error = String;

    fn try_from(w: RecordWire) -> Result<Self, String> {
        let spec = w
            .spec
            .as_ref()
            .map(spec_from_yaml)
            .transpose()
            .map_err(|e| format!("record {}: {e}", w.id))?;
        Ok(DatasetRecord {
            id: w.id,
            seq: w.seq,
            kind: w.kind,
            name: w.name,
            status: w.status,
            created_at: w.created_at,
            creator: w.creator,
            spec,
            inputs: w.inputs,
            uri: w.uri,
            format: w.format,
            metadata: w.metadata,
            schemas: w.schemas,
            object_index: w.object_index,
        })
    }
}
