//! Built-in transformation repository and the external-process plugin
//! mechanism.
//!
//! Every transform answers two questions:
//!
//! * [`Transform::plan`]: given only input metadata (object ids, labels, row
//!   counts, schemas), which output objects exist, where does each come from,
//!   and what schema does it have. The catalog uses this to build object
//!   indexes without touching payloads.
//! * [`Transform::compute_object`] / [`Transform::compute_dataset`]: produce
//!   the payloads of a plan.

mod external;
mod features;
mod integrate;
mod merge;
mod normalize;
mod partition;
pub mod rng;
mod sample;
mod select;
mod window;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::ids::{IdGen, ObjectId};
use crate::model::{DataObject, Labels, Schema, Segment, Table};
use crate::ssvd::{ParamValue, Params};

pub use external::{load_plugin_file, run_external, PluginLimits, PluginManifest, PluginTransform};
pub use partition::{partition_assignment, slot_sizes};
pub use sample::SampleStrategy;
pub use window::{segment_count, window_segment_id};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arity {
    Exactly(usize),
    AtLeast(usize),
}

impl Arity {
    pub fn accepts(&self, n: usize) -> bool {
        match *self {
            Arity::Exactly(k) => n == k,
            Arity::AtLeast(k) => n >= k,
        }
    }
}

impl fmt::Display for Arity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arity::Exactly(k) => write!(f, "{k}"),
            Arity::AtLeast(k) => write!(f, ">={k}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    DatasetLevel,
    ObjectLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Int,
    Number,
    Bool,
    String,
    StringList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    None,
    AtLeast(i64),
    OneOf(Vec<String>),
    NonEmpty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub key: String,
    #[serde(rename = "type")]
    pub kind: ParamKind,
    pub required: bool,
    pub constraint: Constraint,
}

impl ParamSpec {
    pub fn new(key: &str, kind: ParamKind, required: bool) -> Self {
        ParamSpec {
            key: key.to_string(),
            kind,
            required,
            constraint: Constraint::None,
        }
    }

    pub fn constraint(mut self, c: Constraint) -> Self {
        self.constraint = c;
        self
    }

    pub fn one_of(self, options: &[&str]) -> Self {
        self.constraint(Constraint::OneOf(options.iter().map(|s| s.to_string()).collect()))
    }
}

/// Registry entry for a transformation function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformDescriptor {
    pub transform_id: String,
    pub input_arity: Arity,
    pub output_arity: usize,
    pub param_schema: Vec<ParamSpec>,
    pub deterministic: bool,
    pub seeded: bool,
    pub granularity: Granularity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exec: Option<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransformError {
    #[error("parameter {key:?}: {reason}")]
    Param { key: String, reason: String },
    #[error("inputs share no common columns")]
    NoCommonColumns,
    #[error("unknown column {column:?} in object {object_id}")]
    UnknownColumn { column: String, object_id: ObjectId },
    #[error("column {0:?} is not numeric")]
    NonNumericColumn(String),
    #[error("key column missing in dataset {dataset:?}: {note}")]
    MissingKey { dataset: String, note: String },
    #[error("object {0} has no partner in every input")]
    UnpairedObject(ObjectId),
    #[error("label key {0:?} missing")]
    UnknownLabelKey(String),
    #[error("input {input} lacks {what}; materialize it first")]
    MetadataUnavailable { input: usize, what: &'static str },
    #[error("plugin exited with status {status}: {stderr}")]
    PluginCrashed { status: String, stderr: String },
    #[error("plugin protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("plugin exceeded time limit of {0:?}")]
    Timeout(Duration),
    #[error("plugin i/o: {0}")]
    Io(String),
    #[error("duplicate transform {0:?}")]
    DuplicateTransform(String),
    #[error("{0}")]
    Internal(String),
}

pub(crate) fn param_err(key: &str, reason: impl Into<String>) -> TransformError {
    TransformError::Param {
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Metadata of one input object, as known to the catalog.
#[derive(Debug, Clone, PartialEq)]
pub struct EntryMeta {
    pub object_id: ObjectId,
    pub labels: Labels,
    pub row_count: Option<u64>,
    pub schema: Option<u32>,
}

/// Metadata of one input dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct InputMeta {
    pub name: String,
    pub schemas: Vec<Schema>,
    pub objects: Vec<EntryMeta>,
}

impl InputMeta {
    pub fn schema_of(&self, ordinal: usize) -> Option<&Schema> {
        self.objects[ordinal]
            .schema
            .map(|i| &self.schemas[i as usize])
    }

    /// Metadata derived from materialized objects.
    pub fn from_objects(name: &str, objects: &[DataObject]) -> InputMeta {
        let mut interner = SchemaInterner::default();
        let entries = objects
            .iter()
            .map(|o| EntryMeta {
                object_id: o.object_id.clone(),
                labels: o.labels.clone(),
                row_count: o.payload.as_ref().map(|t| t.row_count() as u64),
                schema: o.payload.as_ref().map(|t| interner.intern(&t.schema)),
            })
            .collect();
        InputMeta {
            name: name.to_string(),
            schemas: interner.into_schemas(),
            objects: entries,
        }
    }

    pub(crate) fn position_map(&self) -> HashMap<&ObjectId, usize> {
        self.objects
            .iter()
            .enumerate()
            .map(|(i, e)| (&e.object_id, i))
            .collect()
    }

    /// Every distinct schema actually referenced, or an error if any object's
    /// schema is unknown.
    pub(crate) fn used_schemas(&self, input: usize) -> Result<Vec<u32>, TransformError> {
        let mut used: Vec<u32> = Vec::new();
        for e in &self.objects {
            let s = e.schema.ok_or(TransformError::MetadataUnavailable {
                input,
                what: "object schemas",
            })?;
            if !used.contains(&s) {
                used.push(s);
            }
        }
        Ok(used)
    }
}

#[derive(Debug, Default)]
pub struct SchemaInterner {
    schemas: Vec<Schema>,
}

impl SchemaInterner {
    pub fn intern(&mut self, s: &Schema) -> u32 {
        match self.schemas.iter().position(|x| x == s) {
            Some(i) => i as u32,
            None => {
                self.schemas.push(s.clone());
                (self.schemas.len() - 1) as u32
            }
        }
    }

    pub fn into_schemas(self) -> Vec<Schema> {
        self.schemas
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceRef {
    pub input: usize,
    pub ordinal: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlannedId {
    /// Keep the (first) source object's id.
    Keep(ObjectId),
    /// Derived deterministically from the source.
    Derived(ObjectId),
    /// Allocate a fresh random id.
    Fresh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedObject {
    pub id: PlannedId,
    pub labels: Labels,
    pub sources: Vec<SourceRef>,
    pub segment: Option<Segment>,
    pub row_count: Option<u64>,
    pub schema: Option<u32>,
}

/// Segments of one source object produced by a sliding window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowRun {
    pub source_ordinal: usize,
    pub source_id: ObjectId,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: Labels,
    pub segments: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlannedObjects {
    Listed(Vec<PlannedObject>),
    /// Compact form for sliding windows: entries are implied by the runs.
    Windowed {
        width: u64,
        stride: u64,
        runs: Vec<WindowRun>,
    },
}

impl PlannedObjects {
    pub fn len(&self) -> usize {
        match self {
            PlannedObjects::Listed(v) => v.len(),
            PlannedObjects::Windowed { runs, .. } => {
                runs.iter().map(|r| r.segments as usize).sum()
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> Box<dyn Iterator<Item = PlannedObject> + '_> {
        match self {
            PlannedObjects::Listed(v) => Box::new(v.iter().cloned()),
            PlannedObjects::Windowed {
                width,
                stride,
                runs,
            } => Box::new(runs.iter().flat_map(move |run| {
                (0..run.segments).map(move |k| {
                    let offset = k * stride;
                    PlannedObject {
                        id: PlannedId::Derived(window_segment_id(&run.source_id, offset)),
                        labels: run.labels.clone(),
                        sources: vec![SourceRef {
                            input: 0,
                            ordinal: run.source_ordinal,
                        }],
                        segment: Some(Segment {
                            offset,
                            len: *width,
                        }),
                        row_count: Some(*width),
                        schema: run.schema,
                    }
                })
            })),
        }
    }
}

/// One output slot of a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotPlan {
    pub schemas: Vec<Schema>,
    pub objects: PlannedObjects,
}

/// Source objects handed to an object-level computation.
#[derive(Debug, Clone, Copy)]
pub struct SourceObject<'a> {
    pub object_id: &'a ObjectId,
    pub labels: &'a Labels,
    pub table: &'a Table,
}

/// Everything an object-level computation needs for one output object.
#[derive(Debug, Clone)]
pub struct ObjectCx<'a> {
    pub slot: usize,
    pub segment: Option<Segment>,
    pub schema: Option<&'a Schema>,
    pub sources: Vec<SourceObject<'a>>,
}

impl<'a> ObjectCx<'a> {
    pub(crate) fn source(&self) -> Result<&SourceObject<'a>, TransformError> {
        self.sources
            .first()
            .ok_or_else(|| TransformError::Internal("object has no source".into()))
    }

    pub(crate) fn out_schema(&self) -> Result<&'a Schema, TransformError> {
        self.schema
            .ok_or_else(|| TransformError::Internal("output schema unknown".into()))
    }
}

/// Payloads of one input dataset, by ordinal.
#[derive(Debug, Clone, Copy)]
pub struct InputPayload<'a> {
    pub meta: &'a InputMeta,
    pub tables: &'a [Table],
}

pub trait Transform: Send + Sync {
    fn descriptor(&self) -> &TransformDescriptor;

    /// Cross-field parameter checks beyond the descriptor's schema.
    fn check_extra(&self, _params: &Params) -> Result<(), TransformError> {
        Ok(())
    }

    /// Output object indexes for every slot, from metadata alone.
    fn plan(
        &self,
        inputs: &[InputMeta],
        params: &Params,
        seed: u64,
    ) -> Result<Vec<SlotPlan>, TransformError>;

    /// Whether an output object can be computed from its own sources alone.
    fn is_object_level(&self, _params: &Params) -> bool {
        self.descriptor().granularity == Granularity::ObjectLevel
    }

    fn compute_object(
        &self,
        cx: &ObjectCx<'_>,
        params: &Params,
        seed: u64,
    ) -> Result<Table, TransformError>;

    /// Payloads for every slot of `slots`, in plan order.
    fn compute_dataset(
        &self,
        inputs: &[InputPayload<'_>],
        slots: &[SlotPlan],
        params: &Params,
        seed: u64,
    ) -> Result<Vec<Vec<Table>>, TransformError> {
        compute_per_object(self, inputs, slots, params, seed)
    }
}

pub(crate) fn compute_per_object<T: Transform + ?Sized>(
    t: &T,
    inputs: &[InputPayload<'_>],
    slots: &[SlotPlan],
    params: &Params,
    seed: u64,
) -> Result<Vec<Vec<Table>>, TransformError> {
    slots
        .iter()
        .enumerate()
        .map(|(slot_idx, slot)| {
            slot.objects
                .iter()
                .map(|po| {
                    let sources = po
                        .sources
                        .iter()
                        .map(|s| {
                            let input = &inputs[s.input];
                            let meta = &input.meta.objects[s.ordinal];
                            SourceObject {
                                object_id: &meta.object_id,
                                labels: &meta.labels,
                                table: &input.tables[s.ordinal],
                            }
                        })
                        .collect();
                    let cx = ObjectCx {
                        slot: slot_idx,
                        segment: po.segment,
                        schema: po.schema.map(|i| &slot.schemas[i as usize]),
                        sources,
                    };
                    t.compute_object(&cx, params, seed)
                })
                .collect()
        })
        .collect()
}

/// Checks params against the descriptor's schema, then transform-specific
/// rules.
pub fn check_params(t: &dyn Transform, params: &Params) -> Result<(), TransformError> {
    let desc = t.descriptor();
    for key in params.keys() {
        if !desc.param_schema.iter().any(|p| &p.key == key) {
            return Err(param_err(key, "unknown parameter"));
        }
    }
    for spec in &desc.param_schema {
        let Some(v) = params.get(&spec.key) else {
            if spec.required {
                return Err(param_err(&spec.key, "required"));
            }
            continue;
        };
        let type_ok = match spec.kind {
            ParamKind::Int => matches!(v, ParamValue::Int(_)),
            ParamKind::Number => matches!(v, ParamValue::Int(_) | ParamValue::Float(_)),
            ParamKind::Bool => matches!(v, ParamValue::Bool(_)),
            ParamKind::String => matches!(v, ParamValue::Str(_)),
            ParamKind::StringList => v.as_str_list().is_some(),
        };
        if !type_ok {
            return Err(param_err(
                &spec.key,
                format!("expected {:?}", spec.kind).to_lowercase(),
            ));
        }
        match &spec.constraint {
            Constraint::None => {}
            Constraint::AtLeast(min) => {
                if v.as_f64().is_some_and(|x| x < *min as f64) {
                    return Err(param_err(&spec.key, format!("must be ≥{min}")));
                }
            }
            Constraint::OneOf(options) => {
                let ok = match v {
                    ParamValue::Str(s) => options.contains(s),
                    ParamValue::List(items) => items
                        .iter()
                        .all(|i| i.as_str().is_some_and(|s| options.iter().any(|o| o == s))),
                    _ => false,
                };
                if !ok {
                    return Err(param_err(
                        &spec.key,
                        format!("must be one of {}", options.join(", ")),
                    ));
                }
            }
            Constraint::NonEmpty => {
                if matches!(v, ParamValue::List(l) if l.is_empty())
                    || matches!(v, ParamValue::Str(s) if s.is_empty())
                {
                    return Err(param_err(&spec.key, "must not be empty"));
                }
            }
        }
    }
    t.check_extra(params)
}

pub(crate) fn get_str<'a>(params: &'a Params, key: &str) -> Result<&'a str, TransformError> {
    params
        .get(key)
        .and_then(ParamValue::as_str)
        .ok_or_else(|| param_err(key, "required string"))
}

pub(crate) fn get_str_or<'a>(params: &'a Params, key: &str, default: &'a str) -> &'a str {
    params.get(key).and_then(ParamValue::as_str).unwrap_or(default)
}

pub(crate) fn get_int(params: &Params, key: &str) -> Result<i64, TransformError> {
    params
        .get(key)
        .and_then(ParamValue::as_i64)
        .ok_or_else(|| param_err(key, "required integer"))
}

pub(crate) fn get_list<'a>(params: &'a Params, key: &str) -> Result<Vec<&'a str>, TransformError> {
    params
        .get(key)
        .and_then(ParamValue::as_str_list)
        .ok_or_else(|| param_err(key, "required list of strings"))
}

/// Columns of `schema` selected by `name`: the exact column, or the
/// `name.*` group of a multivariate feature.
pub(crate) fn expand_column<'s>(schema: &'s Schema, name: &str) -> Vec<&'s str> {
    if let Some(i) = schema.index_of(name) {
        return vec![schema.columns[i].name.as_str()];
    }
    let prefix = format!("{name}.");
    schema
        .names()
        .filter(|n| n.starts_with(&prefix))
        .collect()
}

/// Copies ids, labels and row counts one-to-one, with a per-schema mapping.
pub(crate) fn passthrough_plan(
    input: &InputMeta,
    schemas: Vec<Schema>,
    schema_map: &dyn Fn(Option<u32>) -> Option<u32>,
    row_count: &dyn Fn(Option<u64>) -> Option<u64>,
) -> SlotPlan {
    let objects = input
        .objects
        .iter()
        .enumerate()
        .map(|(i, e)| PlannedObject {
            id: PlannedId::Keep(e.object_id.clone()),
            labels: e.labels.clone(),
            sources: vec![SourceRef { input: 0, ordinal: i }],
            segment: None,
            row_count: row_count(e.row_count),
            schema: schema_map(e.schema),
        })
        .collect();
    SlotPlan {
        schemas,
        objects: PlannedObjects::Listed(objects),
    }
}

/// An input dataset for eager application.
#[derive(Debug, Clone)]
pub struct EagerInput {
    pub name: String,
    pub objects: Vec<DataObject>,
}

/// Applies a transform directly to materialized inputs, returning every
/// output slot. Fresh ids are drawn from `ids`.
pub fn apply(
    t: &dyn Transform,
    inputs: &[EagerInput],
    params: &Params,
    seed: u64,
    ids: &IdGen,
) -> Result<Vec<Vec<DataObject>>, TransformError> {
    check_params(t, params)?;
    let arity = &t.descriptor().input_arity;
    if !arity.accepts(inputs.len()) {
        return Err(TransformError::Internal(format!("expected {arity} inputs, got {}", inputs.len())));
    }
    let metas: Vec<InputMeta> = inputs
        .iter()
        .map(|i| InputMeta::from_objects(&i.name, &i.objects))
        .collect();
    let tables: Vec<Vec<Table>> = inputs
        .iter()
        .map(|i| {
            i.objects
                .iter()
                .map(|o| {
                    o.payload
                        .clone()
                        .ok_or_else(|| TransformError::Internal("eager input not materialized".into()))
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let payloads: Vec<InputPayload<'_>> = metas
        .iter()
        .zip(&tables)
        .map(|(meta, tables)| InputPayload { meta, tables })
        .collect();
    let slots = t.plan(&metas, params, seed)?;
    let computed = t.compute_dataset(&payloads, &slots, params, seed)?;
    Ok(slots
        .iter()
        .zip(computed)
        .map(|(slot, tables)| {
            slot.objects
                .iter()
                .zip(tables)
                .map(|(po, table)| DataObject {
                    object_id: match po.id {
                        PlannedId::Keep(id) | PlannedId::Derived(id) => id,
                        PlannedId::Fresh => ids.object_id(),
                    },
                    payload: Some(table),
                    labels: po.labels,
                    source_link: None,
                })
                .collect()
        })
        .collect())
}

/// Registered transforms, keyed by id.
pub struct Registry {
    map: RwLock<BTreeMap<String, Arc<dyn Transform>>>,
}

impl Registry {
    /// A registry holding the nine built-ins.
    pub fn new() -> Self {
        let builtins: Vec<Arc<dyn Transform>> = vec![
            Arc::new(merge::Merge::new()),
            Arc::new(integrate::Integrate::new()),
            Arc::new(select::SelectColumns::new()),
            Arc::new(select::SelectLabels::new()),
            Arc::new(normalize::Normalize::new()),
            Arc::new(window::Window::new()),
            Arc::new(features::ExtractFeatures::new()),
            Arc::new(partition::Partition::new()),
            Arc::new(sample::Sample::new()),
        ];
        let map = builtins
            .into_iter()
            .map(|t| (t.descriptor().transform_id.clone(), t))
            .collect();
        Registry {
            map: RwLock::new(map),
        }
    }

    pub fn register(&self, t: Arc<dyn Transform>) -> Result<(), TransformError> {
        let id = t.descriptor().transform_id.clone();
        let mut map = self.map.write();
        if map.contains_key(&id) {
            return Err(TransformError::DuplicateTransform(id));
        }
        map.insert(id, t);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<Arc<dyn Transform>> {
        self.map.read().get(id).cloned()
    }

    /// Descriptors sorted by transform id.
    pub fn list(&self) -> Vec<TransformDescriptor> {
        self.map.read().values().map(|t| t.descriptor().clone()).collect()
    }

    /// Registers every `<id>.yaml` plugin manifest in `dir`.
    pub fn load_plugin_dir(
        &self,
        dir: &std::path::Path,
        limits: Arc<PluginLimits>,
    ) -> Result<usize, TransformError> {
        let entries = match std::fs::read_dir(dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
            Err(e) => return Err(TransformError::Io(e.to_string())),
        };
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "yaml" || x == "yml"))
            .collect();
        paths.sort();
        for p in &paths {
            let plugin = load_plugin_file(p, limits.clone())?;
            self.register(Arc::new(plugin))?;
        }
        Ok(paths.len())
    }
}

impl Default for Registry {
    fn default() -> Self {
        Self::new()
    }
}
