//! Registry of explicit and virtual datasets: lineage DAG, persistence,
//! search and removal.

mod record;
mod store;

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::path::Path;

use chrono::Utc;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_yaml::Value as Yaml;

use crate::ids::{DatasetId, IdGen, ObjectId};
use crate::model::{parse_csv_records, Labels, Schema, SourceLink};
use crate::ssvd::{CatalogView, DatasetKind, RefTarget, ValidatedSpec};
use crate::storage::{parse_uri, Location, Storage, StorageError};
use crate::transforms::{InputMeta, PlannedId, PlannedObjects, Registry, SchemaInterner, SlotPlan, TransformError};

pub use record::{DatasetRecord, ObjectEntry, ObjectIndex, Status};
use store::LogStore;

pub const CSV_DIR: &str = "csv-dir";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CatalogError {
    #[error("dataset {0} not found")]
    NotFound(DatasetId),
    #[error("cannot read source {uri}: {reason}")]
    UnreadableSource { uri: String, reason: String },
    #[error("source {0} contains no objects")]
    EmptyDataset(String),
    #[error("unsupported format {0:?}")]
    UnsupportedFormat(String),
    #[error("labels file: {0}")]
    LabelsFile(String),
    #[error("catalog changed since the spec was validated")]
    ValidationStale,
    #[error("dataset {0} would depend on itself")]
    CycleDetected(DatasetId),
    #[error("dataset has active dependents: {0:?}")]
    HasDependents(Vec<DatasetId>),
    #[error("unknown transform {0:?}")]
    UnknownTransform(String),
    #[error("duplicate object id {0} in one dataset")]
    DuplicateObjectId(ObjectId),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error("catalog persistence: {0}")]
    Persistence(String),
}

/// What to register as an explicit dataset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegisterExplicit {
    pub uri: String,
    pub format: Option<String>,
    /// CSV with an `object_id` column; every other column is a label key.
    pub labels_file: Option<String>,
    pub name: Option<String>,
    pub metadata: BTreeMap<String, Yaml>,
    pub creator: String,
}

impl RegisterExplicit {
    pub fn new(uri: impl Into<String>) -> Self {
        RegisterExplicit {
            uri: uri.into(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemoveMode {
    Restrict,
    Cascade,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Backward,
    Forward,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageEdge {
    pub from: DatasetId,
    pub to: DatasetId,
    pub via: String,
    pub input_position: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageGraph {
    pub root: DatasetId,
    pub direction: Direction,
    /// Breadth-first order, starting at the root.
    pub nodes: Vec<DatasetId>,
    pub edges: Vec<LineageEdge>,
}

/// Conjunction of optional filters.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<DatasetKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub creator: Option<String>,
}

impl SearchFilter {
    fn matches(&self, r: &DatasetRecord) -> bool {
        self.name.as_ref().is_none_or(|n| r.name.contains(n.as_str()))
            && self
                .label
                .as_ref()
                .is_none_or(|(k, v)| r.labels().get(k) == Some(v))
            && self.kind.is_none_or(|k| r.kind == k)
            && self
                .transform_id
                .as_ref()
                .is_none_or(|t| r.transform_id() == Some(t.as_str()))
            && self.creator.as_ref().is_none_or(|c| &r.creator == c)
    }
}

/// Facts learned by materializing an object whose metadata was unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectFacts {
    pub ordinal: usize,
    pub row_count: u64,
    pub schema: Schema,
}

#[derive(Default)]
struct State {
    records: Vec<DatasetRecord>,
    by_id: HashMap<DatasetId, usize>,
    dependents: HashMap<DatasetId, Vec<DatasetId>>,
    generation: u64,
    next_seq: u64,
    store: Option<LogStore>,
}

impl State {
    fn get(&self, id: DatasetId) -> Option<&DatasetRecord> {
        self.by_id.get(&id).map(|&i| &self.records[i])
    }

    fn active(&self, id: DatasetId) -> Option<&DatasetRecord> {
        self.get(id).filter(|r| r.is_active())
    }

    fn active_dependents(&self, id: DatasetId) -> Vec<DatasetId> {
        let mut out: Vec<DatasetId> = self
            .dependents
            .get(&id)
            .into_iter()
            .flatten()
            .copied()
            .filter(|d| self.active(*d).is_some())
            .collect();
        out.sort_by_key(|d| self.get(*d).map(|r| r.seq));
        out.dedup();
        out
    }

    /// True if `id` is reachable backwards from any of `inputs`.
    fn would_cycle(&self, id: DatasetId, inputs: &[DatasetId]) -> bool {
        let mut seen = HashSet::new();
        let mut stack: Vec<DatasetId> = inputs.to_vec();
        while let Some(n) = stack.pop() {
            if n == id {
                return true;
            }
            if seen.insert(n) {
                if let Some(r) = self.get(n) {
                    stack.extend(r.inputs.iter().copied());
                }
            }
        }
        false
    }

    /// Persists then applies a new record version.
    fn put(&mut self, record: DatasetRecord) -> Result<(), CatalogError> {
        if let Some(store) = &mut self.store {
            store.append(&record).map_err(CatalogError::Persistence)?;
        }
        self.apply(record);
        if self.store.as_ref().is_some_and(LogStore::wants_snapshot) {
            let records = self.records.clone();
            if let Some(store) = &mut self.store {
                store.snapshot(&records).map_err(CatalogError::Persistence)?;
            }
        }
        Ok(())
    }

    fn apply(&mut self, record: DatasetRecord) {
        self.next_seq = self.next_seq.max(record.seq + 1);
        match self.by_id.get(&record.id) {
            Some(&i) => self.records[i] = record,
            None => {
                for input in &record.inputs {
                    let deps = self.dependents.entry(*input).or_default();
                    if !deps.contains(&record.id) {
                        deps.push(record.id);
                    }
                }
                self.by_id.insert(record.id, self.records.len());
                self.records.push(record);
            }
        }
    }

    /// Inserts a new virtual record, refusing any edge that closes a cycle.
    fn insert_virtual(&mut self, record: DatasetRecord) -> Result<(), CatalogError> {
        if self.would_cycle(record.id, &record.inputs) {
            return Err(CatalogError::CycleDetected(record.id));
        }
        self.put(record)?;
        self.generation += 1;
        Ok(())
    }
}

pub struct Catalog {
    state: RwLock<State>,
}

impl Default for Catalog {
    fn default() -> Self {
        Self::in_memory()
    }
}

fn read_labels_file(path: &str, ids: &HashSet<&ObjectId>) -> Result<HashMap<ObjectId, Labels>, CatalogError> {
    let p = match parse_uri(path) {
        Ok(Location::File(p)) => p,
        _ => Path::new(path).to_path_buf(),
    };
    let bytes = std::fs::read(&p).map_err(|e| CatalogError::LabelsFile(format!("{}: {e}", p.display())))?;
    let (header, rows) = parse_csv_records(&bytes).map_err(|e| CatalogError::LabelsFile(e.to_string()))?;
    if header.first().map(String::as_str) != Some("object_id") {
        return Err(CatalogError::LabelsFile("first column must be object_id".into()));
    }
    let mut out: HashMap<ObjectId, Labels> = HashMap::new();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(CatalogError::LabelsFile(format!("row {i} has the wrong number of cells")));
        }
        let id = ObjectId::new(row[0].clone());
        if !ids.contains(&id) {
            return Err(CatalogError::LabelsFile(format!("unknown object {id}")));
        }
        let labels = out.entry(id).or_default();
        for (k, v) in header[1..].iter().zip(&row[1..]) {
            if !v.is_empty() {
                labels.insert(k.clone(), v.clone());
            }
        }
    }
    Ok(out)
}

fn plan_to_index(
    slot: SlotPlan,
    inputs: &[DatasetId],
    input_records: &[&DatasetRecord],
    ids: &IdGen,
) -> Result<(Vec<Schema>, ObjectIndex), CatalogError> {
    let index = match slot.objects {
        PlannedObjects::Windowed { width, stride, runs } => ObjectIndex::Windowed {
            source: inputs[0],
            width,
            stride,
            runs,
        },
        PlannedObjects::Listed(planned) => {
            let mut seen = HashSet::with_capacity(planned.len());
            let mut objects = Vec::with_capacity(planned.len());
            for po in planned {
                let object_id = match po.id {
                    PlannedId::Keep(id) | PlannedId::Derived(id) => id,
                    PlannedId::Fresh => ids.object_id(),
                };
                if !seen.insert(object_id.clone()) {
                    return Err(CatalogError::DuplicateObjectId(object_id));
                }
                let source_links = po
                    .sources
                    .iter()
                    .map(|s| SourceLink {
                        dataset: inputs[s.input],
                        object_id: input_records[s.input]
                            .object_index
                            .entry(s.ordinal)
                            .expect("planned from this index")
                            .object_id,
                        segment: po.segment,
                    })
                    .collect();
                objects.push(ObjectEntry {
                    object_id,
                    labels: po.labels,
                    source_links,
                    row_count: po.row_count,
                    schema: po.schema,
                    byte_size: None,
                    fingerprint: None,
                });
            }
            ObjectIndex::Listed { objects }
        }
    };
    Ok((slot.schemas, index))
}

impl Catalog {
    pub fn in_memory() -> Self {
        Catalog {
            state: RwLock::new(State::default()),
        }
    }

    /// Opens a persistent catalog under `dir`, replaying its log.
    pub fn open(dir: &Path) -> Result<Self, CatalogError> {
        let (store, records) = LogStore::open(dir).map_err(CatalogError::Persistence)?;
        let mut state = State::default();
        for r in records {
            state.apply(r);
        }
        state.store = Some(store);
        Ok(Catalog {
            state: RwLock::new(state),
        })
    }

    pub fn register_explicit(
        &self,
        storage: &Storage,
        req: &RegisterExplicit,
        id: DatasetId,
    ) -> Result<DatasetRecord, CatalogError> {
        let format = req.format.clone().unwrap_or_else(|| CSV_DIR.to_string());
        if format != CSV_DIR {
            return Err(CatalogError::UnsupportedFormat(format));
        }
        let stats = storage.list_objects(&req.uri).map_err(|e| match e {
            StorageError::UnreadableSource { uri, reason } => CatalogError::UnreadableSource { uri, reason },
            other => CatalogError::UnreadableSource {
                uri: req.uri.clone(),
                reason: other.to_string(),
            },
        })?;
        if stats.is_empty() {
            return Err(CatalogError::EmptyDataset(req.uri.clone()));
        }
        let file_labels = match &req.labels_file {
            Some(path) => read_labels_file(path, &stats.iter().map(|s| &s.object_id).collect())?,
            None => HashMap::new(),
        };
        let mut interner = SchemaInterner::default();
        let objects = stats
            .into_iter()
            .map(|s| {
                let mut labels = s.labels;
                if let Some(extra) = file_labels.get(&s.object_id) {
                    labels.extend(extra.clone());
                }
                if !s.warnings.is_empty() {
                    tracing::warn!(object = %s.object_id, warnings = ?s.warnings, "source object does not validate");
                }
                ObjectEntry {
                    schema: s.schema.as_ref().map(|sc| interner.intern(sc)),
                    object_id: s.object_id,
                    labels,
                    source_links: Vec::new(),
                    row_count: s.row_count,
                    byte_size: Some(s.byte_size),
                    fingerprint: Some(s.fingerprint),
                }
            })
            .collect();
        let name = req.name.clone().unwrap_or_else(|| {
            req.uri
                .trim_end_matches('/')
                .rsplit(['/', ':'])
                .next()
                .unwrap_or_default()
                .to_string()
        });

        let mut st = self.state.write();
        if st.get(id).is_some() {
            return Err(CatalogError::Persistence(format!("dataset id {id} already used")));
        }
        let record = DatasetRecord {
            id,
            seq: st.next_seq,
            kind: DatasetKind::Explicit,
            name,
            status: Status::Active,
            created_at: Utc::now(),
            creator: req.creator.clone(),
            spec: None,
            inputs: Vec::new(),
            uri: Some(req.uri.clone()),
            format: Some(format),
            metadata: req.metadata.clone(),
            schemas: interner.into_schemas(),
            object_index: ObjectIndex::Listed { objects },
        };
        st.put(record.clone())?;
        st.generation += 1;
        Ok(record)
    }

    /// Creates a virtual dataset; its object index comes from the
    /// transform's plan over input metadata, without touching payloads.
    pub fn create_virtual(
        &self,
        v: &ValidatedSpec,
        registry: &Registry,
        ids: &IdGen,
        creator: &str,
    ) -> Result<DatasetRecord, CatalogError> {
        let t = registry
            .get(&v.spec.transform.transform_id)
            .ok_or_else(|| CatalogError::UnknownTransform(v.spec.transform.transform_id.clone()))?;
        let mut st = self.state.write();
        if st.generation != v.generation {
            return Err(CatalogError::ValidationStale);
        }
        let input_records: Vec<&DatasetRecord> = v
            .inputs
            .iter()
            .map(|id| st.active(*id).ok_or(CatalogError::ValidationStale))
            .collect::<Result<_, _>>()?;
        let metas: Vec<InputMeta> = input_records.iter().map(|r| r.input_meta()).collect();
        let mut slots = t.plan(&metas, &v.spec.transform.params, v.spec.transform.effective_seed())?;
        if slots.len() != v.spec.outputs.len() {
            return Err(CatalogError::Transform(TransformError::Internal(format!(
                "plan produced {} slots, spec declares {}",
                slots.len(),
                v.spec.outputs.len()
            ))));
        }
        let slot = slots.swap_remove(v.spec.output_index);
        let (schemas, object_index) = plan_to_index(slot, &v.inputs, &input_records, ids)?;
        let record = DatasetRecord {
            id: ids.dataset_id(),
            seq: st.next_seq,
            kind: DatasetKind::Virtual,
            name: v.spec.name.clone(),
            status: Status::Active,
            created_at: Utc::now(),
            creator: creator.to_string(),
            spec: Some(v.spec.clone()),
            inputs: v.inputs.clone(),
            uri: None,
            format: None,
            metadata: BTreeMap::new(),
            schemas,
            object_index,
        };
        st.insert_virtual(record.clone())?;
        Ok(record)
    }

    /// Records row counts and schemas learned by materialization.
    pub fn annotate(&self, id: DatasetId, facts: &[ObjectFacts]) -> Result<(), CatalogError> {
        let mut st = self.state.write();
        let mut record = st.get(id).cloned().ok_or(CatalogError::NotFound(id))?;
        let ObjectIndex::Listed { objects } = &mut record.object_index else {
            return Ok(());
        };
        let mut interner = SchemaInterner::default();
        for s in &record.schemas {
            interner.intern(s);
        }
        let mut changed = false;
        for f in facts {
            let Some(e) = objects.get_mut(f.ordinal) else { continue };
            if e.row_count.is_none() {
                e.row_count = Some(f.row_count);
                changed = true;
            }
            if e.schema.is_none() {
                e.schema = Some(interner.intern(&f.schema));
                changed = true;
            }
        }
        if changed {
            record.schemas = interner.into_schemas();
            st.put(record)?;
        }
        Ok(())
    }

    /// Active record by id.
    pub fn get(&self, id: DatasetId) -> Result<DatasetRecord, CatalogError> {
        self.state.read().active(id).cloned().ok_or(CatalogError::NotFound(id))
    }

    /// Record by id, including removed ones.
    pub fn get_any(&self, id: DatasetId) -> Result<DatasetRecord, CatalogError> {
        self.state.read().get(id).cloned().ok_or(CatalogError::NotFound(id))
    }

    /// Every record version currently held, active and removed, by sequence.
    pub fn records(&self) -> Vec<DatasetRecord> {
        self.state.read().records.clone()
    }

    pub fn search(&self, filter: &SearchFilter) -> Vec<DatasetRecord> {
        let st = self.state.read();
        let mut out: Vec<DatasetRecord> = st
            .records
            .iter()
            .filter(|r| r.is_active() && filter.matches(r))
            .cloned()
            .collect();
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.seq.cmp(&b.seq)));
        out
    }

    pub fn lineage(
        &self,
        id: DatasetId,
        direction: Direction,
        depth: Option<usize>,
    ) -> Result<LineageGraph, CatalogError> {
        let st = self.state.read();
        st.get(id).ok_or(CatalogError::NotFound(id))?;
        let mut nodes = vec![id];
        let mut seen: HashSet<DatasetId> = HashSet::from([id]);
        let mut edges = Vec::new();
        let mut queue = VecDeque::from([(id, 0usize)]);
        while let Some((n, d)) = queue.pop_front() {
            if depth.is_some_and(|limit| d >= limit) {
                continue;
            }
            let r = st.get(n).expect("nodes exist");
            let next: Vec<(DatasetId, LineageEdge)> = match direction {
                Direction::Backward => r
                    .inputs
                    .iter()
                    .enumerate()
                    .map(|(pos, input)| {
                        (
                            *input,
                            LineageEdge {
                                from: *input,
                                to: n,
                                via: r.transform_id().unwrap_or_default().to_string(),
                                input_position: pos,
                            },
                        )
                    })
                    .collect(),
                Direction::Forward => st
                    .active_dependents(n)
                    .into_iter()
                    .flat_map(|dep| {
                        let dr = st.get(dep).expect("dependents exist");
                        dr.inputs
                            .iter()
                            .enumerate()
                            .filter(|(_, i)| **i == n)
                            .map(|(pos, _)| {
                                (
                                    dep,
                                    LineageEdge {
                                        from: n,
                                        to: dep,
                                        via: dr.transform_id().unwrap_or_default().to_string(),
                                        input_position: pos,
                                    },
                                )
                            })
                            .collect::<Vec<_>>()
                    })
                    .collect(),
            };
            for (m, e) in next {
                edges.push(e);
                if st.get(m).is_some() && seen.insert(m) {
                    nodes.push(m);
                    queue.push_back((m, d + 1));
                }
            }
        }
        Ok(LineageGraph {
            root: id,
            direction,
            nodes,
            edges,
        })
    }

    /// Removes a dataset (and, in cascade mode, everything derived from it).
    /// Returns removed ids, parents before children. Records are kept with
    /// status `removed`; source files are never touched.
    pub fn remove(&self, id: DatasetId, mode: RemoveMode) -> Result<Vec<DatasetId>, CatalogError> {
        let mut st = self.state.write();
        st.active(id).ok_or(CatalogError::NotFound(id))?;
        let direct = st.active_dependents(id);
        if mode == RemoveMode::Restrict && !direct.is_empty() {
            return Err(CatalogError::HasDependents(direct));
        }
        let mut closure: HashSet<DatasetId> = HashSet::from([id]);
        let mut queue = VecDeque::from([id]);
        while let Some(n) = queue.pop_front() {
            for d in st.active_dependents(n) {
                if closure.insert(d) {
                    queue.push_back(d);
                }
            }
        }
        // Kahn's algorithm restricted to the closure; ties broken by seq.
        let mut pending: Vec<DatasetId> = closure.iter().copied().collect();
        pending.sort_by_key(|d| st.get(*d).map(|r| r.seq));
        let mut order = Vec::with_capacity(pending.len());
        let mut done: HashSet<DatasetId> = HashSet::new();
        while !pending.is_empty() {
            let pos = pending
                .iter()
                .position(|d| {
                    st.get(*d)
                        .expect("in closure")
                        .inputs
                        .iter()
                        .all(|i| !closure.contains(i) || done.contains(i))
                })
                .expect("lineage is acyclic");
            let d = pending.remove(pos);
            done.insert(d);
            order.push(d);
        }
        for d in &order {
            let mut r = st.get(*d).cloned().expect("in closure");
            r.status = Status::Removed;
            st.put(r)?;
        }
        st.generation += 1;
        Ok(order)
    }

    /// Lists every violated structural invariant: cycles, references to
    /// missing or removed datasets, and virtual datasets without an explicit
    /// root.
    pub fn check_integrity(&self) -> Vec<String> {
        let st = self.state.read();
        let mut problems = Vec::new();
        // Colors: 0 unvisited, 1 on stack, 2 done.
        let mut color: HashMap<DatasetId, u8> = HashMap::new();
        fn visit(st: &State, n: DatasetId, color: &mut HashMap<DatasetId, u8>, problems: &mut Vec<String>) {
            match color.get(&n) {
                Some(1) => {
                    problems.push(format!("cycle through {n}"));
                    return;
                }
                Some(_) => return,
                None => {}
            }
            color.insert(n, 1);
            if let Some(r) = st.get(n) {
                for i in &r.inputs {
                    visit(st, *i, color, problems);
                }
            }
            color.insert(n, 2);
        }
        for r in &st.records {
            visit(&st, r.id, &mut color, &mut problems);
        }
        for r in st.records.iter().filter(|r| r.is_active()) {
            match r.kind {
                DatasetKind::Explicit => {
                    if !r.inputs.is_empty() || r.spec.is_some() || r.uri.is_none() {
                        problems.push(format!("explicit {} has virtual fields", r.id));
                    }
                }
                DatasetKind::Virtual => {
                    if r.spec.is_none() || r.uri.is_some() {
                        problems.push(format!("virtual {} lacks a spec", r.id));
                    }
                    for i in &r.inputs {
                        if st.active(*i).is_none() {
                            problems.push(format!("{} references inactive {i}", r.id));
                        }
                    }
                    let mut stack = r.inputs.clone();
                    let mut seen = HashSet::new();
                    let mut rooted = false;
                    while let Some(n) = stack.pop() {
                        if !seen.insert(n) {
                            continue;
                        }
                        match st.get(n) {
                            Some(x) if x.kind == DatasetKind::Explicit => rooted = true,
                            Some(x) => stack.extend(x.inputs.iter().copied()),
                            None => {}
                        }
                    }
                    if !rooted {
                        problems.push(format!("virtual {} has no explicit root", r.id));
                    }
                }
            }
        }
        problems
    }
}

impl CatalogView for Catalog {
    fn resolve_ref(&self, target: &RefTarget) -> Option<(DatasetId, DatasetKind)> {
        let st = self.state.read();
        match target {
            RefTarget::Id(id) => st.active(*id).map(|r| (r.id, r.kind)),
            RefTarget::Uri(uri) => st
                .records
                .iter()
                .rev()
                .find(|r| r.is_active() && r.uri.as_deref() == Some(uri.as_str()))
                .map(|r| (r.id, r.kind)),
        }
    }

    fn generation(&self) -> u64 {
        self.state.read().generation
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bare(id: u128, inputs: Vec<DatasetId>) -> DatasetRecord {
        DatasetRecord {
            id: DatasetId::from_u128(id),
            seq: id as u64,
            kind: if inputs.is_empty() { DatasetKind::Explicit } else { DatasetKind::Virtual },
            name: format!("n{id}"),
            status: Status::Active,
            created_at: Utc::now(),
            creator: String::new(),
            spec: None,
            inputs,
            uri: None,
            format: None,
            metadata: BTreeMap::new(),
            schemas: Vec::new(),
            object_index: ObjectIndex::Listed { objects: Vec::new() },
        }
    }

    #[test]
    fn insert_refuses_cycles() {
        let mut st = State::default();
        let a = DatasetId::from_u128(1);
        let b = DatasetId::from_u128(2);
        st.insert_virtual(bare(1, vec![])).unwrap();
        st.insert_virtual(bare(2, vec![a])).unwrap();
        // A record that lists itself as input.
        assert_eq!(st.insert_virtual(bare(3, vec![DatasetId::from_u128(3)])), Err(CatalogError::CycleDetected(DatasetId::from_u128(3))));
        // Re-pointing an ancestor at its own descendant.
        assert_eq!(st.insert_virtual(bare(1, vec![b])), Err(CatalogError::CycleDetected(a)));
        assert_eq!(st.records.len(), 2);
    }
}
