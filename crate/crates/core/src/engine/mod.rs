//! Resolves virtual datasets back to their explicit roots, executes the
//! transform chain through the content-addressed cache, and serves single
//! objects along object-level source links.

mod cache;
pub mod codec;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::{Catalog, DatasetRecord, ObjectEntry, ObjectIndex};
use crate::ids::{DatasetId, ObjectId};
use crate::model::{DataObject, Table};
use crate::ssvd::{computation_key_text, DatasetKind};
use crate::storage::{Storage, StorageError};
use crate::transforms::{
    InputMeta, InputPayload, ObjectCx, PlannedId, PlannedObjects, Registry, SchemaInterner, SlotPlan,
    SourceObject, Transform, TransformError,
};

pub use cache::{Cache, CacheKey, CacheStats, EntryInfo, DEFAULT_BUDGET};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("dataset {0} not found")]
    NotFound(DatasetId),
    #[error("dataset {dataset} depends on missing or removed {missing}")]
    BrokenLineage { dataset: DatasetId, missing: DatasetId },
    #[error("object {object_id} not in dataset {dataset}")]
    ObjectNotFound { dataset: DatasetId, object_id: ObjectId },
    #[error("transform of {dataset} failed: {cause}")]
    TransformFailed { dataset: DatasetId, cause: TransformError },
    #[error("source of {dataset} changed: object {object_id} in {uri}")]
    SourceChanged {
        dataset: DatasetId,
        uri: String,
        object_id: ObjectId,
    },
    #[error("reading {dataset}: {source}")]
    Storage { dataset: DatasetId, source: StorageError },
    #[error("cache entry {0} is corrupt and was dropped")]
    CacheCorrupt(CacheKey),
    #[error("dataset {dataset} no longer matches its plan: {reason}")]
    Inconsistent { dataset: DatasetId, reason: String },
    #[error("cache i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Source,
    Transform,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlanNode {
    pub dataset_id: DatasetId,
    pub kind: NodeKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transform_id: Option<String>,
    /// Indexes of the nodes computing this node's inputs, in input order.
    pub inputs: Vec<usize>,
    pub cache_key: CacheKey,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimated_rows: Option<u64>,
    /// Every dataset of the closure served by this node. Sibling outputs of
    /// one computation share a node.
    pub datasets: Vec<DatasetId>,
}

/// Executable DAG, inputs before dependents.
#[derive(Debug, Clone, Serialize)]
pub struct Plan {
    pub target: DatasetId,
    pub nodes: Vec<PlanNode>,
    #[serde(skip)]
    records: HashMap<DatasetId, DatasetRecord>,
    #[serde(skip)]
    node_of: HashMap<DatasetId, usize>,
}

impl Plan {
    pub fn node_for(&self, id: DatasetId) -> Option<&PlanNode> {
        self.node_of.get(&id).map(|&i| &self.nodes[i])
    }

    pub fn transform_nodes(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Transform).count()
    }

    pub fn target_key(&self) -> CacheKey {
        self.nodes[self.node_of[&self.target]].cache_key
    }

    fn record(&self, id: DatasetId) -> &DatasetRecord {
        &self.records[&id]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaterializeOptions {
    #[serde(default)]
    pub force_recompute: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub nodes_total: u64,
    pub cache_hits: u64,
    pub transforms_executed: u64,
    pub bytes_written: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Materialized {
    pub dataset: DatasetId,
    pub objects: Vec<DataObject>,
    pub stats: RunStats,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EngineCounters {
    pub materializations: u64,
    pub transforms_executed: u64,
    pub objects_opened: u64,
    pub audits: u64,
    pub audit_failures: u64,
}

/// What the engine reads from.
#[derive(Clone, Copy)]
pub struct EngineCx<'a> {
    pub catalog: &'a Catalog,
    pub storage: &'a Storage,
    pub registry: &'a Registry,
}

pub struct Engine {
    cache: Cache,
    audit_every: u64,
    audit_tick: AtomicU64,
    materializations: AtomicU64,
    executed: AtomicU64,
    opened: AtomicU64,
    audits: AtomicU64,
    audit_failures: AtomicU64,
}

fn hash_str(h: &mut Sha256, s: &str) {
    h.update((s.len() as u64).to_le_bytes());
    h.update(s.as_bytes());
}

fn hash_labels(h: &mut Sha256, labels: &crate::model::Labels) {
    h.update((labels.len() as u64).to_le_bytes());
    for (k, v) in labels {
        hash_str(h, k);
        hash_str(h, v);
    }
}

/// Digest of an object index's ids and labels, the parts of a dataset that
/// downstream plans may depend on beyond payload content.
pub fn index_digest(index: &ObjectIndex) -> [u8; 32] {
    let mut h = Sha256::new();
    match index {
        ObjectIndex::Listed { objects } => {
            h.update(b"listed");
            h.update((objects.len() as u64).to_le_bytes());
            for e in objects {
                hash_str(&mut h, e.object_id.as_str());
                hash_labels(&mut h, &e.labels);
            }
        }
        ObjectIndex::Windowed { width, stride, runs, .. } => {
            h.update(b"windowed");
            h.update(width.to_le_bytes());
            h.update(stride.to_le_bytes());
            h.update((runs.len() as u64).to_le_bytes());
            for r in runs {
                hash_str(&mut h, r.source_id.as_str());
                hash_labels(&mut h, &r.labels);
                h.update(r.segments.to_le_bytes());
            }
        }
    }
    h.finalize().into()
}

fn slot_of(rec: &DatasetRecord) -> usize {
    rec.spec.as_ref().map_or(0, |s| s.output_index)
}

/// Input metadata completed with facts visible in the payloads.
fn meta_with_facts(rec: &DatasetRecord, tables: &[Table]) -> InputMeta {
    let mut meta = rec.input_meta();
    if meta.objects.iter().all(|e| e.row_count.is_some() && e.schema.is_some()) {
        return meta;
    }
    let mut interner = SchemaInterner::default();
    for s in &meta.schemas {
        interner.intern(s);
    }
    for (e, t) in meta.objects.iter_mut().zip(tables) {
        e.row_count.get_or_insert(t.row_count() as u64);
        if e.schema.is_none() {
            e.schema = Some(interner.intern(&t.schema));
        }
    }
    meta.schemas = interner.into_schemas();
    meta
}

/// Checks that a re-derived slot still matches the catalog's index.
fn check_slot(rec: &DatasetRecord, slot: &SlotPlan) -> Result<(), EngineError> {
    let bad = |reason: String| EngineError::Inconsistent { dataset: rec.id, reason };
    if slot.objects.len() != rec.object_index.len() {
        return Err(bad(format!(
            "plan has {} objects, catalog {}",
            slot.objects.len(),
            rec.object_index.len()
        )));
    }
    match (&slot.objects, &rec.object_index) {
        (PlannedObjects::Listed(planned), ObjectIndex::Listed { objects }) => {
            for (po, e) in planned.iter().zip(objects) {
                if let PlannedId::Keep(id) | PlannedId::Derived(id) = &po.id {
                    if id != &e.object_id {
                        return Err(bad(format!("expected object {}, planned {id}", e.object_id)));
                    }
                }
            }
            Ok(())
        }
        (
            PlannedObjects::Windowed { width, stride, runs },
            ObjectIndex::Windowed {
                width: w,
                stride: s,
                runs: r,
                ..
            },
        ) => {
            let same = width == w
                && stride == s
                && runs.len() == r.len()
                && runs.iter().zip(r).all(|(a, b)| a.source_id == b.source_id && a.segments == b.segments);
            if same {
                Ok(())
            } else {
                Err(bad("window runs differ".into()))
            }
        }
        _ => Err(bad("index form differs".into())),
    }
}

fn to_objects(rec: &DatasetRecord, tables: &[Table]) -> Vec<DataObject> {
    rec.object_index
        .iter()
        .zip(tables)
        .map(|(e, t)| DataObject {
            object_id: e.object_id,
            payload: Some(t.clone()),
            labels: e.labels,
            source_link: e.source_links.into_iter().next(),
        })
        .collect()
}

type Slots = Arc<Vec<Vec<Table>>>;

struct Run<'a> {
    engine: &'a Engine,
    cx: EngineCx<'a>,
    plan: &'a Plan,
    outputs: HashMap<usize, Slots>,
}

impl Run<'_> {
    /// Output of a node: from this run, else the cache, else recomputed.
    fn output(&mut self, idx: usize) -> Result<Slots, EngineError> {
        if let Some(o) = self.outputs.get(&idx) {
            return Ok(o.clone());
        }
        let node = &self.plan.nodes[idx];
        let out = match node.kind {
            NodeKind::Source => {
                let rec = self.plan.record(node.dataset_id);
                let tables = rec
                    .object_index
                    .iter()
                    .map(|e| self.engine.read_source(self.cx, rec, &e))
                    .collect::<Result<Vec<_>, _>>()?;
                Arc::new(vec![tables])
            }
            NodeKind::Transform => match self.load_cached(idx)? {
                Some(o) => o,
                None => self.compute(idx)?,
            },
        };
        self.outputs.insert(idx, out.clone());
        Ok(out)
    }

    fn load_cached(&self, idx: usize) -> Result<Option<Slots>, EngineError> {
        let key = self.plan.nodes[idx].cache_key;
        let cache = &self.engine.cache;
        let Some(bytes) = cache.load(&key).map_err(|e| EngineError::Io(e.to_string()))? else {
            return Ok(None);
        };
        match codec::decode(&bytes) {
            Ok(slots) => Ok(Some(Arc::new(slots))),
            Err(e) => {
                tracing::error!(%key, error = %e, "dropping corrupt cache entry");
                cache.remove(&key);
                Err(EngineError::CacheCorrupt(key))
            }
        }
    }

    fn compute(&mut self, idx: usize) -> Result<Slots, EngineError> {
        let node = self.plan.nodes[idx].clone();
        let rec = self.plan.record(node.dataset_id);
        let spec = rec.spec.as_ref().expect("transform nodes are virtual");
        let failed = |cause| EngineError::TransformFailed { dataset: rec.id, cause };
        let t: Arc<dyn Transform> = self
            .cx
            .registry
            .get(&spec.transform.transform_id)
            .ok_or_else(|| failed(TransformError::Internal(format!("unknown transform {}", spec.transform.transform_id))))?;

        let mut input_slots = Vec::with_capacity(rec.inputs.len());
        for (pos, input) in rec.inputs.iter().enumerate() {
            input_slots.push((self.output(node.inputs[pos])?, slot_of(self.plan.record(*input))));
        }
        let mut metas = Vec::with_capacity(rec.inputs.len());
        for (input, (slots, s)) in rec.inputs.iter().zip(&input_slots) {
            let in_rec = self.plan.record(*input);
            let tables = &slots[*s];
            if tables.len() != in_rec.object_index.len() {
                return Err(EngineError::Inconsistent {
                    dataset: in_rec.id,
                    reason: format!("{} payloads for {} objects", tables.len(), in_rec.object_index.len()),
                });
            }
            metas.push(meta_with_facts(in_rec, tables));
        }
        let payloads: Vec<InputPayload<'_>> = metas
            .iter()
            .zip(&input_slots)
            .map(|(meta, (slots, s))| InputPayload {
                meta,
                tables: &slots[*s],
            })
            .collect();
        let params = &spec.transform.params;
        let seed = spec.transform.effective_seed();
        let planned = t.plan(&metas, params, seed).map_err(failed)?;
        for d in &node.datasets {
            let r = self.plan.record(*d);
            let slot = planned.get(slot_of(r)).ok_or_else(|| EngineError::Inconsistent {
                dataset: *d,
                reason: "output slot missing from plan".into(),
            })?;
            check_slot(r, slot)?;
        }
        let computed = t.compute_dataset(&payloads, &planned, params, seed).map_err(failed)?;
        if computed.len() != planned.len() || computed.iter().zip(&planned).any(|(c, p)| c.len() != p.objects.len()) {
            return Err(failed(TransformError::Internal("computed shape differs from plan".into())));
        }
        self.engine.executed.fetch_add(1, Ordering::Relaxed);
        let out = Arc::new(computed);
        self.outputs.insert(idx, out.clone());
        Ok(out)
    }
}

impl Engine {
    pub fn new(cache: Cache) -> Self {
        Engine {
            cache,
            audit_every: 0,
            audit_tick: AtomicU64::new(0),
            materializations: AtomicU64::new(0),
            executed: AtomicU64::new(0),
            opened: AtomicU64::new(0),
            audits: AtomicU64::new(0),
            audit_failures: AtomicU64::new(0),
        }
    }

    /// Recompute and compare every `n`-th cache hit; 0 disables audits.
    pub fn with_audit_every(mut self, n: u64) -> Self {
        self.audit_every = n;
        self
    }

    pub fn cache(&self) -> &Cache {
        &self.cache
    }

    pub fn counters(&self) -> EngineCounters {
        EngineCounters {
            materializations: self.materializations.load(Ordering::Relaxed),
            transforms_executed: self.executed.load(Ordering::Relaxed),
            objects_opened: self.opened.load(Ordering::Relaxed),
            audits: self.audits.load(Ordering::Relaxed),
            audit_failures: self.audit_failures.load(Ordering::Relaxed),
        }
    }

    fn read_source(&self, cx: EngineCx<'_>, rec: &DatasetRecord, e: &ObjectEntry) -> Result<Table, EngineError> {
        let uri = rec.uri.as_deref().expect("explicit datasets have a uri");
        let fp = e.fingerprint.expect("explicit objects have a fingerprint");
        cx.storage.read_verified(uri, &e.object_id, fp).map_err(|err| match err {
            StorageError::SourceChanged { uri, object_id } => EngineError::SourceChanged {
                dataset: rec.id,
                uri,
                object_id,
            },
            source => EngineError::Storage { dataset: rec.id, source },
        })
    }

    fn source_key(&self, cx: EngineCx<'_>, rec: &DatasetRecord) -> Result<CacheKey, EngineError> {
        let uri = rec.uri.as_deref().expect("explicit datasets have a uri");
        let mut h = Sha256::new();
        h.update(b"vds/source");
        for e in rec.object_index.iter() {
            let fp = cx
                .storage
                .fingerprint(uri, &e.object_id)
                .map_err(|source| EngineError::Storage { dataset: rec.id, source })?;
            hash_str(&mut h, e.object_id.as_str());
            h.update(fp.0.to_le_bytes());
            hash_labels(&mut h, &e.labels);
        }
        Ok(CacheKey(h.finalize().into()))
    }

    fn transform_key(rec: &DatasetRecord, inputs: &[(CacheKey, &DatasetRecord)]) -> CacheKey {
        let spec = rec.spec.as_ref().expect("virtual records carry a spec");
        let mut h = Sha256::new();
        h.update(b"vds/transform");
        hash_str(&mut h, &computation_key_text(spec));
        for (key, in_rec) in inputs {
            h.update(key.0);
            h.update(index_digest(&in_rec.object_index));
            h.update((slot_of(in_rec) as u64).to_le_bytes());
        }
        CacheKey(h.finalize().into())
    }

    /// Backward traversal from `id` to its explicit roots.
    pub fn resolve(&self, cx: EngineCx<'_>, id: DatasetId) -> Result<Plan, EngineError> {
        let target = cx.catalog.get(id).map_err(|_| EngineError::NotFound(id))?;
        let mut plan = Plan {
            target: id,
            nodes: Vec::new(),
            records: HashMap::new(),
            node_of: HashMap::new(),
        };
        let mut by_key: HashMap<CacheKey, usize> = HashMap::new();
        self.visit(cx, target, &mut plan, &mut by_key)?;
        Ok(plan)
    }

    fn visit(
        &self,
        cx: EngineCx<'_>,
        rec: DatasetRecord,
        plan: &mut Plan,
        by_key: &mut HashMap<CacheKey, usize>,
    ) -> Result<usize, EngineError> {
        if let Some(&i) = plan.node_of.get(&rec.id) {
            return Ok(i);
        }
        let (kind, inputs, key) = match rec.kind {
            DatasetKind::Explicit => (NodeKind::Source, Vec::new(), self.source_key(cx, &rec)?),
            DatasetKind::Virtual => {
                let mut inputs = Vec::with_capacity(rec.inputs.len());
                for input in &rec.inputs {
                    let in_rec = cx.catalog.get(*input).map_err(|_| EngineError::BrokenLineage {
                        dataset: rec.id,
                        missing: *input,
                    })?;
                    inputs.push(self.visit(cx, in_rec, plan, by_key)?);
                }
                let keyed: Vec<(CacheKey, &DatasetRecord)> = rec
                    .inputs
                    .iter()
                    .zip(&inputs)
                    .map(|(d, &i)| (plan.nodes[i].cache_key, &plan.records[d]))
                    .collect();
                let key = Self::transform_key(&rec, &keyed);
                (NodeKind::Transform, inputs, key)
            }
        };
        let idx = match by_key.get(&key) {
            Some(&i) => {
                plan.nodes[i].datasets.push(rec.id);
                i
            }
            None => {
                let rows: Option<u64> = rec.object_index.iter().map(|e| e.row_count).sum();
                plan.nodes.push(PlanNode {
                    dataset_id: rec.id,
                    kind,
                    transform_id: rec.transform_id().map(str::to_string),
                    inputs,
                    cache_key: key,
                    estimated_rows: rows,
                    datasets: vec![rec.id],
                });
                by_key.insert(key, plan.nodes.len() - 1);
                plan.nodes.len() - 1
            }
        };
        plan.node_of.insert(rec.id, idx);
        plan.records.insert(rec.id, rec);
        Ok(idx)
    }

    /// Cache key of a dataset's computation.
    pub fn cache_key(&self, cx: EngineCx<'_>, id: DatasetId) -> Result<CacheKey, EngineError> {
        Ok(self.resolve(cx, id)?.target_key())
    }

    pub fn materialize(
        &self,
        cx: EngineCx<'_>,
        id: DatasetId,
        opts: MaterializeOptions,
    ) -> Result<Materialized, EngineError> {
        let plan = self.resolve(cx, id)?;
        self.materialize_plan(cx, &plan, opts)
    }

    pub fn materialize_plan(
        &self,
        cx: EngineCx<'_>,
        plan: &Plan,
        opts: MaterializeOptions,
    ) -> Result<Materialized, EngineError> {
        self.materializations.fetch_add(1, Ordering::Relaxed);
        let mut stats = RunStats {
            nodes_total: plan.nodes.len() as u64,
            ..RunStats::default()
        };
        let mut run = Run {
            engine: self,
            cx,
            plan,
            outputs: HashMap::new(),
        };
        for (idx, node) in plan.nodes.iter().enumerate() {
            if node.kind != NodeKind::Transform {
                continue;
            }
            let key = node.cache_key;
            if !opts.force_recompute && self.cache.lookup(&key) {
                stats.cache_hits += 1;
                self.maybe_audit(&mut run, idx)?;
                continue;
            }
            let _flight = self.cache.flight(&key);
            if !opts.force_recompute && self.cache.contains(&key) {
                stats.cache_hits += 1;
                continue;
            }
            let out = run.compute(idx)?;
            stats.transforms_executed += 1;
            match self.cache.put(key, codec::encode(&out)) {
                Ok(n) => stats.bytes_written += n,
                Err(e) => tracing::warn!(%key, error = %e, "could not store cache entry"),
            }
        }
        let target = plan.record(plan.target);
        let idx = plan.node_of[&plan.target];
        let slots = run.output(idx)?;
        Ok(Materialized {
            dataset: plan.target,
            objects: to_objects(target, &slots[slot_of(target)]),
            stats,
        })
    }

    fn maybe_audit(&self, run: &mut Run<'_>, idx: usize) -> Result<(), EngineError> {
        if self.audit_every == 0 || !(self.audit_tick.fetch_add(1, Ordering::Relaxed) + 1).is_multiple_of(self.audit_every) {
            return Ok(());
        }
        self.audits.fetch_add(1, Ordering::Relaxed);
        let Some(cached) = run.load_cached(idx)? else {
            return Ok(());
        };
        let fresh = run.compute(idx)?;
        if codec::encode(&cached) != codec::encode(&fresh) {
            let key = run.plan.nodes[idx].cache_key;
            self.audit_failures.fetch_add(1, Ordering::Relaxed);
            tracing::error!(%key, "cache audit: recomputed payload differs from cached entry");
            self.cache.remove(&key);
        }
        Ok(())
    }

    /// One object's payload, following object-level source links where
    /// possible and falling back to materializing the whole dataset.
    pub fn open_object(&self, cx: EngineCx<'_>, id: DatasetId, object_id: &ObjectId) -> Result<Table, EngineError> {
        self.opened.fetch_add(1, Ordering::Relaxed);
        let rec = cx.catalog.get(id).map_err(|_| EngineError::NotFound(id))?;
        let ordinal = rec
            .object_index
            .position(object_id)
            .ok_or_else(|| EngineError::ObjectNotFound {
                dataset: id,
                object_id: object_id.clone(),
            })?;
        self.open_ordinal(cx, &rec, ordinal)
    }

    fn open_ordinal(&self, cx: EngineCx<'_>, rec: &DatasetRecord, ordinal: usize) -> Result<Table, EngineError> {
        let entry = rec.object_index.entry(ordinal).expect("ordinal from this index");
        let Some(spec) = &rec.spec else {
            return self.read_source(cx, rec, &entry);
        };
        let failed = |cause| EngineError::TransformFailed { dataset: rec.id, cause };
        let t = cx
            .registry
            .get(&spec.transform.transform_id)
            .ok_or_else(|| failed(TransformError::Internal(format!("unknown transform {}", spec.transform.transform_id))))?;
        let params = &spec.transform.params;
        if !t.is_object_level(params) {
            let mut m = self.materialize(cx, rec.id, MaterializeOptions::default())?;
            return Ok(m.objects.swap_remove(ordinal).payload.expect("materialized"));
        }
        let mut sources = Vec::with_capacity(entry.source_links.len());
        for link in &entry.source_links {
            let in_rec = cx.catalog.get(link.dataset).map_err(|_| EngineError::BrokenLineage {
                dataset: rec.id,
                missing: link.dataset,
            })?;
            let pos = in_rec
                .object_index
                .position(&link.object_id)
                .ok_or_else(|| EngineError::ObjectNotFound {
                    dataset: link.dataset,
                    object_id: link.object_id.clone(),
                })?;
            let in_entry = in_rec.object_index.entry(pos).expect("position is valid");
            let table = self.open_ordinal(cx, &in_rec, pos)?;
            sources.push((in_entry, table));
        }
        let ocx = ObjectCx {
            slot: spec.output_index,
            segment: entry.source_links.first().and_then(|l| l.segment),
            schema: rec.schema_of(&entry),
            sources: sources
                .iter()
                .map(|(e, t)| SourceObject {
                    object_id: &e.object_id,
                    labels: &e.labels,
                    table: t,
                })
                .collect(),
        };
        t.compute_object(&ocx, params, spec.transform.effective_seed()).map_err(failed)
    }
}
