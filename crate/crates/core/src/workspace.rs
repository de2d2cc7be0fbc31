//! One catalog, storage layer, transform registry and engine wired together:
//! the library surface the HTTP service delegates to.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use crate::catalog::{
    Catalog, CatalogError, DatasetRecord, Direction, LineageGraph, ObjectEntry, ObjectFacts, RegisterExplicit,
    RemoveMode, SearchFilter,
};
use crate::engine::{
    Cache, CacheKey, CacheStats, Engine, EngineCounters, EngineCx, EngineError, MaterializeOptions, Materialized,
    Plan, DEFAULT_BUDGET,
};
use crate::ids::{DatasetId, IdGen, ObjectId};
use crate::model::Table;
use crate::ssvd::{parse_spec, validate_spec, SpecError, ValidationError, VirtualDatasetSpec};
use crate::storage::Storage;
use crate::transforms::{PluginLimits, Registry, TransformDescriptor, TransformError};

#[derive(Debug, Clone)]
pub struct Config {
    /// Catalog log and cache live here; `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    pub cache_budget: u64,
    /// Seed for dataset and object ids; `None` draws them from the OS.
    pub id_seed: Option<u64>,
    /// Plugin manifests; defaults to `<data_dir>/plugins`.
    pub plugin_dir: Option<PathBuf>,
    pub plugin_timeout: Duration,
    pub max_plugin_processes: usize,
    pub audit_every: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            data_dir: None,
            cache_budget: DEFAULT_BUDGET,
            id_seed: None,
            plugin_dir: None,
            plugin_timeout: Duration::from_secs(300),
            max_plugin_processes: 8,
            audit_every: 0,
        }
    }
}

impl Config {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn at(dir: impl Into<PathBuf>) -> Self {
        Config {
            data_dir: Some(dir.into()),
            ..Self::default()
        }
    }

    pub fn budget(mut self, bytes: u64) -> Self {
        self.cache_budget = bytes;
        self
    }

    pub fn seeded(mut self, seed: u64) -> Self {
        self.id_seed = Some(seed);
        self
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("setup: {0}")]
    Setup(String),
}

fn transform_code(e: &TransformError) -> (&'static str, u16) {
    use TransformError::*;
    match e {
        Param { .. } => ("PARAM_ERROR", 422),
        NoCommonColumns => ("NO_COMMON_COLUMNS", 422),
        UnknownColumn { .. } => ("UNKNOWN_COLUMN", 422),
        NonNumericColumn(_) => ("NON_NUMERIC_COLUMN", 422),
        MissingKey { .. } => ("MISSING_KEY", 422),
        UnpairedObject(_) => ("UNPAIRED_OBJECT", 422),
        UnknownLabelKey(_) => ("UNKNOWN_LABEL_KEY", 422),
        MetadataUnavailable { .. } => ("METADATA_UNAVAILABLE", 409),
        PluginCrashed { .. } => ("PLUGIN_CRASHED", 500),
        ProtocolViolation(_) => ("PROTOCOL_VIOLATION", 500),
        Timeout(_) => ("PLUGIN_TIMEOUT", 500),
        Io(_) => ("PLUGIN_IO", 500),
        DuplicateTransform(_) => ("DUPLICATE_TRANSFORM", 409),
        Internal(_) => ("INTERNAL", 500),
    }
}

impl Error {
    /// Machine-readable code and the HTTP status it maps to.
    pub fn code_and_status(&self) -> (&'static str, u16) {
        match self {
            Error::Spec(_) => ("INVALID_SPEC", 400),
            Error::Validation(v) => match v {
                ValidationError::UnknownDataset(_) => ("UNKNOWN_DATASET", 422),
                ValidationError::KindMismatch { .. } => ("KIND_MISMATCH", 422),
                ValidationError::UnknownTransform(_) => ("UNKNOWN_TRANSFORM", 422),
                ValidationError::ParamError { .. } => ("PARAM_ERROR", 422),
                ValidationError::ArityMismatch { .. } => ("ARITY_MISMATCH", 422),
            },
            Error::Catalog(c) => match c {
                CatalogError::NotFound(_) => ("NOT_FOUND", 404),
                CatalogError::UnreadableSource { .. } => ("UNREADABLE_SOURCE", 422),
                CatalogError::EmptyDataset(_) => ("EMPTY_DATASET", 422),
                CatalogError::UnsupportedFormat(_) => ("UNSUPPORTED_FORMAT", 400),
                CatalogError::LabelsFile(_) => ("INVALID_LABELS", 422),
                CatalogError::ValidationStale => ("VALIDATION_STALE", 409),
                CatalogError::CycleDetected(_) => ("CYCLE_DETECTED", 409),
                CatalogError::HasDependents(_) => ("HAS_DEPENDENTS", 409),
                CatalogError::UnknownTransform(_) => ("UNKNOWN_TRANSFORM", 422),
                CatalogError::DuplicateObjectId(_) => ("DUPLICATE_OBJECT_ID", 422),
                CatalogError::Transform(t) => transform_code(t),
                CatalogError::Persistence(_) => ("PERSISTENCE", 500),
            },
            Error::Engine(e) => match e {
                EngineError::NotFound(_) => ("NOT_FOUND", 404),
                EngineError::BrokenLineage { .. } => ("BROKEN_LINEAGE", 409),
                EngineError::ObjectNotFound { .. } => ("OBJECT_NOT_FOUND", 404),
                EngineError::TransformFailed { cause, .. } => transform_code(cause),
                EngineError::SourceChanged { .. } => ("SOURCE_CHANGED", 409),
                EngineError::Storage { .. } => ("STORAGE_ERROR", 500),
                EngineError::CacheCorrupt(_) => ("CACHE_CORRUPT", 500),
                EngineError::Inconsistent { .. } => ("INCONSISTENT", 500),
                EngineError::Io(_) => ("IO_ERROR", 500),
            },
            Error::Setup(_) => ("SETUP", 500),
        }
    }

    pub fn code(&self) -> &'static str {
        self.code_and_status().0
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub struct Workspace {
    catalog: Catalog,
    storage: Storage,
    registry: Registry,
    engine: Engine,
    ids: IdGen,
}

impl Workspace {
    pub fn open(config: &Config) -> Result<Self> {
        let setup = |e: &dyn std::fmt::Display| Error::Setup(e.to_string());
        let (catalog, cache) = match &config.data_dir {
            Some(dir) => (
                Catalog::open(&dir.join("catalog"))?,
                Cache::open(&dir.join("cache"), config.cache_budget).map_err(|e| setup(&e))?,
            ),
            None => (Catalog::in_memory(), Cache::in_memory(config.cache_budget)),
        };
        let registry = Registry::new();
        let plugin_dir = config
            .plugin_dir
            .clone()
            .or_else(|| config.data_dir.as_ref().map(|d| d.join("plugins")));
        if let Some(dir) = plugin_dir {
            let limits = Arc::new(PluginLimits::new(config.plugin_timeout, config.max_plugin_processes));
            registry.load_plugin_dir(&dir, limits).map_err(|e| setup(&e))?;
        }
        Ok(Workspace {
            catalog,
            storage: Storage::new(),
            registry,
            engine: Engine::new(cache).with_audit_every(config.audit_every),
            ids: config.id_seed.map_or_else(IdGen::random, IdGen::seeded),
        })
    }

    pub fn in_memory() -> Self {
        Self::open(&Config::in_memory()).expect("in-memory workspaces need no i/o")
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn storage(&self) -> &Storage {
        &self.storage
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    fn cx(&self) -> EngineCx<'_> {
        EngineCx {
            catalog: &self.catalog,
            storage: &self.storage,
            registry: &self.registry,
        }
    }

    pub fn register_explicit(&self, req: &RegisterExplicit) -> Result<DatasetRecord> {
        Ok(self.catalog.register_explicit(&self.storage, req, self.ids.dataset_id())?)
    }

    /// Validates and records a virtual dataset. Inputs whose metadata the
    /// transform's plan needs but the catalog lacks are materialized first.
    pub fn create_virtual(&self, spec: &VirtualDatasetSpec, creator: &str) -> Result<DatasetRecord> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            let v = validate_spec(spec, &self.registry, &self.catalog)?;
            match self.catalog.create_virtual(&v, &self.registry, &self.ids, creator) {
                Err(CatalogError::Transform(TransformError::MetadataUnavailable { input, .. }))
                    if attempts <= spec.inputs.len() + 1 =>
                {
                    self.materialize(v.inputs[input], MaterializeOptions::default())?;
                }
                Err(CatalogError::ValidationStale) if attempts < 16 => {}
                other => return Ok(other?),
            }
        }
    }

    pub fn create_virtual_yaml(&self, text: &str, creator: &str) -> Result<DatasetRecord> {
        self.create_virtual(&parse_spec(text)?, creator)
    }

    pub fn get(&self, id: DatasetId) -> Result<DatasetRecord> {
        Ok(self.catalog.get(id)?)
    }

    pub fn search(&self, filter: &SearchFilter) -> Vec<DatasetRecord> {
        self.catalog.search(filter)
    }

    pub fn lineage(&self, id: DatasetId, direction: Direction, depth: Option<usize>) -> Result<LineageGraph> {
        Ok(self.catalog.lineage(id, direction, depth)?)
    }

    pub fn remove(&self, id: DatasetId, mode: RemoveMode) -> Result<Vec<DatasetId>> {
        Ok(self.catalog.remove(id, mode)?)
    }

    pub fn objects(&self, id: DatasetId) -> Result<Vec<ObjectEntry>> {
        Ok(self.catalog.get(id)?.object_index.iter().collect())
    }

    pub fn transforms(&self) -> Vec<TransformDescriptor> {
        self.registry.list()
    }

    pub fn resolve(&self, id: DatasetId) -> Result<Plan> {
        Ok(self.engine.resolve(self.cx(), id)?)
    }

    pub fn cache_key(&self, id: DatasetId) -> Result<CacheKey> {
        Ok(self.engine.cache_key(self.cx(), id)?)
    }

    /// Materializes a dataset and records any row counts and schemas the
    /// catalog did not know yet.
    pub fn materialize(&self, id: DatasetId, opts: MaterializeOptions) -> Result<Materialized> {
        let m = self.engine.materialize(self.cx(), id, opts)?;
        let rec = self.catalog.get(id)?;
        let facts: Vec<ObjectFacts> = rec
            .object_index
            .iter()
            .zip(&m.objects)
            .enumerate()
            .filter(|(_, (e, _))| e.row_count.is_none() || e.schema.is_none())
            .filter_map(|(ordinal, (_, o))| {
                o.payload.as_ref().map(|t| ObjectFacts {
                    ordinal,
                    row_count: t.row_count() as u64,
                    schema: t.schema.clone(),
                })
            })
            .collect();
        if !facts.is_empty() {
            self.catalog.annotate(id, &facts)?;
        }
        Ok(m)
    }

    pub fn open_object(&self, id: DatasetId, object_id: &ObjectId) -> Result<Table> {
        Ok(self.engine.open_object(self.cx(), id, object_id)?)
    }

    pub fn cache_stats(&self) -> CacheStats {
        self.engine.cache().stats()
    }

    pub fn engine_counters(&self) -> EngineCounters {
        self.engine.counters()
    }

    /// Evicts down to `target` bytes, or to the budget when `None`.
    pub fn evict(&self, target: Option<u64>) -> u64 {
        self.engine.cache().evict(target)
    }
}
