//! YAML specifications of virtual datasets: parsing, validation against a
//! registry and catalog, and canonical serialization.
//!
//! Document layout:
//!
//! ```yaml
//! spec_version: ssvd/1
//! name: wind-merged
//! description: optional free text
//! inputs: [ {dataset: <32-hex id or storage uri>, kind: explicit|virtual (optional)} ]
//! transform: { id: merge, params: {...}, seed: 42 }
//! outputs: [out]          # default ["out"]
//! output_index: 0         # default 0
//! metadata: {...}         # free-form
//! ```

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_yaml::{Mapping, Value as Yaml};

use crate::ids::DatasetId;
use crate::transforms::{Registry, TransformError};

pub const SPEC_VERSION: &str = "ssvd/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Explicit,
    Virtual,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Explicit => "explicit",
            DatasetKind::Virtual => "virtual",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum RefTarget {
    Id(DatasetId),
    Uri(String),
}

impl fmt::Display for RefTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RefTarget::Id(id) => write!(f, "{id}"),
            RefTarget::Uri(u) => f.write_str(u),
        }
    }
}

/// Link to one input dataset.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DatasetRef {
    pub target: RefTarget,
    pub kind: Option<DatasetKind>,
}

impl DatasetRef {
    pub fn id(id: DatasetId) -> Self {
        DatasetRef {
            target: RefTarget::Id(id),
            kind: None,
        }
    }
}

/// Transform parameter value: a scalar or a list.
#[derive(Debug, Clone)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<ParamValue>),
}

impl PartialEq for ParamValue {
    fn eq(&self, other: &Self) -> bool {
        use ParamValue::*;
        match (self, other) {
            (Bool(a), Bool(b)) => a == b,
            (Int(a), Int(b)) => a == b,
            (Float(a), Float(b)) => a.to_bits() == b.to_bits(),
            (Str(a), Str(b)) => a == b,
            (List(a), List(b)) => a == b,
            _ => false,
        }
    }
}

impl ParamValue {
    pub fn as_i64(&self) -> Option<i64> {
        match self {
            ParamValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(v) => Some(*v as f64),
            ParamValue::Float(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_str_list(&self) -> Option<Vec<&str>> {
        match self {
            ParamValue::List(items) => items.iter().map(ParamValue::as_str).collect(),
            _ => None,
        }
    }

    fn from_yaml(v: &Yaml, path: &str) -> Result<ParamValue, SpecError> {
        Ok(match v {
            Yaml::Bool(b) => ParamValue::Bool(*b),
            Yaml::Number(n) => {
                if let Some(i) = n.as_i64() {
                    ParamValue::Int(i)
                } else if n.is_f64() {
                    ParamValue::Float(n.as_f64().unwrap_or(f64::NAN))
                } else {
                    return Err(SpecError::bad(path, "integer out of range"));
                }
            }
            Yaml::String(s) => ParamValue::Str(s.clone()),
            Yaml::Sequence(items) => ParamValue::List(
                items
                    .iter()
                    .enumerate()
                    .map(|(i, x)| ParamValue::from_yaml(x, &format!("{path}[{i}]")))
                    .collect::<Result<_, _>>()?,
            ),
            _ => return Err(SpecError::bad(path, "expected a scalar or a list")),
        })
    }

    pub fn to_yaml(&self) -> Yaml {
        match self {
            ParamValue::Bool(b) => Yaml::Bool(*b),
            ParamValue::Int(i) => Yaml::Number((*i).into()),
            ParamValue::Float(f) => Yaml::Number((*f).into()),
            ParamValue::Str(s) => Yaml::String(s.clone()),
            ParamValue::List(items) => Yaml::Sequence(items.iter().map(Self::to_yaml).collect()),
        }
    }

    /// Text form used for plugin command-line arguments.
    pub fn to_arg(&self) -> String {
        match self {
            ParamValue::Bool(b) => b.to_string(),
            ParamValue::Int(i) => i.to_string(),
            ParamValue::Float(f) => format!("{f:?}"),
            ParamValue::Str(s) => s.clone(),
            ParamValue::List(items) => items
                .iter()
                .map(ParamValue::to_arg)
                .collect::<Vec<_>>()
                .join(","),
        }
    }
}

impl From<&str> for ParamValue {
    fn from(s: &str) -> Self {
        ParamValue::Str(s.to_string())
    }
}

impl From<i64> for ParamValue {
    fn from(v: i64) -> Self {
        ParamValue::Int(v)
    }
}

impl From<f64> for ParamValue {
    fn from(v: f64) -> Self {
        ParamValue::Float(v)
    }
}

impl From<bool> for ParamValue {
    fn from(v: bool) -> Self {
        ParamValue::Bool(v)
    }
}

impl<T: Into<ParamValue>> From<Vec<T>> for ParamValue {
    fn from(v: Vec<T>) -> Self {
        ParamValue::List(v.into_iter().map(Into::into).collect())
    }
}

pub type Params = BTreeMap<String, ParamValue>;

/// Link to a registered transformation plus its arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformRef {
    pub transform_id: String,
    pub params: Params,
    pub seed: Option<u64>,
}

impl TransformRef {
    pub fn new(id: impl Into<String>) -> Self {
        TransformRef {
            transform_id: id.into(),
            params: Params::new(),
            seed: None,
        }
    }

    pub fn param(mut self, key: &str, v: impl Into<ParamValue>) -> Self {
        self.params.insert(key.to_string(), v.into());
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn effective_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualDatasetSpec {
    pub spec_version: String,
    pub name: String,
    pub description: String,
    pub inputs: Vec<DatasetRef>,
    pub transform: TransformRef,
    pub outputs: Vec<String>,
    pub output_index: usize,
    pub metadata: BTreeMap<String, Yaml>,
}

impl VirtualDatasetSpec {
    pub fn new(name: impl Into<String>, inputs: Vec<DatasetRef>, transform: TransformRef) -> Self {
        VirtualDatasetSpec {
            spec_version: SPEC_VERSION.to_string(),
            name: name.into(),
            description: String::new(),
            inputs,
            transform,
            outputs: vec!["out".to_string()],
            output_index: 0,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_outputs(mut self, outputs: &[&str], index: usize) -> Self {
        self.outputs = outputs.iter().map(|s| s.to_string()).collect();
        self.output_index = index;
        self
    }

    /// String-valued entries of `metadata.labels`, used for search.
    pub fn labels(&self) -> BTreeMap<String, String> {
        match self.metadata.get("labels") {
            Some(Yaml::Mapping(m)) => m
                .iter()
                .filter_map(|(k, v)| Some((k.as_str()?.to_string(), yaml_scalar_text(v)?)))
                .collect(),
            _ => BTreeMap::new(),
        }
    }
}

fn yaml_scalar_text(v: &Yaml) -> Option<String> {
    match v {
        Yaml::String(s) => Some(s.clone()),
        Yaml::Number(n) => Some(n.to_string()),
        Yaml::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SpecError {
    #[error("YAML syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("unsupported spec_version {0:?} (expected {SPEC_VERSION})")]
    BadVersion(String),
    #[error("invalid value at `{path}`: {reason}")]
    BadValue { path: String, reason: String },
}

impl SpecError {
    fn bad(path: &str, reason: impl Into<String>) -> Self {
        SpecError::BadValue {
            path: path.to_string(),
            reason: reason.into(),
        }
    }
}

struct Fields<'a> {
    path: &'a str,
    map: &'a Mapping,
}

impl<'a> Fields<'a> {
    fn new(v: &'a Yaml, path: &'a str, allowed: &[&str]) -> Result<Self, SpecError> {
        let map = v
            .as_mapping()
            .ok_or_else(|| SpecError::bad(path_or_root(path), "expected a mapping"))?;
        for k in map.keys() {
            let key = k
                .as_str()
                .ok_or_else(|| SpecError::bad(path_or_root(path), "keys must be strings"))?;
            if !allowed.contains(&key) {
                return Err(SpecError::UnknownField(join(path, key)));
            }
        }
        Ok(Fields { path, map })
    }

    fn get(&self, key: &str) -> Option<&'a Yaml> {
        self.map.get(key).filter(|v| !v.is_null())
    }

    fn required(&self, key: &str) -> Result<&'a Yaml, SpecError> {
        self.get(key)
            .ok_or_else(|| SpecError::MissingField(join(self.path, key)))
    }

    fn string(&self, key: &str) -> Result<Option<String>, SpecError> {
        match self.get(key) {
            None => Ok(None),
            Some(Yaml::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(SpecError::bad(&join(self.path, key), "expected a string")),
        }
    }

    fn required_string(&self, key: &str) -> Result<String, SpecError> {
        self.required(key)?;
        Ok(self.string(key)?.unwrap_or_default())
    }
}

fn path_or_root(p: &str) -> &str {
    if p.is_empty() {
        "<root>"
    } else {
        p
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn check_version(v: &str) -> Result<(), SpecError> {
    let ok = v == SPEC_VERSION
        || v
            .strip_prefix("ssvd/1.")
            .is_some_and(|minor| !minor.is_empty() && minor.bytes().all(|b| b.is_ascii_digit()));
    if ok {
        Ok(())
    } else {
        Err(SpecError::BadVersion(v.to_string()))
    }
}

fn parse_ref(v: &Yaml, path: &str) -> Result<DatasetRef, SpecError> {
    let f = Fields::new(v, path, &["dataset", "kind"])?;
    let target = f.required_string("dataset")?;
    let target = if let Ok(id) = target.parse::<DatasetId>() {
        RefTarget::Id(id)
    } else if target.contains("://") {
        RefTarget::Uri(target)
    } else {
        return Err(SpecError::bad(
            &join(path, "dataset"),
            "expected a 32-hex dataset id or a storage uri",
        ));
    };
    let kind = match f.string("kind")?.as_deref() {
        None => None,
        Some("explicit") => Some(DatasetKind::Explicit),
        Some("virtual") => Some(DatasetKind::Virtual),
        Some(other) => {
            return Err(SpecError::bad(
                &join(path, "kind"),
                format!("unknown kind {other:?}"),
            ))
        }
    };
    Ok(DatasetRef { target, kind })
}

fn parse_u64(v: &Yaml, path: &str) -> Result<u64, SpecError> {
    v.as_u64()
        .ok_or_else(|| SpecError::bad(path, "expected a non-negative integer"))
}

/// Parses an SSVD document. Structural problems are reported here; whether
/// the inputs and transform exist is checked by [`validate_spec`].
pub fn parse_spec(text: &str) -> Result<VirtualDatasetSpec, SpecError> {
    let doc: Yaml = serde_yaml::from_str(text).map_err(|e| {
        let loc = e.location();
        SpecError::Syntax {
            line: loc.as_ref().map_or(0, |l| l.line()),
            column: loc.as_ref().map_or(0, |l| l.column()),
            message: e.to_string(),
        }
    })?;
    spec_from_yaml(&doc)
}

/// Builds a spec from an already-parsed YAML document.
pub fn spec_from_yaml(doc: &Yaml) -> Result<VirtualDatasetSpec, SpecError> {
    let top = Fields::new(
        doc,
        "",
        &[
            "spec_version",
            "name",
            "description",
            "inputs",
            "transform",
            "outputs",
            "output_index",
            "metadata",
        ],
    )?;

    let spec_version = top.required_string("spec_version")?;
    check_version(&spec_version)?;
    let name = top.required_string("name")?;
    if name.is_empty() {
        return Err(SpecError::bad("name", "must not be empty"));
    }
    let description = top.string("description")?.unwrap_or_default();

    let inputs = match top.required("inputs")? {
        Yaml::Sequence(items) => items
            .iter()
            .enumerate()
            .map(|(i, v)| parse_ref(v, &format!("inputs[{i}]")))
            .collect::<Result<Vec<_>, _>>()?,
        _ => return Err(SpecError::bad("inputs", "expected a list")),
    };
    if inputs.is_empty() {
        return Err(SpecError::bad("inputs", "at least one input is required"));
    }

    let tf = Fields::new(top.required("transform")?, "transform", &["id", "params", "seed"])?;
    let transform_id = tf.required_string("id")?;
    let params = match tf.get("params") {
        None => Params::new(),
        Some(Yaml::Mapping(m)) => m
            .iter()
            .map(|(k, v)| {
                let key = k
                    .as_str()
                    .ok_or_else(|| SpecError::bad("transform.params", "keys must be strings"))?;
                let path = format!("transform.params.{key}");
                Ok((key.to_string(), ParamValue::from_yaml(v, &path)?))
            })
            .collect::<Result<_, SpecError>>()?,
        Some(_) => return Err(SpecError::bad("transform.params", "expected a mapping")),
    };
    let seed = tf
        .get("seed")
        .map(|v| parse_u64(v, "transform.seed"))
        .transpose()?;

    let outputs = match top.get("outputs") {
        None => vec!["out".to_string()],
        Some(Yaml::Sequence(items)) => items
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| SpecError::bad(&format!("outputs[{i}]"), "expected a string"))
            })
            .collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err(SpecError::bad("outputs", "expected a list")),
    };
    if outputs.is_empty() {
        return Err(SpecError::bad("outputs", "at least one output slot is required"));
    }
    let output_index = match top.get("output_index") {
        None => 0,
        Some(v) => parse_u64(v, "output_index")? as usize,
    };
    if output_index >= outputs.len() {
        return Err(SpecError::bad(
            "output_index",
            format!("must be below the number of outputs ({})", outputs.len()),
        ));
    }

    let metadata = match top.get("metadata") {
        None => BTreeMap::new(),
        Some(Yaml::Mapping(m)) => m
            .iter()
            .map(|(k, v)| {
                let key = k
                    .as_str()
                    .ok_or_else(|| SpecError::bad("metadata", "keys must be strings"))?;
                Ok((key.to_string(), v.clone()))
            })
            .collect::<Result<_, SpecError>>()?,
        Some(_) => return Err(SpecError::bad("metadata", "expected a mapping")),
    };

    Ok(VirtualDatasetSpec {
        spec_version,
        name,
        description,
        inputs,
        transform: TransformRef {
            transform_id,
            params,
            seed,
        },
        outputs,
        output_index,
        metadata,
    })
}

/// Recursively sorts mapping keys.
pub fn canonicalize_yaml(v: &Yaml) -> Yaml {
    match v {
        Yaml::Mapping(m) => {
            let mut entries: Vec<(String, Yaml, Yaml)> = m
                .iter()
                .map(|(k, v)| (yaml_sort_key(k), k.clone(), canonicalize_yaml(v)))
                .collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Yaml::Mapping(entries.into_iter().map(|(_, k, v)| (k, v)).collect())
        }
        Yaml::Sequence(items) => Yaml::Sequence(items.iter().map(canonicalize_yaml).collect()),
        Yaml::Tagged(t) => Yaml::Tagged(Box::new(serde_yaml::value::TaggedValue {
            tag: t.tag.clone(),
            value: canonicalize_yaml(&t.value),
        })),
        other => other.clone(),
    }
}

fn yaml_sort_key(k: &Yaml) -> String {
    match k {
        Yaml::String(s) => s.clone(),
        other => serde_yaml::to_string(other).unwrap_or_default(),
    }
}

pub fn to_canonical_yaml_string(v: &Yaml) -> String {
    serde_yaml::to_string(&canonicalize_yaml(v)).expect("YAML values always serialize")
}

fn ref_to_yaml(r: &DatasetRef) -> Yaml {
    let mut m = Mapping::new();
    m.insert("dataset".into(), Yaml::String(r.target.to_string()));
    if let Some(k) = r.kind {
        m.insert("kind".into(), Yaml::String(k.as_str().into()));
    }
    Yaml::Mapping(m)
}

fn params_to_yaml(params: &Params) -> Yaml {
    Yaml::Mapping(
        params
            .iter()
            .map(|(k, v)| (Yaml::String(k.clone()), v.to_yaml()))
            .collect(),
    )
}

pub fn spec_to_yaml(spec: &VirtualDatasetSpec) -> Yaml {
    let mut m = Mapping::new();
    m.insert("spec_version".into(), spec.spec_version.clone().into());
    m.insert("name".into(), spec.name.clone().into());
    if !spec.description.is_empty() {
        m.insert("description".into(), spec.description.clone().into());
    }
    m.insert(
        "inputs".into(),
        Yaml::Sequence(spec.inputs.iter().map(ref_to_yaml).collect()),
    );
    let mut t = Mapping::new();
    t.insert("id".into(), spec.transform.transform_id.clone().into());
    t.insert("params".into(), params_to_yaml(&spec.transform.params));
    if let Some(seed) = spec.transform.seed {
        t.insert("seed".into(), Yaml::Number(seed.into()));
    }
    m.insert("transform".into(), Yaml::Mapping(t));
    m.insert(
        "outputs".into(),
        Yaml::Sequence(spec.outputs.iter().cloned().map(Yaml::String).collect()),
    );
    m.insert(
        "output_index".into(),
        Yaml::Number((spec.output_index as u64).into()),
    );
    if !spec.metadata.is_empty() {
        m.insert(
            "metadata".into(),
            Yaml::Mapping(
                spec.metadata
                    .iter()
                    .map(|(k, v)| (Yaml::String(k.clone()), v.clone()))
                    .collect(),
            ),
        );
    }
    Yaml::Mapping(m)
}

/// Deterministic text form: keys sorted, lists in declared order, numbers in
/// shortest round-trip form.
pub fn canonical_serialize(spec: &VirtualDatasetSpec) -> String {
    to_canonical_yaml_string(&spec_to_yaml(spec))
}

/// The part of a spec that determines what gets computed: transform, params,
/// effective seed and output arity. Name, slot choice and metadata are
/// excluded so that sibling outputs share one computation.
pub fn computation_key_text(spec: &VirtualDatasetSpec) -> String {
    let mut m = Mapping::new();
    m.insert("id".into(), spec.transform.transform_id.clone().into());
    m.insert("params".into(), params_to_yaml(&spec.transform.params));
    m.insert(
        "seed".into(),
        Yaml::Number(spec.transform.effective_seed().into()),
    );
    m.insert("n_outputs".into(), Yaml::Number((spec.outputs.len() as u64).into()));
    to_canonical_yaml_string(&Yaml::Mapping(m))
}

/// Read access to the catalog needed during validation.
pub trait CatalogView {
    fn resolve_ref(&self, target: &RefTarget) -> Option<(DatasetId, DatasetKind)>;
    fn generation(&self) -> u64;
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ValidationError {
    #[error("unknown dataset {0}")]
    UnknownDataset(String),
    #[error("dataset {dataset} is {actual}, spec declares {declared}")]
    KindMismatch {
        dataset: String,
        declared: DatasetKind,
        actual: DatasetKind,
    },
    #[error("unknown transform {0:?}")]
    UnknownTransform(String),
    #[error("parameter {key:?}: {reason}")]
    ParamError { key: String, reason: String },
    #[error("{what} arity mismatch: expected {expected}, got {got}")]
    ArityMismatch {
        what: &'static str,
        expected: String,
        got: usize,
    },
}

/// A spec whose links resolved against a particular catalog generation.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedSpec {
    pub spec: VirtualDatasetSpec,
    pub inputs: Vec<DatasetId>,
    pub generation: u64,
}

pub fn validate_spec(
    spec: &VirtualDatasetSpec,
    registry: &Registry,
    catalog: &dyn CatalogView,
) -> Result<ValidatedSpec, ValidationError> {
    let generation = catalog.generation();
    let mut inputs = Vec::with_capacity(spec.inputs.len());
    for r in &spec.inputs {
        let (id, actual) = catalog
            .resolve_ref(&r.target)
            .ok_or_else(|| ValidationError::UnknownDataset(r.target.to_string()))?;
        if let Some(declared) = r.kind {
            if declared != actual {
                return Err(ValidationError::KindMismatch {
                    dataset: r.target.to_string(),
                    declared,
                    actual,
                });
            }
        }
        inputs.push(id);
    }

    let transform = registry
        .get(&spec.transform.transform_id)
        .ok_or_else(|| ValidationError::UnknownTransform(spec.transform.transform_id.clone()))?;
    let desc = transform.descriptor();
    if !desc.input_arity.accepts(inputs.len()) {
        return Err(ValidationError::ArityMismatch {
            what: "input",
            expected: desc.input_arity.to_string(),
            got: inputs.len(),
        });
    }
    if spec.outputs.len() != desc.output_arity {
        return Err(ValidationError::ArityMismatch {
            what: "output",
            expected: desc.output_arity.to_string(),
            got: spec.outputs.len(),
        });
    }
    crate::transforms::check_params(transform.as_ref(), &spec.transform.params).map_err(
        |e| match e {
            TransformError::Param { key, reason } => ValidationError::ParamError { key, reason },
            other => ValidationError::ParamError {
                key: String::new(),
                reason: other.to_string(),
            },
        },
    )?;

    Ok(ValidatedSpec {
        spec: spec.clone(),
        inputs,
        generation,
    })
}
