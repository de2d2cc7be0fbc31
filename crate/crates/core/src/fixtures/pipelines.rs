//! Random multi-step pipelines over small numeric sources. Every step is
//! applied eagerly while the pipeline is generated, so each node carries the
//! objects a virtual evaluation must reproduce.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catalog::RegisterExplicit;
use crate::ids::{DatasetId, IdGen, ObjectId};
use crate::model::{Column, ColumnType, DataObject, Labels, Schema, Table, Value};
use crate::ssvd::{DatasetRef, ParamValue, TransformRef, VirtualDatasetSpec};
use crate::storage::{MemObject, Storage};
use crate::transforms::{apply, EagerInput, Registry, TransformError};
use crate::workspace::{Result, Workspace};

const KINDS: [&str; 3] = ["x", "y", "z"];
const MAX_OBJECTS: usize = 120;
const MAX_ROWS: usize = 20;
const MAX_COLUMNS: usize = 8;

#[derive(Debug, Clone)]
pub struct Source {
    pub name: String,
    pub objects: Vec<DataObject>,
}

#[derive(Debug, Clone)]
pub struct Step {
    pub name: String,
    /// Node indices; sources come first, then steps in order.
    pub inputs: Vec<usize>,
    pub transform: TransformRef,
    pub outputs: Vec<String>,
    pub output_index: usize,
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    pub sources: Vec<Source>,
    pub steps: Vec<Step>,
    /// Eager result per node.
    pub expected: Vec<Vec<DataObject>>,
    pub depth: Vec<usize>,
}

impl Pipeline {
    pub fn node_name(&self, node: usize) -> &str {
        match node.checked_sub(self.sources.len()) {
            None => &self.sources[node].name,
            Some(s) => &self.steps[s].name,
        }
    }

    /// Puts every source into the mem adapter; returns `mem://` uris.
    pub fn install(&self, storage: &Storage) -> Vec<String> {
        self.sources
            .iter()
            .map(|s| {
                let objects = s
                    .objects
                    .iter()
                    .map(|o| MemObject::from_table(o.object_id.as_str(), o.payload.as_ref().unwrap(), o.labels.clone()))
                    .collect();
                storage.mem().put(&s.name, objects);
                format!("mem://{}", s.name)
            })
            .collect()
    }

    /// Registers the sources and declares every step as a virtual dataset;
    /// returns dataset ids per node.
    pub fn declare(&self, ws: &Workspace) -> Result<Vec<DatasetId>> {
        let mut ids = Vec::with_capacity(self.expected.len());
        for (s, uri) in self.sources.iter().zip(self.install(ws.storage())) {
            let mut req = RegisterExplicit::new(uri);
            req.name = Some(s.name.clone());
            ids.push(ws.register_explicit(&req)?.id);
        }
        for step in &self.steps {
            let inputs = step.inputs.iter().map(|&i| DatasetRef::id(ids[i])).collect();
            let outputs: Vec<&str> = step.outputs.iter().map(String::as_str).collect();
            let spec = VirtualDatasetSpec::new(step.name.clone(), inputs, step.transform.clone())
                .with_outputs(&outputs, step.output_index);
            ids.push(ws.create_virtual(&spec, "pipeline")?.id);
        }
        Ok(ids)
    }

    /// Re-runs every step eagerly. `fresh` may supply the ids a step's
    /// freshly keyed objects carry elsewhere (for instance in a catalog), so
    /// that steps depending on id values see the same ids.
    pub fn replay(
        &self,
        registry: &Registry,
        fresh: &mut dyn FnMut(usize) -> Option<Vec<ObjectId>>,
    ) -> std::result::Result<Vec<Vec<DataObject>>, TransformError> {
        let mut nodes: Vec<Vec<DataObject>> = self.sources.iter().map(|s| s.objects.clone()).collect();
        let ids = IdGen::seeded(0);
        for step in &self.steps {
            let node = nodes.len();
            let eager: Vec<EagerInput> = step
                .inputs
                .iter()
                .map(|&i| EagerInput {
                    name: self.node_name(i).to_string(),
                    objects: nodes[i].clone(),
                })
                .collect();
            let t = registry
                .get(&step.transform.transform_id)
                .ok_or_else(|| TransformError::Internal(format!("no transform {}", step.transform.transform_id)))?;
            let mut out = apply(t.as_ref(), &eager, &step.transform.params, step.transform.effective_seed(), &ids)?
                .swap_remove(step.output_index);
            if let Some(renamed) = fresh(node) {
                if renamed.len() != out.len() {
                    return Err(TransformError::Internal(format!(
                        "{} ids supplied for {} objects",
                        renamed.len(),
                        out.len()
                    )));
                }
                for (o, id) in out.iter_mut().zip(renamed) {
                    o.object_id = id;
                }
            }
            nodes.push(out);
        }
        Ok(nodes)
    }
}

fn source_table(rng: &mut ChaCha8Rng, rows: usize) -> Table {
    let schema = Schema::new(vec![
        Column::new("t", ColumnType::Int64),
        Column::new("a", ColumnType::Float64),
        Column::new("b", ColumnType::Float64),
        Column::new("c", ColumnType::Int64),
    ]);
    let rows = (0..rows)
        .map(|r| {
            vec![
                Value::Int(r as i64),
                Value::Float(rng.gen_range(-50.0..50.0f64)),
                Value::Float(rng.gen_range(0..1000) as f64 / 8.0),
                Value::Int(rng.gen_range(-20..20)),
            ]
        })
        .collect();
    // Parsed back so the eager side sees exactly what storage serves.
    Table::from_csv(Table::new(schema, rows).to_csv().as_bytes()).expect("own csv")
}

fn make_source(rng: &mut ChaCha8Rng, name: String, ids: &[String]) -> Source {
    let mut objects: Vec<DataObject> = ids
        .iter()
        .map(|id| {
            let rows = rng.gen_range(6..=MAX_ROWS);
            let labels = Labels::from([("kind".to_string(), KINDS.choose(rng).unwrap().to_string())]);
            DataObject::materialized(id.as_str().into(), source_table(rng, rows), labels)
        })
        .collect();
    objects.sort_by(|a, b| a.object_id.cmp(&b.object_id));
    Source { name, objects }
}

fn numeric_columns(objects: &[DataObject]) -> Vec<String> {
    let Some(first) = objects.first().and_then(|o| o.payload.as_ref()) else {
        return Vec::new();
    };
    first
        .schema
        .columns
        .iter()
        .filter(|c| c.ty.is_numeric())
        .filter(|c| {
            objects
                .iter()
                .all(|o| o.payload.as_ref().unwrap().schema.column(&c.name).is_some_and(|d| d.ty == c.ty))
        })
        .map(|c| c.name.clone())
        .collect()
}

fn subset(rng: &mut ChaCha8Rng, from: &[String], max: usize) -> Vec<String> {
    let k = rng.gen_range(1..=from.len().min(max));
    let mut picked: Vec<String> = from.choose_multiple(rng, k).cloned().collect();
    picked.sort();
    picked
}

fn list(v: Vec<String>) -> ParamValue {
    ParamValue::List(v.into_iter().map(ParamValue::Str).collect())
}

/// Proposes one step over existing nodes; `None` when nothing fits.
fn propose(rng: &mut ChaCha8Rng, nodes: &[Vec<DataObject>], eligible: &[usize]) -> Option<(TransformRef, Vec<usize>, usize)> {
    let pick = *eligible.choose(rng)?;
    let cols = numeric_columns(&nodes[pick]);
    let seed = rng.gen_range(0..1000u64);
    let choice = rng.gen_range(0..9);
    if cols.is_empty() && matches!(choice, 0 | 4 | 5 | 6) {
        return None;
    }
    let (t, inputs, slots) = match choice {
        0 => (
            TransformRef::new("select_columns").param("columns", list(subset(rng, &cols, 3))),
            vec![pick],
            1,
        ),
        1 => {
            let k = rng.gen_range(1..=2);
            let values: Vec<String> = KINDS.choose_multiple(rng, k).map(|s| s.to_string()).collect();
            (
                TransformRef::new("select_labels").param("key", "kind").param("values", list(values)),
                vec![pick],
                1,
            )
        }
        2 => {
            let n = rng.gen_range(2..=3);
            let inputs = (0..n).map(|_| *eligible.choose(rng).unwrap()).collect();
            (TransformRef::new("merge"), inputs, 1)
        }
        3 => {
            let a = rng.gen_range(10..80);
            let b = rng.gen_range(5..(95 - a));
            (
                TransformRef::new("partition")
                    .param("a", a)
                    .param("b", b)
                    .param("c", 100 - a - b)
                    .seed(seed),
                vec![pick],
                3,
            )
        }
        4 => {
            let strategy = ["uniform_grid", "uniform_random", "latin_hypercube"].choose(rng).unwrap();
            (
                TransformRef::new("sample")
                    .param("strategy", *strategy)
                    .param("n", rng.gen_range(1..=4i64))
                    .param("columns", list(subset(rng, &cols, 2)))
                    .seed(seed),
                vec![pick],
                1,
            )
        }
        5 => (
            TransformRef::new("normalize")
                .param("method", *["minmax", "zscore"].choose(rng).unwrap())
                .param("scope", *["per-object", "global"].choose(rng).unwrap())
                .param("columns", list(subset(rng, &cols, 2))),
            vec![pick],
            1,
        ),
        6 => {
            let k = rng.gen_range(1..=3);
            let stats: Vec<String> = ["mean", "std", "min", "max", "range"]
                .choose_multiple(rng, k)
                .map(|s| s.to_string())
                .collect();
            (
                TransformRef::new("extract_features")
                    .param("features", list(stats))
                    .param("columns", list(subset(rng, &cols, 2))),
                vec![pick],
                1,
            )
        }
        7 => (
            TransformRef::new("window")
                .param("W", rng.gen_range(2..=6i64))
                .param("stride", rng.gen_range(2..=5i64)),
            vec![pick],
            1,
        ),
        _ => {
            let other = *eligible.choose(rng).unwrap();
            (
                TransformRef::new("integrate")
                    .param("key", "t")
                    .param("names", vec!["l", "r"]),
                vec![pick, other],
                1,
            )
        }
    };
    Some((t, inputs, slots))
}

/// Generates `steps` steps, no node deeper than `max_depth` transforms.
/// Proposals that fail eagerly or yield nothing are redrawn.
pub fn random_pipeline(seed: u64, prefix: &str, steps: usize, max_depth: usize, registry: &Registry) -> Pipeline {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_sources = rng.gen_range(1..=3);
    let ids: Vec<String> = (0..rng.gen_range(3..=8)).map(|k| format!("o{k}")).collect();
    let sources: Vec<Source> = (0..n_sources)
        .map(|i| {
            // Later sources hold a subset so id pairing can still succeed.
            let keep = if i == 0 { ids.len() } else { rng.gen_range(1..=ids.len()) };
            make_source(&mut rng, format!("{prefix}src{i}"), &ids[..keep])
        })
        .collect();
    let mut nodes: Vec<Vec<DataObject>> = sources.iter().map(|s| s.objects.clone()).collect();
    let mut depth = vec![0; nodes.len()];
    let mut out_steps = Vec::new();
    let fresh = IdGen::seeded(seed ^ 0xeaeb);
    let mut attempts = 0;
    while out_steps.len() < steps && attempts < steps * 50 {
        attempts += 1;
        let eligible: Vec<usize> = (0..nodes.len()).filter(|&i| depth[i] < max_depth).collect();
        let Some((t, inputs, slots)) = propose(&mut rng, &nodes, &eligible) else {
            continue;
        };
        let name = format!("{prefix}n{}", nodes.len());
        let eager: Vec<EagerInput> = inputs
            .iter()
            .map(|&i| EagerInput {
                name: name_of(&sources, &out_steps, i),
                objects: nodes[i].clone(),
            })
            .collect();
        let transform = registry.get(&t.transform_id).expect("built-in");
        let Ok(mut result) = apply(transform.as_ref(), &eager, &t.params, t.effective_seed(), &fresh) else {
            continue;
        };
        let output_index = rng.gen_range(0..slots);
        let objects = result.swap_remove(output_index);
        let too_wide = objects.iter().any(|o| o.payload.as_ref().unwrap().schema.len() > MAX_COLUMNS);
        if objects.is_empty() || objects.len() > MAX_OBJECTS || too_wide {
            continue;
        }
        depth.push(1 + inputs.iter().map(|&i| depth[i]).max().unwrap());
        nodes.push(objects);
        let outputs = match slots {
            1 => vec!["out".to_string()],
            _ => vec!["train".into(), "val".into(), "test".into()],
        };
        out_steps.push(Step {
            name,
            inputs,
            transform: t,
            outputs,
            output_index,
        });
    }
    Pipeline {
        sources,
        steps: out_steps,
        expected: nodes,
        depth,
    }
}

fn name_of(sources: &[Source], steps: &[Step], node: usize) -> String {
    match node.checked_sub(sources.len()) {
        None => sources[node].name.clone(),
        Some(s) => steps[s].name.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_bounded() {
        let reg = Registry::new();
        let a = random_pipeline(7, "p", 8, 3, &reg);
        let b = random_pipeline(7, "p", 8, 3, &reg);
        assert_eq!(a.expected, b.expected);
        assert_eq!(a.steps.len(), 8);
        assert!(a.depth.iter().all(|&d| d <= 3));
    }
}
