use std::collections::HashMap;

use crate::model::{Column, Labels, Schema, Table, Value};
use crate::ssvd::Params;

use super::*;

pub struct Integrate {
    desc: TransformDescriptor,
}

impl Integrate {
    pub fn new() -> Self {
        Integrate {
            desc: TransformDescriptor {
                transform_id: "integrate".into(),
                input_arity: Arity::AtLeast(2),
                output_arity: 1,
                param_schema: vec![
                    ParamSpec::new("key", ParamKind::String, true).constraint(Constraint::NonEmpty),
                    ParamSpec::new("names", ParamKind::StringList, false),
                ],
                deterministic: true,
                seeded: false,
                granularity: Granularity::ObjectLevel,
                exec: None,
            },
        }
    }
}

fn dataset_names(inputs: &[InputMeta], params: &Params) -> Result<Vec<String>, TransformError> {
    match params.get("names").and_then(|v| v.as_str_list()) {
        Some(names) if names.len() != inputs.len() => Err(param_err(
            "names",
            format!("expected {} names, got {}", inputs.len(), names.len()),
        )),
        Some(names) => Ok(names.into_iter().map(str::to_string).collect()),
        None => Ok(inputs.iter().map(|i| i.name.clone()).collect()),
    }
}

/// Object groups paired by id, in the first input's order.
pub(crate) fn pair_by_id(inputs: &[InputMeta]) -> Result<Vec<Vec<SourceRef>>, TransformError> {
    let maps: Vec<_> = inputs.iter().map(InputMeta::position_map).collect();
    for input in &inputs[1..] {
        if let Some(e) = input.objects.iter().find(|e| !maps[0].contains_key(&e.object_id)) {
            return Err(TransformError::UnpairedObject(e.object_id.clone()));
        }
    }
    inputs[0]
        .objects
        .iter()
        .enumerate()
        .map(|(ordinal, e)| {
            let mut group = vec![SourceRef { input: 0, ordinal }];
            for (i, m) in maps.iter().enumerate().skip(1) {
                let o = m
                    .get(&e.object_id)
                    .ok_or_else(|| TransformError::UnpairedObject(e.object_id.clone()))?;
                group.push(SourceRef { input: i, ordinal: *o });
            }
            Ok(group)
        })
        .collect()
}

pub(crate) fn group_labels(inputs: &[InputMeta], group: &[SourceRef]) -> Labels {
    let mut labels = Labels::new();
    for s in group.iter().rev() {
        labels.extend(inputs[s.input].objects[s.ordinal].labels.clone());
    }
    labels
}

impl Transform for Integrate {
    fn descriptor(&self) -> &TransformDescriptor {
        &self.desc
    }

    fn plan(&self, inputs: &[InputMeta], params: &Params, _seed: u64) -> Result<Vec<SlotPlan>, TransformError> {
        let key = get_str(params, "key")?;
        let names = dataset_names(inputs, params)?;
        let groups = pair_by_id(inputs)?;
        let mut interner = SchemaInterner::default();
        let mut objects = Vec::with_capacity(groups.len());
        for group in groups {
            let mut key_col: Option<&Column> = None;
            let mut columns = Vec::new();
            for (pos, s) in group.iter().enumerate() {
                let schema = inputs[s.input]
                    .schema_of(s.ordinal)
                    .ok_or(TransformError::MetadataUnavailable {
                        input: s.input,
                        what: "object schemas",
                    })?;
                let col = schema.column(key).ok_or_else(|| TransformError::MissingKey {
                    dataset: names[s.input].clone(),
                    note: format!("no column {key:?}"),
                })?;
                match key_col {
                    None => key_col = Some(col),
                    Some(k) if k.ty != col.ty => {
                        return Err(TransformError::MissingKey {
                            dataset: names[s.input].clone(),
                            note: format!("key {key:?} is {} here but {} in the first input", col.ty, k.ty),
                        })
                    }
                    Some(_) => {}
                }
                for c in schema.columns.iter().filter(|c| c.name != key) {
                    columns.push(Column {
                        name: format!("{}.{}", names[pos], c.name),
                        ty: c.ty,
                        nullable: c.nullable,
                    });
                }
            }
            let k = key_col.expect("groups are non-empty");
            columns.insert(0, Column::new(k.name.clone(), k.ty));
            let schema = Schema::new(columns);
            objects.push(PlannedObject {
                id: PlannedId::Keep(inputs[0].objects[group[0].ordinal].object_id.clone()),
                labels: group_labels(inputs, &group),
                sources: group,
                segment: None,
                row_count: None,
                schema: Some(interner.intern(&schema)),
            });
        }
        Ok(vec![SlotPlan {
            schemas: interner.into_schemas(),
            objects: PlannedObjects::Listed(objects),
        }])
    }

    fn compute_object(&self, cx: &ObjectCx<'_>, params: &Params, _seed: u64) -> Result<Table, TransformError> {
        let key = get_str(params, "key")?;
        let schema = cx.out_schema()?;
        let key_idx = |t: &Table| {
            t.schema.index_of(key).ok_or_else(|| TransformError::MissingKey {
                dataset: String::new(),
                note: format!("no column {key:?}"),
            })
        };
        // Each partial row is (key, non-key cells so far).
        let first = cx.source()?.table;
        let k0 = key_idx(first)?;
        let mut joined: Vec<(Value, Vec<Value>)> = first
            .rows
            .iter()
            .filter(|r| !r[k0].is_null())
            .map(|r| {
                let rest = r.iter().enumerate().filter(|(i, _)| *i != k0).map(|(_, v)| v.clone()).collect();
                (r[k0].clone(), rest)
            })
            .collect();
        for src in &cx.sources[1..] {
            let t = src.table;
            let k = key_idx(t)?;
            let mut by_key: HashMap<&Value, Vec<usize>> = HashMap::new();
            for (ri, r) in t.rows.iter().enumerate() {
                if !r[k].is_null() {
                    by_key.entry(&r[k]).or_default().push(ri);
                }
            }
            let mut next = Vec::new();
            for (kv, cells) in joined {
                if let Some(matches) = by_key.get(&kv) {
                    for &ri in matches {
                        let mut row = cells.clone();
                        row.extend(
                            t.rows[ri].iter().enumerate().filter(|(i, _)| *i != k).map(|(_, v)| v.clone()),
                        );
                        next.push((kv.clone(), row));
                    }
                }
            }
            joined = next;
        }
        joined.sort_by(|a, b| a.0.cmp_same_type(&b.0));
        let rows = joined
            .into_iter()
            .map(|(k, rest)| {
                let mut row = Vec::with_capacity(rest.len() + 1);
                row.push(k);
                row.extend(rest);
                row
            })
            .collect();
        Ok(Table::new(schema.clone(), rows))
    }
}
