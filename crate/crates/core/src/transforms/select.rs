use crate::model::{Schema, Table};
use crate::ssvd::Params;

use super::*;

pub struct SelectColumns {
    desc: TransformDescriptor,
}

impl SelectColumns {
    pub fn new() -> Self {
        SelectColumns {
            desc: TransformDescriptor {
                transform_id: "select_columns".into(),
                input_arity: Arity::Exactly(1),
                output_arity: 1,
                param_schema: vec![ParamSpec::new("columns", ParamKind::StringList, true)
                    .constraint(Constraint::NonEmpty)],
                deterministic: true,
                seeded: false,
                granularity: Granularity::ObjectLevel,
                exec: None,
            },
        }
    }
}

fn projected(schema: &Schema, wanted: &[&str], object: &ObjectId) -> Result<Schema, TransformError> {
    let mut cols = Vec::new();
    for name in wanted {
        let expanded = expand_column(schema, name);
        if expanded.is_empty() {
            return Err(TransformError::UnknownColumn {
                column: name.to_string(),
                object_id: object.clone(),
            });
        }
        for n in expanded {
            let c = schema.column(n).expect("expanded from this schema");
            if cols.iter().any(|x: &crate::model::Column| x.name == c.name) {
                return Err(param_err("columns", format!("column {n:?} selected twice")));
            }
            cols.push(c.clone());
        }
    }
    Ok(Schema::new(cols))
}

impl Transform for SelectColumns {
    fn descriptor(&self) -> &TransformDescriptor {
        &self.desc
    }

    fn plan(&self, inputs: &[InputMeta], params: &Params, _seed: u64) -> Result<Vec<SlotPlan>, TransformError> {
        let wanted = get_list(params, "columns")?;
        let input = &inputs[0];
        let used = input.used_schemas(0)?;
        let mut out_schemas = Vec::with_capacity(input.schemas.len());
        let mut map = vec![None; input.schemas.len()];
        for s in used {
            let first = input
                .objects
                .iter()
                .find(|e| e.schema == Some(s))
                .expect("schema is used");
            map[s as usize] = Some(out_schemas.len() as u32);
            out_schemas.push(projected(&input.schemas[s as usize], &wanted, &first.object_id)?);
        }
        Ok(vec![passthrough_plan(
            input,
            out_schemas,
            &|s| s.and_then(|s| map[s as usize]),
            &|r| r,
        )])
    }

    fn compute_object(&self, cx: &ObjectCx<'_>, params: &Params, _seed: u64) -> Result<Table, TransformError> {
        let src = cx.source()?;
        let schema = match cx.schema {
            Some(s) => s.clone(),
            None => projected(&src.table.schema, &get_list(params, "columns")?, src.object_id)?,
        };
        Ok(src.table.project(&schema).expect("projection of own columns"))
    }
}

pub struct SelectLabels {
    desc: TransformDescriptor,
}

impl SelectLabels {
    pub fn new() -> Self {
        SelectLabels {
            desc: TransformDescriptor {
                transform_id: "select_labels".into(),
                input_arity: Arity::Exactly(1),
                output_arity: 1,
                param_schema: vec![
                    ParamSpec::new("key", ParamKind::String, true).constraint(Constraint::NonEmpty),
                    ParamSpec::new("values", ParamKind::StringList, true),
                ],
                deterministic: true,
                seeded: false,
                granularity: Granularity::ObjectLevel,
                exec: None,
            },
        }
    }
}

impl Transform for SelectLabels {
    fn descriptor(&self) -> &TransformDescriptor {
        &self.desc
    }

    fn plan(&self, inputs: &[InputMeta], params: &Params, _seed: u64) -> Result<Vec<SlotPlan>, TransformError> {
        let key = get_str(params, "key")?;
        let values = get_list(params, "values")?;
        let input = &inputs[0];
        let mut objects = Vec::new();
        for (ordinal, e) in input.objects.iter().enumerate() {
            let v = e
                .labels
                .get(key)
                .ok_or_else(|| TransformError::UnknownLabelKey(key.to_string()))?;
            if values.contains(&v.as_str()) {
                objects.push(PlannedObject {
                    id: PlannedId::Keep(e.object_id.clone()),
                    labels: e.labels.clone(),
                    sources: vec![SourceRef { input: 0, ordinal }],
                    segment: None,
                    row_count: e.row_count,
                    schema: e.schema,
                });
            }
        }
        Ok(vec![SlotPlan {
            schemas: input.schemas.clone(),
            objects: PlannedObjects::Listed(objects),
        }])
    }

    fn compute_object(&self, cx: &ObjectCx<'_>, _params: &Params, _seed: u64) -> Result<Table, TransformError> {
        Ok(cx.source()?.table.clone())
    }
}
