use crate::model::{common_columns, Schema, Table};
use crate::ssvd::Params;

use super::*;

pub struct Merge {
    desc: TransformDescriptor,
}

impl Merge {
    pub fn new() -> Self {
        Merge {
            desc: TransformDescriptor {
                transform_id: "merge".into(),
                input_arity: Arity::AtLeast(2),
                output_arity: 1,
                param_schema: vec![ParamSpec::new("columns", ParamKind::StringList, false)
                    .constraint(Constraint::NonEmpty)],
                deterministic: true,
                seeded: false,
                granularity: Granularity::ObjectLevel,
                exec: None,
            },
        }
    }
}

/// The merged schema: common columns of every object schema, or the
/// explicit `columns` list when given.
fn merged_schema(inputs: &[InputMeta], params: &Params) -> Result<Schema, TransformError> {
    let mut all: Vec<&Schema> = Vec::new();
    for (i, input) in inputs.iter().enumerate() {
        for s in input.used_schemas(i)? {
            all.push(&input.schemas[s as usize]);
        }
    }
    let common = common_columns(&all);
    let columns = match params.get("columns").and_then(|v| v.as_str_list()) {
        None => common.columns,
        Some(wanted) => wanted
            .iter()
            .map(|name| {
                common
                    .columns
                    .iter()
                    .find(|c| c.name == *name)
                    .cloned()
                    .ok_or_else(|| param_err("columns", format!("{name:?} is not common to every input")))
            })
            .collect::<Result<_, _>>()?,
    };
    if columns.is_empty() {
        return Err(TransformError::NoCommonColumns);
    }
    Ok(Schema::new(columns))
}

impl Transform for Merge {
    fn descriptor(&self) -> &TransformDescriptor {
        &self.desc
    }

    fn plan(&self, inputs: &[InputMeta], params: &Params, _seed: u64) -> Result<Vec<SlotPlan>, TransformError> {
        let schema = merged_schema(inputs, params)?;
        let mut objects = Vec::new();
        for (i, input) in inputs.iter().enumerate() {
            for (ordinal, e) in input.objects.iter().enumerate() {
                objects.push(PlannedObject {
                    id: PlannedId::Fresh,
                    labels: e.labels.clone(),
                    sources: vec![SourceRef { input: i, ordinal }],
                    segment: None,
                    row_count: e.row_count,
                    schema: Some(0),
                });
            }
        }
        Ok(vec![SlotPlan {
            schemas: vec![schema],
            objects: PlannedObjects::Listed(objects),
        }])
    }

    fn compute_object(&self, cx: &ObjectCx<'_>, _params: &Params, _seed: u64) -> Result<Table, TransformError> {
        let src = cx.source()?;
        let schema = cx.out_schema()?;
        src.table.project(schema).ok_or_else(|| TransformError::UnknownColumn {
            column: schema
                .names()
                .find(|n| src.table.schema.index_of(n).is_none())
                .unwrap_or_default()
                .to_string(),
            object_id: src.object_id.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;
    use crate::model::{ColumnType::*, Value};

    #[test]
    fn intersection_in_first_input_order() {
        let a1 = table(&[("t", Int64), ("x", Float64), ("y", Float64)], vec![vec![Value::Int(1), Value::Float(0.5), Value::Float(9.0)]]);
        let a2 = table(&[("t", Int64), ("x", Float64), ("y", Float64)], vec![]);
        let b1 = table(&[("x", Float64), ("t", Int64), ("z", Float64)], vec![vec![Value::Float(2.5), Value::Int(7), Value::Float(0.0)]]);
        let out = run(
            "merge",
            &[input("A", vec![obj("a1", a1), obj("a2", a2)]), input("B", vec![obj("b1", b1)])],
            Params::new(),
            0,
        )
        .unwrap();
        assert_eq!(out.len(), 1);
        let objs = &out[0];
        assert_eq!(objs.len(), 3);
        for o in objs {
            let t = o.payload.as_ref().unwrap();
            assert_eq!(t.schema.names().collect::<Vec<_>>(), ["t", "x"]);
        }
        assert_eq!(objs[2].payload.as_ref().unwrap().rows, vec![vec![Value::Int(7), Value::Float(2.5)]]);
        let mut ids: Vec<_> = objs.iter().map(|o| o.object_id.clone()).collect();
        ids.dedup();
        assert_eq!(ids.len(), 3);
        assert!(ids.iter().all(|id| !["a1", "a2", "b1"].contains(&id.as_str())));
    }

    #[test]
    fn conflicting_types_are_excluded_and_empty_is_an_error() {
        let a = table(&[("t", Int64), ("x", Float64)], vec![]);
        let b = table(&[("t", Float64), ("x", Float64)], vec![]);
        let out = run("merge", &[input("A", vec![obj("a", a.clone())]), input("B", vec![obj("b", b)])], Params::new(), 0).unwrap();
        assert_eq!(out[0][0].payload.as_ref().unwrap().schema.names().collect::<Vec<_>>(), ["x"]);

        let c = table(&[("q", Int64)], vec![]);
        let err = run("merge", &[input("A", vec![obj("a", a)]), input("C", vec![obj("c", c)])], Params::new(), 0).unwrap_err();
        assert_eq!(err, TransformError::NoCommonColumns);
    }

    #[test]
    fn explicit_columns_override() {
        let a = table(&[("t", Int64), ("x", Float64), ("y", Float64)], vec![]);
        let b = table(&[("y", Float64), ("t", Int64), ("x", Float64)], vec![]);
        let p = params(vec![("columns", vec!["y", "t"].into())]);
        let out = run("merge", &[input("A", vec![obj("a", a.clone())]), input("B", vec![obj("b", b.clone())])], p, 0).unwrap();
        assert_eq!(out[0][1].payload.as_ref().unwrap().schema.names().collect::<Vec<_>>(), ["y", "t"]);
        let p = params(vec![("columns", vec!["nope"].into())]);
        assert!(matches!(
            run("merge", &[input("A", vec![obj("a", a)]), input("B", vec![obj("b", b)])], p, 0),
            Err(TransformError::Param { .. })
        ));
    }
}
