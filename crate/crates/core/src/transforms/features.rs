use crate::model::{Column, ColumnType, Schema, Table, Value};
use crate::ssvd::Params;

use super::*;

const STATS: [&str; 5] = ["mean", "std", "min", "max", "range"];

pub struct ExtractFeatures {
    desc: TransformDescriptor,
}

impl ExtractFeatures {
    pub fn new() -> Self {
        ExtractFeatures {
            desc: TransformDescriptor {
                transform_id: "extract_features".into(),
                input_arity: Arity::Exactly(1),
                output_arity: 1,
                param_schema: vec![
                    ParamSpec::new("features", ParamKind::StringList, true).one_of(&STATS),
                    ParamSpec::new("columns", ParamKind::StringList, true).constraint(Constraint::NonEmpty),
                ],
                deterministic: true,
                seeded: false,
                granularity: Granularity::ObjectLevel,
                exec: None,
            },
        }
    }
}

fn source_columns(schema: &Schema, wanted: &[&str], object: &ObjectId) -> Result<Vec<usize>, TransformError> {
    let mut idx = Vec::new();
    for name in wanted {
        let expanded = expand_column(schema, name);
        if expanded.is_empty() {
            return Err(TransformError::UnknownColumn {
                column: name.to_string(),
                object_id: object.clone(),
            });
        }
        for n in expanded {
            let i = schema.index_of(n).expect("expanded from this schema");
            if !schema.columns[i].ty.is_numeric() {
                return Err(TransformError::NonNumericColumn(n.to_string()));
            }
            if !idx.contains(&i) {
                idx.push(i);
            }
        }
    }
    Ok(idx)
}

fn feature_schema(schema: &Schema, cols: &[usize], stats: &[&str]) -> Schema {
    let mut out = Vec::with_capacity(cols.len() * stats.len());
    for &c in cols {
        for s in stats {
            out.push(Column::new(format!("{}_{s}", schema.columns[c].name), ColumnType::Float64).nullable(true));
        }
    }
    Schema::new(out)
}

fn statistic(values: &[f64], stat: &str) -> Value {
    if values.is_empty() {
        return Value::Null;
    }
    let n = values.len() as f64;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.iter().sum::<f64>() / n;
    Value::Float(match stat {
        "mean" => mean,
        "std" => (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt(),
        "min" => min,
        "max" => max,
        _ => max - min,
    })
}

impl Transform for ExtractFeatures {
    fn descriptor(&self) -> &TransformDescriptor {
        &self.desc
    }

    fn check_extra(&self, params: &Params) -> Result<(), TransformError> {
        if get_list(params, "features")?.is_empty() {
            return Err(param_err("features", "must not be empty"));
        }
        Ok(())
    }

    fn plan(&self, inputs: &[InputMeta], params: &Params, _seed: u64) -> Result<Vec<SlotPlan>, TransformError> {
        let stats = get_list(params, "features")?;
        let wanted = get_list(params, "columns")?;
        let input = &inputs[0];
        let mut map = vec![None; input.schemas.len()];
        let mut out = Vec::new();
        for s in input.used_schemas(0)? {
            let first = input.objects.iter().find(|e| e.schema == Some(s)).expect("used");
            let schema = &input.schemas[s as usize];
            let cols = source_columns(schema, &wanted, &first.object_id)?;
            let fs = feature_schema(schema, &cols, &stats);
            map[s as usize] = Some(match out.iter().position(|x| x == &fs) {
                Some(i) => i as u32,
                None => {
                    out.push(fs);
                    (out.len() - 1) as u32
                }
            });
        }
        Ok(vec![passthrough_plan(input, out, &|s| s.and_then(|s| map[s as usize]), &|_| Some(1))])
    }

    fn compute_object(&self, cx: &ObjectCx<'_>, params: &Params, _seed: u64) -> Result<Table, TransformError> {
        let src = cx.source()?;
        let stats = get_list(params, "features")?;
        let cols = source_columns(&src.table.schema, &get_list(params, "columns")?, src.object_id)?;
        let mut row = Vec::with_capacity(cols.len() * stats.len());
        for &c in &cols {
            let values: Vec<f64> = src.table.column_values(c).filter_map(Value::as_f64).collect();
            for s in &stats {
                row.push(statistic(&values, s));
            }
        }
        Ok(Table::new(feature_schema(&src.table.schema, &cols, &stats), vec![row]))
    }
}
