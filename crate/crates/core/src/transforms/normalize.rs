use crate::model::{Column, ColumnType, Schema, Table, Value};
use crate::ssvd::Params;

use super::*;

pub struct Normalize {
    desc: TransformDescriptor,
}

impl Normalize {
    pub fn new() -> Self {
        Normalize {
            desc: TransformDescriptor {
                transform_id: "normalize".into(),
                input_arity: Arity::Exactly(1),
                output_arity: 1,
                param_schema: vec![
                    ParamSpec::new("method", ParamKind::String, true).one_of(&["minmax", "zscore"]),
                    ParamSpec::new("columns", ParamKind::StringList, true).constraint(Constraint::NonEmpty),
                    ParamSpec::new("scope", ParamKind::String, false).one_of(&["per-object", "global"]),
                ],
                deterministic: true,
                seeded: false,
                granularity: Granularity::ObjectLevel,
                exec: None,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Acc {
    n: u64,
    sum: f64,
    min: f64,
    max: f64,
}

impl Acc {
    fn push(&mut self, v: f64) {
        if self.n == 0 {
            self.min = v;
            self.max = v;
        } else {
            self.min = self.min.min(v);
            self.max = self.max.max(v);
        }
        self.n += 1;
        self.sum += v;
    }
}

#[derive(Debug, Clone, Copy)]
enum Method {
    MinMax,
    ZScore,
}

/// Per-column scaling derived from statistics.
#[derive(Debug, Clone, Copy)]
struct Scale {
    center: f64,
    spread: f64,
}

impl Scale {
    fn apply(self, v: f64) -> f64 {
        if self.spread == 0.0 {
            0.0
        } else {
            (v - self.center) / self.spread
        }
    }
}

fn target_columns(schema: &Schema, wanted: &[&str], object: &ObjectId) -> Result<Vec<usize>, TransformError> {
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

fn output_schema(schema: &Schema, targets: &[usize]) -> Schema {
    Schema::new(
        schema
            .columns
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if targets.contains(&i) {
                    Column::new(c.name.clone(), ColumnType::Float64).nullable(c.nullable)
                } else {
                    c.clone()
                }
            })
            .collect(),
    )
}

fn method(params: &Params) -> Method {
    match get_str_or(params, "method", "minmax") {
        "zscore" => Method::ZScore,
        _ => Method::MinMax,
    }
}

fn is_global(params: &Params) -> bool {
    get_str_or(params, "scope", "per-object") == "global"
}

/// Accumulates statistics for the named columns of `t`, keyed by name.
fn accumulate(t: &Table, targets: &[usize], accs: &mut [(String, Acc, f64)]) {
    for &ci in targets {
        let name = &t.schema.columns[ci].name;
        let slot = accs.iter_mut().find(|(n, _, _)| n == name).expect("column registered");
        for v in t.column_values(ci).filter_map(Value::as_f64) {
            slot.1.push(v);
        }
    }
}

fn finish(accs: &[(String, Acc, f64)], m: Method) -> Vec<(String, Scale)> {
    accs.iter()
        .map(|(name, acc, sq)| {
            let scale = match m {
                Method::MinMax => Scale {
                    center: acc.min,
                    spread: acc.max - acc.min,
                },
                Method::ZScore => {
                    let mean = if acc.n == 0 { 0.0 } else { acc.sum / acc.n as f64 };
                    let var = if acc.n == 0 { 0.0 } else { sq / acc.n as f64 };
                    Scale {
                        center: mean,
                        spread: var.sqrt(),
                    }
                }
            };
            (name.clone(), scale)
        })
        .collect()
}

/// Second pass for zscore: sum of squared deviations from the mean.
fn squared_deviations(t: &Table, targets: &[usize], accs: &mut [(String, Acc, f64)]) {
    for &ci in targets {
        let name = &t.schema.columns[ci].name;
        let slot = accs.iter_mut().find(|(n, _, _)| n == name).expect("column registered");
        let mean = if slot.1.n == 0 { 0.0 } else { slot.1.sum / slot.1.n as f64 };
        for v in t.column_values(ci).filter_map(Value::as_f64) {
            slot.2 += (v - mean) * (v - mean);
        }
    }
}

fn register(accs: &mut Vec<(String, Acc, f64)>, t: &Table, targets: &[usize]) {
    for &ci in targets {
        let name = &t.schema.columns[ci].name;
        if !accs.iter().any(|(n, _, _)| n == name) {
            accs.push((name.clone(), Acc::default(), 0.0));
        }
    }
}

fn stats(tables: &[(&Table, Vec<usize>)], m: Method) -> Vec<(String, Scale)> {
    let mut accs = Vec::new();
    for (t, targets) in tables {
        register(&mut accs, t, targets);
        accumulate(t, targets, &mut accs);
    }
    if let Method::ZScore = m {
        for (t, targets) in tables {
            squared_deviations(t, targets, &mut accs);
        }
    }
    finish(&accs, m)
}

fn rescale(t: &Table, targets: &[usize], scales: &[(String, Scale)]) -> Table {
    let schema = output_schema(&t.schema, targets);
    let per_col: Vec<Option<Scale>> = (0..t.schema.len())
        .map(|ci| {
            if targets.contains(&ci) {
                let name = &t.schema.columns[ci].name;
                scales.iter().find(|(n, _)| n == name).map(|(_, s)| *s)
            } else {
                None
            }
        })
        .collect();
    let rows = t
        .rows
        .iter()
        .map(|r| {
            r.iter()
                .zip(&per_col)
                .map(|(v, s)| match (s, v.as_f64()) {
                    (Some(s), Some(x)) => Value::Float(s.apply(x)),
                    _ => v.clone(),
                })
                .collect()
        })
        .collect();
    Table::new(schema, rows)
}

impl Transform for Normalize {
    fn descriptor(&self) -> &TransformDescriptor {
        &self.desc
    }

    fn plan(&self, inputs: &[InputMeta], params: &Params, _seed: u64) -> Result<Vec<SlotPlan>, TransformError> {
        let wanted = get_list(params, "columns")?;
        let input = &inputs[0];
        let mut map = vec![None; input.schemas.len()];
        let mut out = Vec::new();
        for s in input.used_schemas(0)? {
            let first = input.objects.iter().find(|e| e.schema == Some(s)).expect("used");
            let schema = &input.schemas[s as usize];
            let targets = target_columns(schema, &wanted, &first.object_id)?;
            map[s as usize] = Some(out.len() as u32);
            out.push(output_schema(schema, &targets));
        }
        Ok(vec![passthrough_plan(input, out, &|s| s.and_then(|s| map[s as usize]), &|r| r)])
    }

    fn is_object_level(&self, params: &Params) -> bool {
        !is_global(params)
    }

    fn compute_object(&self, cx: &ObjectCx<'_>, params: &Params, _seed: u64) -> Result<Table, TransformError> {
        let src = cx.source()?;
        let targets = target_columns(&src.table.schema, &get_list(params, "columns")?, src.object_id)?;
        let scales = stats(&[(src.table, targets.clone())], method(params));
        Ok(rescale(src.table, &targets, &scales))
    }

    fn compute_dataset(
        &self,
        inputs: &[InputPayload<'_>],
        slots: &[SlotPlan],
        params: &Params,
        seed: u64,
    ) -> Result<Vec<Vec<Table>>, TransformError> {
        if !is_global(params) {
            return compute_per_object(self, inputs, slots, params, seed);
        }
        let wanted = get_list(params, "columns")?;
        let input = &inputs[0];
        let with_targets = input
            .tables
            .iter()
            .zip(&input.meta.objects)
            .map(|(t, e)| Ok((t, target_columns(&t.schema, &wanted, &e.object_id)?)))
            .collect::<Result<Vec<_>, TransformError>>()?;
        let scales = stats(&with_targets, method(params));
        Ok(vec![with_targets
            .iter()
            .map(|(t, targets)| rescale(t, targets, &scales))
            .collect()])
    }
}
