use crate::model::Table;
use crate::ssvd::Params;

use super::*;

pub struct Partition {
    desc: TransformDescriptor,
}

impl Partition {
    pub fn new() -> Self {
        Partition {
            desc: TransformDescriptor {
                transform_id: "partition".into(),
                input_arity: Arity::Exactly(1),
                output_arity: 3,
                param_schema: ["a", "b", "c"]
                    .iter()
                    .map(|k| ParamSpec::new(k, ParamKind::Int, true).constraint(Constraint::AtLeast(1)))
                    .collect(),
                deterministic: true,
                seeded: true,
                granularity: Granularity::ObjectLevel,
                exec: None,
            },
        }
    }
}

/// Slot sizes for `n` objects: `floor(a·n/100)`, `floor(b·n/100)`, and the
/// remainder.
pub fn slot_sizes(n: usize, a: u32, b: u32) -> [usize; 3] {
    let trn = (a as u128 * n as u128 / 100) as usize;
    let vld = (b as u128 * n as u128 / 100) as usize;
    [trn, vld, n - trn - vld]
}

/// Ordinals (into `ids`) assigned to each slot: ids are sorted, shuffled with
/// the seeded generator, then cut into consecutive runs.
pub fn partition_assignment(ids: &[ObjectId], a: u32, b: u32, seed: u64) -> [Vec<usize>; 3] {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&x, &y| ids[x].cmp(&ids[y]).then(x.cmp(&y)));
    rng::shuffle(&mut rng::seeded(seed), &mut order);
    let [trn, vld, _] = slot_sizes(ids.len(), a, b);
    let tst = order.split_off(trn + vld);
    let vld_part = order.split_off(trn);
    [order, vld_part, tst]
}

impl Transform for Partition {
    fn descriptor(&self) -> &TransformDescriptor {
        &self.desc
    }

    fn check_extra(&self, params: &Params) -> Result<(), TransformError> {
        let sum: i64 = ["a", "b", "c"].iter().map(|k| get_int(params, k)).sum::<Result<_, _>>()?;
        if sum != 100 {
            return Err(param_err("a+b+c", "a+b+c must equal 100"));
        }
        Ok(())
    }

    fn plan(&self, inputs: &[InputMeta], params: &Params, seed: u64) -> Result<Vec<SlotPlan>, TransformError> {
        let input = &inputs[0];
        let ids: Vec<ObjectId> = input.objects.iter().map(|e| e.object_id.clone()).collect();
        let slots = partition_assignment(&ids, get_int(params, "a")? as u32, get_int(params, "b")? as u32, seed);
        Ok(slots
            .into_iter()
            .map(|ordinals| SlotPlan {
                schemas: input.schemas.clone(),
                objects: PlannedObjects::Listed(
                    ordinals
                        .into_iter()
                        .map(|ordinal| {
                            let e = &input.objects[ordinal];
                            PlannedObject {
                                id: PlannedId::Keep(e.object_id.clone()),
                                labels: e.labels.clone(),
                                sources: vec![SourceRef { input: 0, ordinal }],
                                segment: None,
                                row_count: e.row_count,
                                schema: e.schema,
                            }
                        })
                        .collect(),
                ),
            })
            .collect())
    }

    fn compute_object(&self, cx: &ObjectCx<'_>, _params: &Params, _seed: u64) -> Result<Table, TransformError> {
        Ok(cx.source()?.table.clone())
    }
}
