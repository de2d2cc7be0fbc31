use crate::model::Table;
use crate::ssvd::Params;

use super::*;

pub struct Window {
    desc: TransformDescriptor,
}

impl Window {
    pub fn new() -> Self {
        Window {
            desc: TransformDescriptor {
                transform_id: "window".into(),
                input_arity: Arity::Exactly(1),
                output_arity: 1,
                param_schema: vec![
                    ParamSpec::new("W", ParamKind::Int, true).constraint(Constraint::AtLeast(1)),
                    ParamSpec::new("stride", ParamKind::Int, false).constraint(Constraint::AtLeast(1)),
                ],
                deterministic: true,
                seeded: false,
                granularity: Granularity::ObjectLevel,
                exec: None,
            },
        }
    }
}

/// Segments of a series of length `len`: `floor((len - w) / stride) + 1`,
/// or 0 when the series is shorter than the window.
pub fn segment_count(len: u64, w: u64, stride: u64) -> u64 {
    if len < w {
        0
    } else {
        (len - w) / stride + 1
    }
}

pub fn window_segment_id(source: &ObjectId, offset: u64) -> ObjectId {
    ObjectId(format!("{}@{offset}", source.as_str()))
}

impl Transform for Window {
    fn descriptor(&self) -> &TransformDescriptor {
        &self.desc
    }

    fn plan(&self, inputs: &[InputMeta], params: &Params, _seed: u64) -> Result<Vec<SlotPlan>, TransformError> {
        let w = get_int(params, "W")? as u64;
        let stride = params.get("stride").and_then(|v| v.as_i64()).unwrap_or(1) as u64;
        let input = &inputs[0];
        let mut runs = Vec::new();
        for (ordinal, e) in input.objects.iter().enumerate() {
            let len = e.row_count.ok_or(TransformError::MetadataUnavailable {
                input: 0,
                what: "row counts",
            })?;
            let segments = segment_count(len, w, stride);
            if segments > 0 {
                runs.push(WindowRun {
                    source_ordinal: ordinal,
                    source_id: e.object_id.clone(),
                    labels: e.labels.clone(),
                    segments,
                    schema: e.schema,
                });
            }
        }
        Ok(vec![SlotPlan {
            schemas: input.schemas.clone(),
            objects: PlannedObjects::Windowed {
                width: w,
                stride,
                runs,
            },
        }])
    }

    fn compute_object(&self, cx: &ObjectCx<'_>, _params: &Params, _seed: u64) -> Result<Table, TransformError> {
        let src = cx.source()?;
        let seg = cx
            .segment
            .ok_or_else(|| TransformError::Internal("window output without segment".into()))?;
        if seg.offset + seg.len > src.table.row_count() as u64 {
            return Err(TransformError::Internal(format!(
                "segment {}+{} exceeds {} rows of {}",
                seg.offset,
                seg.len,
                src.table.row_count(),
                src.object_id
            )));
        }
        Ok(src.table.slice_rows(seg.offset as usize, seg.len as usize))
    }
}
