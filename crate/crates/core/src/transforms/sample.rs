use crate::ids::object_seed;
use crate::model::{Schema, Table};
use crate::ssvd::Params;

use super::*;

const MAX_GRID_POINTS: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleStrategy {
    UniformGrid,
    UniformRandom,
    LatinHypercube,
}

impl SampleStrategy {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "uniform_grid" => SampleStrategy::UniformGrid,
            "uniform_random" => SampleStrategy::UniformRandom,
            "latin_hypercube" => SampleStrategy::LatinHypercube,
            _ => return None,
        })
    }

    fn without_replacement(self) -> bool {
        !matches!(self, SampleStrategy::UniformGrid)
    }
}

pub struct Sample {
    desc: TransformDescriptor,
}

impl Sample {
    pub fn new() -> Self {
        Sample {
            desc: TransformDescriptor {
                transform_id: "sample".into(),
                input_arity: Arity::Exactly(1),
                output_arity: 1,
                param_schema: vec![
                    ParamSpec::new("strategy", ParamKind::String, true).one_of(&[
                        "uniform_grid",
                        "uniform_random",
                        "latin_hypercube",
                    ]),
                    ParamSpec::new("n", ParamKind::Int, true).constraint(Constraint::AtLeast(1)),
                    ParamSpec::new("columns", ParamKind::StringList, true).constraint(Constraint::NonEmpty),
                ],
                deterministic: true,
                seeded: true,
                granularity: Granularity::ObjectLevel,
                exec: None,
            },
        }
    }
}

fn strategy(params: &Params) -> Result<SampleStrategy, TransformError> {
    SampleStrategy::parse(get_str(params, "strategy")?).ok_or_else(|| param_err("strategy", "unknown strategy"))
}

fn domain_columns(schema: &Schema, wanted: &[&str], object: &ObjectId) -> Result<Vec<usize>, TransformError> {
    wanted
        .iter()
        .map(|name| {
            let i = schema.index_of(name).ok_or_else(|| TransformError::UnknownColumn {
                column: name.to_string(),
                object_id: object.clone(),
            })?;
            if schema.columns[i].ty.is_numeric() {
                Ok(i)
            } else {
                Err(TransformError::NonNumericColumn(name.to_string()))
            }
        })
        .collect()
}

/// Smallest `g` with `g^d >= n`.
pub(crate) fn grid_side(n: u64, d: u32) -> u64 {
    let mut g = 1u64;
    while g.checked_pow(d).is_some_and(|p| p < n) {
        g += 1;
    }
    g
}

/// Rows with a value in every domain column, and their coordinates scaled to
/// `[0, 1]` per column.
fn normalized_points(t: &Table, cols: &[usize]) -> (Vec<usize>, Vec<Vec<f64>>) {
    let mut rows = Vec::new();
    let mut pts: Vec<Vec<f64>> = Vec::new();
    for (ri, r) in t.rows.iter().enumerate() {
        let p: Option<Vec<f64>> = cols.iter().map(|&c| r[c].as_f64()).collect();
        if let Some(p) = p {
            rows.push(ri);
            pts.push(p);
        }
    }
    for j in 0..cols.len() {
        let lo = pts.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max);
        for p in &mut pts {
            p[j] = if hi > lo { (p[j] - lo) / (hi - lo) } else { 0.0 };
        }
    }
    (rows, pts)
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the point nearest `target` among those accepted by `keep`;
/// ties go to the lowest index.
fn nearest(pts: &[Vec<f64>], target: &[f64], keep: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in pts.iter().enumerate() {
        if !keep(i) {
            continue;
        }
        let d = dist2(p, target);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Stratum of a normalized coordinate among `n` equal bins.
pub(crate) fn stratum(v: f64, n: usize) -> usize {
    ((v * n as f64).floor() as usize).min(n - 1)
}

fn grid_rows(pts: &[Vec<f64>], n: u64) -> Result<Vec<usize>, TransformError> {
    let d = pts.first().map_or(1, |p| p.len()) as u32;
    let g = grid_side(n, d);
    let total = g.checked_pow(d).filter(|&t| t <= MAX_GRID_POINTS).ok_or_else(|| {
        param_err("n", format!("grid of {g}^{d} points is too large"))
    })?;
    let axis: Vec<f64> = if g == 1 {
        vec![0.5]
    } else {
        (0..g).map(|k| k as f64 / (g - 1) as f64).collect()
    };
    let mut picked = Vec::new();
    let mut target = vec![0.0; d as usize];
    for flat in 0..total {
        let mut rem = flat;
        for slot in target.iter_mut().rev() {
            *slot = axis[(rem % g) as usize];
            rem /= g;
        }
        if let Some(i) = nearest(pts, &target, |_| true) {
            picked.push(i);
        }
    }
    picked.sort_unstable();
    picked.dedup();
    Ok(picked)
}

fn random_rows(count: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..count).collect();
    rng::partial_shuffle(&mut rng::seeded(seed), &mut idx, n);
    idx.truncate(n);
    idx.sort_unstable();
    idx
}

fn lhs_rows(pts: &[Vec<f64>], n: usize, seed: u64) -> Vec<usize> {
    let d = pts.first().map_or(0, |p| p.len());
    let mut g = rng::seeded(seed);
    let perms: Vec<Vec<usize>> = (0..d)
        .map(|_| {
            let mut p: Vec<usize> = (0..n).collect();
            rng::shuffle(&mut g, &mut p);
            p
        })
        .collect();
    let strata: Vec<Vec<usize>> = pts.iter().map(|p| p.iter().map(|&v| stratum(v, n)).collect()).collect();
    let mut used = vec![false; pts.len()];
    let mut picked = Vec::with_capacity(n);
    for k in 0..n {
        let cell: Vec<usize> = perms.iter().map(|p| p[k]).collect();
        let target: Vec<f64> = cell.iter().map(|&s| (s as f64 + rng::unit(&mut g)) / n as f64).collect();
        let choice = nearest(pts, &target, |i| !used[i] && strata[i] == cell)
            .or_else(|| nearest(pts, &target, |i| !used[i]))
            .expect("n does not exceed the candidate count");
        used[choice] = true;
        picked.push(choice);
    }
    picked.sort_unstable();
    picked
}

impl Transform for Sample {
    fn descriptor(&self) -> &TransformDescriptor {
        &self.desc
    }

    fn plan(&self, inputs: &[InputMeta], params: &Params, _seed: u64) -> Result<Vec<SlotPlan>, TransformError> {
        let strategy = strategy(params)?;
        let n = get_int(params, "n")? as u64;
        let wanted = get_list(params, "columns")?;
        let input = &inputs[0];
        for s in input.used_schemas(0)? {
            let first = input.objects.iter().find(|e| e.schema == Some(s)).expect("used");
            domain_columns(&input.schemas[s as usize], &wanted, &first.object_id)?;
        }
        if strategy.without_replacement() {
            for e in &input.objects {
                let rows = e.row_count.ok_or(TransformError::MetadataUnavailable {
                    input: 0,
                    what: "row counts",
                })?;
                if n > rows {
                    return Err(param_err(
                        "n",
                        format!("n={n} exceeds the {rows} rows of object {}", e.object_id),
                    ));
                }
            }
        }
        let row_count = |r: Option<u64>| match strategy {
            SampleStrategy::UniformGrid => None,
            _ => r.map(|_| n),
        };
        Ok(vec![passthrough_plan(input, input.schemas.clone(), &|s| s, &row_count)])
    }

    fn compute_object(&self, cx: &ObjectCx<'_>, params: &Params, seed: u64) -> Result<Table, TransformError> {
        let src = cx.source()?;
        let strategy = strategy(params)?;
        let n = get_int(params, "n")? as usize;
        let cols = domain_columns(&src.table.schema, &get_list(params, "columns")?, src.object_id)?;
        let seed = object_seed(seed, src.object_id);
        let rows: Vec<usize> = match strategy {
            SampleStrategy::UniformRandom => {
                if n > src.table.row_count() {
                    return Err(param_err("n", format!("n={n} exceeds {} rows", src.table.row_count())));
                }
                random_rows(src.table.row_count(), n, seed)
            }
            SampleStrategy::UniformGrid | SampleStrategy::LatinHypercube => {
                let (candidates, pts) = normalized_points(src.table, &cols);
                let local = if strategy == SampleStrategy::UniformGrid {
                    grid_rows(&pts, n as u64)?
                } else {
                    if n > pts.len() {
                        return Err(param_err(
                            "n",
                            format!("n={n} exceeds {} rows with complete coordinates", pts.len()),
                        ));
                    }
                    lhs_rows(&pts, n, seed)
                };
                local.into_iter().map(|i| candidates[i]).collect()
            }
        };
        Ok(Table::new(
            src.table.schema.clone(),
            rows.into_iter().map(|i| src.table.rows[i].clone()).collect(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;
    use crate::model::{ColumnType::*, Value};

    fn sample(strategy: &str, n: i64, t: Table, cols: Vec<&str>, seed: u64) -> Result<Table, TransformError> {
        let out = run(
            "sample",
            &[input("d", vec![obj("o", t)])],
            params(vec![("strategy", strategy.into()), ("n", n.into()), ("columns", cols.into())]),
            seed,
        )?;
        Ok(out[0][0].payload.clone().unwrap())
    }

    fn square_grid(m: i64) -> Table {
        let mut rows = Vec::new();
        for i in 0..m {
            for j in 0..m {
                rows.push(vec![Value::Int(i), Value::Int(j)]);
            }
        }
        table(&[("x", Int64), ("y", Int64)], rows)
    }

    #[test]
    fn grid_side_is_ceiling_root() {
        assert_eq!(grid_side(4, 1), 4);
        assert_eq!(grid_side(4, 2), 2);
        assert_eq!(grid_side(5, 2), 3);
        assert_eq!(grid_side(1, 3), 1);
        assert_eq!(grid_side(27, 3), 3);
    }

    #[test]
    fn random_full_draw_is_identity() {
        let t = table(&[("x", Int64)], ints(&[5, 3, 9, 1]));
        assert_eq!(sample("uniform_random", 4, t.clone(), vec!["x"], 7).unwrap(), t);
        assert!(matches!(
            sample("uniform_random", 5, t, vec!["x"], 7),
            Err(TransformError::Param { key, .. }) if key == "n"
        ));
    }

    #[test]
    fn grid_over_one_column_matches_linear_scan() {
        let values: Vec<i64> = (0..100).map(|i| (i * 37) % 100).collect();
        let t = table(&[("x", Int64)], ints(&values));
        let got = sample("uniform_grid", 4, t.clone(), vec!["x"], 0).unwrap();
        // Oracle: grid points 0, 1/3, 2/3, 1 over [0, 99]; nearest row by scan.
        let mut want: Vec<usize> = Vec::new();
        for k in 0..4 {
            let g = 99.0 * k as f64 / 3.0;
            let mut best = 0;
            for i in 0..values.len() {
                if (values[i] as f64 - g).abs() < (values[best] as f64 - g).abs() {
                    best = i;
                }
            }
            want.push(best);
        }
        want.sort();
        assert_eq!(got.rows, want.iter().map(|&i| t.rows[i].clone()).collect::<Vec<_>>());
    }

    #[test]
    fn latin_hypercube_hits_each_stratum_once() {
        let t = square_grid(12);
        for seed in 0..5 {
            let got = sample("latin_hypercube", 4, t.clone(), vec!["x", "y"], seed).unwrap();
            assert_eq!(got.row_count(), 4);
            for c in 0..2 {
                let mut hit: Vec<usize> = got
                    .column_values(c)
                    .map(|v| stratum(v.as_f64().unwrap() / 11.0, 4))
                    .collect();
                hit.sort();
                assert_eq!(hit, [0, 1, 2, 3], "seed {seed}, column {c}");
            }
        }
    }

    #[test]
    fn rows_keep_original_order() {
        let t = table(&[("x", Int64)], ints(&(0..50).rev().collect::<Vec<_>>()));
        let got = sample("uniform_random", 10, t, vec!["x"], 3).unwrap();
        let xs: Vec<i64> = got.rows.iter().map(|r| match r[0] { Value::Int(v) => v, _ => unreachable!() }).collect();
        assert!(xs.windows(2).all(|w| w[0] > w[1]));
    }
}
