//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any fails.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde_yaml::{Mapping, Value as Yaml};
use sha2::{Digest, Sha256};

use vds_cli::client::{Client, ClientError};
use vds_cli::server::{spawn, AppState, ExplicitRequest};
use vds_core::catalog::{DatasetRecord, Direction, RegisterExplicit, RemoveMode};
use vds_core::fixtures::{self, pipelines::random_pipeline, FARMS};
use vds_core::model::{Column, ColumnType, DataObject, Labels, Schema, Table, Value};
use vds_core::ssvd::{
    canonical_serialize, parse_spec, spec_to_yaml, DatasetKind, DatasetRef, ParamValue, RefTarget, TransformRef,
    VirtualDatasetSpec,
};
use vds_core::storage::{file_uri, MemObject};
use vds_core::transforms::Registry;
use vds_core::{Config, DatasetId, MaterializeOptions, ObjectId, Workspace};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn spec(name: &str, inputs: &[DatasetId], t: TransformRef) -> VirtualDatasetSpec {
    VirtualDatasetSpec::new(name, inputs.iter().map(|i| DatasetRef::id(*i)).collect(), t)
}

fn partition(a: i64, b: i64, c: i64, seed: u64) -> TransformRef {
    TransformRef::new("partition").param("a", a).param("b", b).param("c", c).seed(seed)
}

// ---------------------------------------------------------------------------
// 1. virtual chains equal eager application

fn floats_close(a: f64, b: f64) -> bool {
    if a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()) {
        return true;
    }
    let scale = a.abs().max(b.abs());
    (a - b).abs() <= 1e-12 * scale
}

fn cells_match(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Float(x), Value::Float(y)) => floats_close(*x, *y),
        _ => a == b,
    }
}

fn objects_match(expected: &[DataObject], actual: &[DataObject]) -> Result<(), String> {
    ensure!(expected.len() == actual.len(), "{} objects, expected {}", actual.len(), expected.len());
    for (e, a) in expected.iter().zip(actual) {
        ensure!(e.object_id == a.object_id, "object {} where {} was expected", a.object_id, e.object_id);
        ensure!(e.labels == a.labels, "labels of {} differ", a.object_id);
        let (et, at) = (e.payload.as_ref().unwrap(), a.payload.as_ref().unwrap());
        ensure!(et.schema == at.schema, "schema of {} differs", a.object_id);
        ensure!(et.rows.len() == at.rows.len(), "row count of {} differs", a.object_id);
        for (er, ar) in et.rows.iter().zip(&at.rows) {
            ensure!(
                er.iter().zip(ar).all(|(x, y)| cells_match(x, y)),
                "cell mismatch in {}: {er:?} vs {ar:?}",
                a.object_id
            );
        }
    }
    Ok(())
}

fn eager_equivalence() -> Outcome {
    let reg = Registry::new();
    let (mut steps, mut max_depth, mut max_rows, mut max_cols) = (0, 0, 0, 0);
    let mut used = BTreeSet::new();
    for seed in 0..200u64 {
        let p = random_pipeline(1000 + seed, &format!("q{seed}_"), 6, 5, &reg);
        let ws = Workspace::open(&Config::in_memory().seeded(seed)).map_err(err)?;
        let ids = p.declare(&ws).map_err(|e| format!("pipeline {seed}: {e}"))?;
        // Merge keys objects freshly; the eager side adopts the catalog's ids.
        let mut fresh = |node: usize| {
            let step = &p.steps[node - p.sources.len()];
            (step.transform.transform_id == "merge")
                .then(|| ws.objects(ids[node]).unwrap().into_iter().map(|e| e.object_id).collect())
        };
        let expected = p.replay(&reg, &mut fresh).map_err(|e| format!("pipeline {seed}: {e}"))?;
        for (node, id) in ids.iter().enumerate() {
            let m = ws.materialize(*id, MaterializeOptions::default()).map_err(err)?;
            objects_match(&expected[node], &m.objects)
                .map_err(|e| format!("pipeline {seed}, {}: {e}", p.node_name(node)))?;
            for o in &m.objects {
                let t = o.payload.as_ref().unwrap();
                max_rows = max_rows.max(t.row_count());
                max_cols = max_cols.max(t.schema.len());
            }
        }
        steps += p.steps.len();
        max_depth = max_depth.max(*p.depth.iter().max().unwrap());
        used.extend(p.steps.iter().map(|s| s.transform.transform_id.clone()));
    }
    ensure!(max_depth <= 5, "depth {max_depth} exceeds 5");
    ensure!(max_rows <= 20 && max_cols <= 8, "tables up to {max_rows}x{max_cols}");
    ensure!(used.len() == 9, "only {} built-ins exercised", used.len());
    Ok(format!(
        "200 pipelines, {steps} steps, max depth {max_depth}, tables <= {max_rows}x{max_cols}, {} built-ins",
        used.len()
    ))
}

// ---------------------------------------------------------------------------
// 2. three farms, merge, seeded split, across restarts

struct Service {
    child: Child,
    url: String,
}

impl Service {
    fn start(data: &Path) -> Result<Self, String> {
        let port = std::net::TcpListener::bind("127.0.0.1:0")
            .and_then(|l| l.local_addr())
            .map_err(err)?
            .port();
        let addr = format!("127.0.0.1:{port}");
        let child = Command::new(env!("CARGO_BIN_EXE_vd"))
            .args(["serve", "--addr", &addr])
            .arg("--data-dir")
            .arg(data)
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .map_err(err)?;
        let deadline = Instant::now() + Duration::from_secs(20);
        while std::net::TcpStream::connect(&addr).is_err() {
            ensure!(Instant::now() < deadline, "service on {addr} did not come up");
            std::thread::sleep(Duration::from_millis(25));
        }
        Ok(Service {
            child,
            url: format!("http://{addr}"),
        })
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn slot_digests(client: &Client, slots: &[DatasetId]) -> Result<Vec<Vec<(String, String)>>, String> {
    slots
        .iter()
        .map(|s| {
            client
                .objects(*s)
                .map_err(err)?
                .into_iter()
                .map(|e| {
                    let csv = client.object(*s, e.object_id.as_str()).map_err(err)?;
                    Ok((e.object_id.to_string(), digest(csv.as_bytes())))
                })
                .collect()
        })
        .collect()
}

fn farm_split() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let sources = fixtures::write_farms(&dir.path().join("farms"), 6).map_err(err)?;
    let data = dir.path().join("data");
    let svc = Service::start(&data)?;
    let client = Client::new(&svc.url, None).map_err(err)?;

    let mut farms = Vec::new();
    for (uri, labels) in &sources {
        farms.push(
            client
                .register(&ExplicitRequest {
                    uri: uri.clone(),
                    labels_file: Some(labels.to_string_lossy().into_owned()),
                    ..Default::default()
                })
                .map_err(err)?,
        );
    }
    let mut name_sets = Vec::new();
    for (f, farm) in farms.iter().zip(&FARMS) {
        let r = client.get(*f).map_err(err)?;
        ensure!(r.object_index.len() == farm.objects, "{} has {} objects", farm.name, r.object_index.len());
        ensure!(r.schemas.len() == 1 && r.schemas[0].len() == farm.columns, "{} schema width", farm.name);
        name_sets.push(r.schemas[0].names().map(str::to_string).collect::<BTreeSet<_>>());
    }
    let widths: Vec<usize> = name_sets.iter().map(BTreeSet::len).collect();
    ensure!(widths == [80, 90, 100], "farm widths {widths:?}");
    let shared = name_sets[1..]
        .iter()
        .fold(name_sets[0].clone(), |acc, s| acc.intersection(s).cloned().collect());
    ensure!(shared.len() == 59, "farms share {} columns", shared.len());

    let (merged, _) = client
        .create_virtual(&canonical_serialize(&spec("farms", &farms, TransformRef::new("merge"))), None)
        .map_err(err)?;
    let m = client.get(merged).map_err(err)?;
    ensure!(m.object_index.len() == 95, "merged has {} objects", m.object_index.len());
    let merged_cols: BTreeSet<String> = m.schemas[0].names().map(str::to_string).collect();
    ensure!(m.schemas.len() == 1 && merged_cols == shared, "merged columns are not the shared 59");

    let mut slots = Vec::new();
    for (i, name) in ["train", "val", "test"].iter().enumerate() {
        let s = spec(name, &[merged], partition(70, 15, 15, 42)).with_outputs(&["train", "val", "test"], i);
        slots.push(client.create_virtual(&canonical_serialize(&s), None).map_err(err)?.0);
    }
    let n = 95usize;
    let oracle = [n * 70 / 100, n * 15 / 100, n - n * 70 / 100 - n * 15 / 100];
    let before = slot_digests(&client, &slots)?;
    let sizes: Vec<usize> = before.iter().map(Vec::len).collect();
    ensure!(sizes == oracle && sizes == [66, 14, 15], "slot sizes {sizes:?}");
    let all: BTreeSet<&String> = before.iter().flatten().map(|(id, _)| id).collect();
    ensure!(all.len() == 95, "slots overlap");
    let merged_ids: BTreeSet<String> = client
        .objects(merged)
        .map_err(err)?
        .into_iter()
        .map(|e| e.object_id.to_string())
        .collect();
    ensure!(all.into_iter().cloned().collect::<BTreeSet<_>>() == merged_ids, "slots do not cover the merge");

    drop(client);
    drop(svc);
    let svc = Service::start(&data)?;
    let client = Client::new(&svc.url, None).map_err(err)?;
    let after = slot_digests(&client, &slots)?;
    ensure!(after == before, "slots changed across a restart");
    for s in &slots {
        client.materialize(*s, true).map_err(err)?;
    }
    ensure!(slot_digests(&client, &slots)? == before, "forced recomputation changed the slots");
    Ok("95 objects x 59 columns; slots (66, 14, 15) disjoint, covering, stable over a restart".into())
}

// ---------------------------------------------------------------------------
// 3. window footprint

fn dir_size(p: &Path) -> u64 {
    walk(p).iter().filter_map(|f| f.metadata().ok()).map(|m| m.len()).sum()
}

fn walk(p: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    if let Ok(rd) = std::fs::read_dir(p) {
        for e in rd.flatten() {
            let path = e.path();
            if path.is_dir() {
                out.extend(walk(&path));
            } else {
                out.push(path);
            }
        }
    }
    out
}

fn window_footprint() -> Outcome {
    const ROWS: usize = 100_000;
    const W: usize = 500;
    let dir = tempfile::tempdir().map_err(err)?;
    let series = fixtures::series_table(ROWS);
    let src_dir = dir.path().join("series");
    std::fs::create_dir_all(&src_dir).map_err(err)?;
    let csv = series.to_csv();
    std::fs::write(src_dir.join("s.csv"), &csv).map_err(err)?;
    let ws = Workspace::open(&Config::at(dir.path().join("data"))).map_err(err)?;
    let src = ws.register_explicit(&RegisterExplicit::new(file_uri(&src_dir))).map_err(err)?.id;

    let catalog_dir = dir.path().join("data").join("catalog");
    let before = dir_size(&catalog_dir);
    let s = spec("segments", &[src], TransformRef::new("window").param("W", W as i64).param("stride", 1));
    let w = ws.create_virtual(&s, "acceptance").map_err(err)?.id;
    let footprint = dir_size(&catalog_dir) - before + canonical_serialize(&s).len() as u64;

    // Size of every segment written out, from prefix sums over row lengths.
    let mut lines = csv.split_inclusive('\n');
    let header = lines.next().unwrap().len() as u64;
    let mut prefix = vec![0u64];
    for l in lines {
        prefix.push(prefix.last().unwrap() + l.len() as u64);
    }
    ensure!(prefix.len() == ROWS + 1, "series has {} rows", prefix.len() - 1);
    let segments = ROWS - W + 1;
    let full: u64 = (0..segments).map(|k| header + prefix[k + W] - prefix[k]).sum();

    let entries = ws.objects(w).map_err(err)?;
    ensure!(entries.len() == segments, "{} segments, expected {segments}", entries.len());
    let mut rng = StdRng::seed_from_u64(3);
    let mut probes = vec![0, 1, segments / 2, segments - 1];
    probes.extend((0..16).map(|_| rng.gen_range(0..segments)));
    for k in probes {
        let seg = ws.open_object(w, &ObjectId::new(format!("s@{k}"))).map_err(err)?;
        ensure!(seg == series.slice_rows(k, W), "segment {k} is not rows {k}..{}", k + W);
        let bytes = seg.to_csv().len() as u64;
        ensure!(bytes == header + prefix[k + W] - prefix[k], "segment {k} size disagrees with the prefix sums");
    }
    let ratio = footprint as f64 / full as f64;
    ensure!(ratio < 0.01, "footprint {footprint} B is {:.4}% of {full} B", ratio * 100.0);
    Ok(format!(
        "{segments} segments; catalog+spec {footprint} B vs materialized {full} B ({:.6}%)",
        ratio * 100.0
    ))
}

// ---------------------------------------------------------------------------
// 4. cache contract

fn fig2(ws: &Workspace) -> Result<Vec<DatasetId>, String> {
    let farms: Vec<DatasetId> = fixtures::install_farms(ws.storage(), 5)
        .into_iter()
        .map(|uri| ws.register_explicit(&RegisterExplicit::new(uri)).map(|r| r.id))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let merged = ws.create_virtual(&spec("m", &farms, TransformRef::new("merge")), "a").map_err(err)?.id;
    let sel = ws
        .create_virtual(
            &spec("s", &[merged], TransformRef::new("select_columns").param("columns", vec!["t", "temp2"])),
            "a",
        )
        .map_err(err)?
        .id;
    let mut ids = farms;
    ids.extend([merged, sel]);
    for i in 0..3 {
        let s = spec("p", &[sel], partition(70, 15, 15, 42)).with_outputs(&["train", "val", "test"], i);
        ids.push(ws.create_virtual(&s, "a").map_err(err)?.id);
    }
    Ok(ids)
}

fn csv_bytes(m: &vds_core::Materialized) -> Vec<(ObjectId, String)> {
    m.objects
        .iter()
        .map(|o| (o.object_id.clone(), o.payload.as_ref().unwrap().to_csv()))
        .collect()
}

fn check_cache(build: &dyn Fn(&Workspace) -> Result<Vec<DatasetId>, String>, seed: u64) -> Result<usize, String> {
    let warm = Workspace::open(&Config::in_memory().seeded(seed)).map_err(err)?;
    let cold = Workspace::open(&Config::in_memory().seeded(seed).budget(0)).map_err(err)?;
    let ids = build(&warm)?;
    ensure!(build(&cold)? == ids, "the two workspaces allocated different ids");
    let last = *ids.last().unwrap();
    warm.materialize(last, MaterializeOptions::default()).map_err(err)?;
    let mut checked = 0;
    for id in &ids {
        let nodes = warm.resolve(*id).map_err(err)?.transform_nodes();
        if nodes == 0 {
            continue;
        }
        warm.materialize(*id, MaterializeOptions::default()).map_err(err)?;
        let again = warm.materialize(*id, MaterializeOptions::default()).map_err(err)?;
        ensure!(
            again.stats.transforms_executed == 0 && again.stats.cache_hits == nodes as u64,
            "{id}: second run executed {} and hit {} of {nodes}",
            again.stats.transforms_executed,
            again.stats.cache_hits
        );
        let uncached = cold.materialize(*id, MaterializeOptions::default()).map_err(err)?;
        ensure!(csv_bytes(&again) == csv_bytes(&uncached), "{id}: zero-budget output differs");
        checked += 1;
    }
    ensure!(cold.cache_stats().entries == 0, "zero budget kept entries");
    Ok(checked)
}

fn cache_contract() -> Outcome {
    let mut checked = check_cache(&fig2, 11)?;
    let reg = Registry::new();
    for seed in 0..50u64 {
        let p = random_pipeline(5000 + seed, "c_", 6, 5, &reg);
        checked += check_cache(&|ws: &Workspace| p.declare(ws).map_err(err), seed)?;
    }
    Ok(format!("{checked} datasets: warm runs all hits, zero-budget bytes identical"))
}

// ---------------------------------------------------------------------------
// 5. lineage integrity under random operations

#[derive(Clone)]
struct Node {
    inputs: Vec<DatasetId>,
    active: bool,
}

fn dependents_closure(model: &BTreeMap<DatasetId, Node>, root: DatasetId) -> BTreeSet<DatasetId> {
    let mut out = BTreeSet::from([root]);
    let mut frontier = vec![root];
    while let Some(x) = frontier.pop() {
        for (id, n) in model {
            if n.active && n.inputs.contains(&x) && out.insert(*id) {
                frontier.push(*id);
            }
        }
    }
    out
}

fn audit_graph(ws: &Workspace, model: &BTreeMap<DatasetId, Node>) -> Result<(), String> {
    let problems = ws.catalog().check_integrity();
    ensure!(problems.is_empty(), "catalog reports {problems:?}");
    let records = ws.catalog().records();
    let active: BTreeMap<DatasetId, &DatasetRecord> =
        records.iter().filter(|r| r.is_active()).map(|r| (r.id, r)).collect();
    let expected: BTreeSet<DatasetId> = model.iter().filter(|(_, n)| n.active).map(|(id, _)| *id).collect();
    ensure!(active.keys().copied().collect::<BTreeSet<_>>() == expected, "active set diverged from the model");
    // 0 unvisited, 1 on stack, 2 done.
    let mut color: HashMap<DatasetId, u8> = HashMap::new();
    fn visit(
        id: DatasetId,
        active: &BTreeMap<DatasetId, &DatasetRecord>,
        color: &mut HashMap<DatasetId, u8>,
    ) -> Result<bool, String> {
        match color.get(&id) {
            Some(1) => return Err(format!("cycle through {id}")),
            Some(2) => return Ok(true),
            _ => {}
        }
        let r = active.get(&id).ok_or_else(|| format!("dangling reference to {id}"))?;
        color.insert(id, 1);
        let rooted = match r.kind {
            DatasetKind::Explicit => r.inputs.is_empty(),
            DatasetKind::Virtual => {
                let mut ok = !r.inputs.is_empty();
                for i in &r.inputs {
                    ok &= visit(*i, active, color)?;
                }
                ok
            }
        };
        color.insert(id, 2);
        Ok(rooted)
    }
    for id in active.keys() {
        ensure!(visit(*id, &active, &mut color)?, "{id} has no explicit root");
    }
    Ok(())
}

fn lineage_integrity() -> Outcome {
    let ws = Workspace::open(&Config::in_memory().seeded(21)).map_err(err)?;
    let schema = Schema::new(vec![Column::new("t", ColumnType::Int64), Column::new("x", ColumnType::Float64)]);
    for s in 0..4 {
        let objects = (0..3)
            .map(|k| {
                let t = Table::new(schema.clone(), vec![vec![Value::Int(k), Value::Float(s as f64 + 0.5)]]);
                MemObject::from_table(&format!("o{k}"), &t, Labels::new())
            })
            .collect();
        ws.storage().mem().put(&format!("src{s}"), objects);
    }
    let mut rng = StdRng::seed_from_u64(99);
    let mut model: BTreeMap<DatasetId, Node> = BTreeMap::new();
    let (mut created, mut refused, mut removed) = (0, 0, 0);
    for op in 0..1000 {
        let live: Vec<DatasetId> = model.iter().filter(|(_, n)| n.active).map(|(id, _)| *id).collect();
        let roll = rng.gen_range(0..100);
        if live.is_empty() || roll < 15 {
            let uri = format!("mem://src{}", rng.gen_range(0..4));
            let id = ws.register_explicit(&RegisterExplicit::new(uri)).map_err(err)?.id;
            model.insert(
                id,
                Node {
                    inputs: vec![],
                    active: true,
                },
            );
        } else if roll < 60 {
            let live: Vec<DatasetId> = live
                .into_iter()
                .filter(|id| !ws.objects(*id).map(|o| o.is_empty()).unwrap_or(true))
                .collect();
            if live.is_empty() {
                continue;
            }
            let (t, inputs): (TransformRef, Vec<DatasetId>) = match rng.gen_range(0..3) {
                0 => (
                    TransformRef::new("select_columns").param("columns", vec!["t", "x"]),
                    vec![*live.choose(&mut rng).unwrap()],
                ),
                1 => (
                    TransformRef::new("merge"),
                    (0..rng.gen_range(2..=3)).map(|_| *live.choose(&mut rng).unwrap()).collect(),
                ),
                _ => (partition(50, 25, 25, op), vec![*live.choose(&mut rng).unwrap()]),
            };
            let mut s = spec("v", &inputs, t);
            if s.transform.transform_id == "partition" {
                s = s.with_outputs(&["a", "b", "c"], rng.gen_range(0..3));
            }
            let id = ws.create_virtual(&s, "a").map_err(err)?.id;
            model.insert(
                id,
                Node {
                    inputs,
                    active: true,
                },
            );
            created += 1;
        } else {
            let target = *live.choose(&mut rng).unwrap();
            let closure = dependents_closure(&model, target);
            if rng.gen_bool(0.6) {
                match ws.remove(target, RemoveMode::Restrict) {
                    Ok(gone) => {
                        ensure!(closure.len() == 1, "restrict removal of {target} succeeded despite dependents");
                        ensure!(gone == [target], "restrict removal returned {gone:?}");
                        model.get_mut(&target).unwrap().active = false;
                        removed += 1;
                    }
                    Err(e) => {
                        ensure!(closure.len() > 1, "restrict removal of a leaf failed: {e}");
                        ensure!(e.code() == "HAS_DEPENDENTS", "restrict removal failed with {}", e.code());
                        refused += 1;
                    }
                }
            } else {
                let gone = ws.remove(target, RemoveMode::Cascade).map_err(err)?;
                ensure!(
                    gone.iter().copied().collect::<BTreeSet<_>>() == closure && gone.len() == closure.len(),
                    "cascade removed {} datasets, expected {}",
                    gone.len(),
                    closure.len()
                );
                ensure!(gone[0] == target, "cascade did not start at the target");
                for g in gone {
                    model.get_mut(&g).unwrap().active = false;
                }
                removed += closure.len();
            }
        }
        audit_graph(&ws, &model).map_err(|e| format!("after operation {op}: {e}"))?;
    }
    ensure!(refused > 0, "no restrict removal ever met dependents");
    Ok(format!(
        "1000 operations ({created} virtual creations, {removed} removals, {refused} refused with HAS_DEPENDENTS)"
    ))
}

// ---------------------------------------------------------------------------
// 6. spec round trip over a corpus

fn text(rng: &mut StdRng) -> String {
    const PIECES: [&str; 12] = [
        "farm", " data", ": colon", " # hash", "'quote'", "\"dq\"", "Δt", "\nsecond line", "- dash", "yes", "null", "0x1F",
    ];
    (0..rng.gen_range(0..4)).map(|_| *PIECES.choose(rng).unwrap()).collect()
}

fn corpus_spec(rng: &mut StdRng, k: usize) -> VirtualDatasetSpec {
    let n_inputs = rng.gen_range(1..=3);
    let inputs = (0..n_inputs)
        .map(|i| match rng.gen_range(0..3) {
            0 => DatasetRef::id(DatasetId::from_u128(rng.gen())),
            1 => DatasetRef {
                target: RefTarget::Uri(format!("file:///data/set{k}_{i}")),
                kind: Some(DatasetKind::Explicit),
            },
            _ => DatasetRef {
                target: RefTarget::Id(DatasetId::from_u128(rng.gen())),
                kind: Some(DatasetKind::Virtual),
            },
        })
        .collect();
    let cols = |rng: &mut StdRng| -> ParamValue {
        let all = ["t", "temp1", "temp2", "s04", "value"];
        let n = rng.gen_range(1..=3);
        all.choose_multiple(rng, n).copied().collect::<Vec<_>>().into()
    };
    let (t, outputs): (TransformRef, Vec<&str>) = match k % 10 {
        0 => (TransformRef::new("merge"), vec!["out"]),
        1 => (TransformRef::new("select_columns").param("columns", cols(rng)), vec!["out"]),
        2 => (
            TransformRef::new("select_labels").param("key", "status").param("values", vec!["anomaly"]),
            vec!["out"],
        ),
        3 => (
            partition(rng.gen_range(1..90), 5, 5, rng.gen()),
            vec!["train", "val", "test"],
        ),
        4 => (
            TransformRef::new("window").param("W", rng.gen_range(1..1000i64)).param("stride", 1),
            vec!["segments"],
        ),
        5 => (
            TransformRef::new("normalize")
                .param("method", "zscore")
                .param("scope", "global")
                .param("columns", cols(rng)),
            vec!["out"],
        ),
        6 => (
            TransformRef::new("sample")
                .param("strategy", "latin_hypercube")
                .param("n", rng.gen_range(1..50i64))
                .param("columns", cols(rng))
                .seed(rng.gen()),
            vec!["out"],
        ),
        7 => (
            TransformRef::new("extract_features")
                .param("features", vec!["mean", "max"])
                .param("columns", cols(rng)),
            vec!["features"],
        ),
        8 => (
            TransformRef::new("integrate").param("key", "t").param("names", vec!["a", "b"]),
            vec!["out"],
        ),
        _ => (
            TransformRef::new("custom_plugin")
                .param("factor", rng.gen_range(-8..8) as f64 * 0.125)
                .param("flag", rng.gen_bool(0.5))
                .param("label", text(rng).as_str()),
            vec!["out"],
        ),
    };
    let mut s = VirtualDatasetSpec::new(format!("corpus_{k}"), inputs, t);
    s.spec_version = if k.is_multiple_of(3) { "ssvd/1.2".into() } else { "ssvd/1".into() };
    s.description = text(rng);
    s.outputs = outputs.iter().map(|o| o.to_string()).collect();
    s.output_index = rng.gen_range(0..outputs.len());
    if rng.gen_bool(0.6) {
        s.metadata.insert(
            "labels".into(),
            serde_yaml::from_str(&format!("{{team: t{k}, stage: raw, version: {k}}}")).unwrap(),
        );
        s.metadata.insert("notes".into(), Yaml::String(text(rng)));
        s.metadata
            .insert("owners".into(), serde_yaml::from_str("[ana, {name: bo, since: 2021}]").unwrap());
    }
    s
}

fn shuffled(v: &Yaml, rng: &mut StdRng) -> Yaml {
    match v {
        Yaml::Mapping(m) => {
            let mut pairs: Vec<(Yaml, Yaml)> = m.iter().map(|(k, v)| (k.clone(), shuffled(v, rng))).collect();
            pairs.shuffle(rng);
            Yaml::Mapping(pairs.into_iter().collect::<Mapping>())
        }
        Yaml::Sequence(s) => Yaml::Sequence(s.iter().map(|x| shuffled(x, rng)).collect()),
        other => other.clone(),
    }
}

fn spec_corpus() -> Outcome {
    let mut rng = StdRng::seed_from_u64(6);
    let mut permutations = 0;
    for k in 0..50 {
        let original = corpus_spec(&mut rng, k);
        let doc = spec_to_yaml(&original);
        // Every third document is written as JSON, which is also YAML.
        let source = if k % 3 == 1 {
            serde_json::to_string_pretty(&doc).map_err(err)?
        } else {
            serde_yaml::to_string(&doc).map_err(err)?
        };
        let parsed = parse_spec(&source).map_err(|e| format!("spec {k}: {e}"))?;
        ensure!(parsed == original, "spec {k} did not survive its first parse");
        let canonical = canonical_serialize(&parsed);
        let reparsed = parse_spec(&canonical).map_err(|e| format!("spec {k} canonical form: {e}"))?;
        ensure!(reparsed == parsed, "spec {k}: parse(canonical(parse(x))) != parse(x)");
        ensure!(canonical_serialize(&reparsed) == canonical, "spec {k}: canonical form not a fixed point");
        for _ in 0..4 {
            let text = serde_yaml::to_string(&shuffled(&doc, &mut rng)).map_err(err)?;
            let again = parse_spec(&text).map_err(|e| format!("spec {k} reordered: {e}"))?;
            ensure!(canonical_serialize(&again).as_bytes() == canonical.as_bytes(), "spec {k}: key order leaked");
            permutations += 1;
        }
    }
    Ok(format!("50 specs, {permutations} key-order permutations, canonical bytes stable"))
}

// ---------------------------------------------------------------------------
// 7. external plugins

#[cfg(unix)]
fn plugins() -> Outcome {
    use std::os::unix::fs::PermissionsExt;
    let dir = tempfile::tempdir().map_err(err)?;
    let pdir = dir.path().join("plugins");
    std::fs::create_dir_all(&pdir).map_err(err)?;
    for (name, body) in [("ident.sh", "cat"), ("crash.sh", "cat >/dev/null; echo 'boom' >&2; exit 3")] {
        let p = pdir.join(name);
        std::fs::write(&p, format!("#!/bin/sh\n{body}\n")).map_err(err)?;
        std::fs::set_permissions(&p, std::fs::Permissions::from_mode(0o755)).map_err(err)?;
    }
    std::fs::write(pdir.join("ident.yaml"), "id: ident\nexec: ident.sh\ninput_arity: 1\noutput_arity: 1\n").map_err(err)?;
    std::fs::write(pdir.join("crash.yaml"), "id: crash\nexec: crash.sh\ninput_arity: 1\noutput_arity: 1\n").map_err(err)?;

    let mut cfg = Config::at(dir.path().join("data"));
    cfg.plugin_dir = Some(pdir.clone());
    let ws = Workspace::open(&cfg).map_err(err)?;
    let uris = fixtures::install_farms(ws.storage(), 7);
    let farm = ws.register_explicit(&RegisterExplicit::new(&uris[0])).map_err(err)?.id;
    let ident = ws.create_virtual(&spec("same", &[farm], TransformRef::new("ident")), "a").map_err(err)?.id;
    let m = ws.materialize(ident, MaterializeOptions::default()).map_err(err)?;
    ensure!(m.objects.len() == FARMS[0].objects, "identity produced {} objects", m.objects.len());
    for (k, o) in m.objects.iter().enumerate() {
        let id = fixtures::object_id(&FARMS[0], k);
        ensure!(o.object_id.as_str() == id, "object {} out of place", o.object_id);
        let source = fixtures::event_table(0, k, 7).to_csv();
        ensure!(o.payload.as_ref().unwrap().to_csv() == source, "{id} changed through the identity plugin");
        let single = ws.open_object(ident, &o.object_id).map_err(err)?;
        ensure!(single.to_csv() == source, "{id} differs when opened alone");
    }

    let entries = ws.cache_stats().entries;
    let crash = ws.create_virtual(&spec("boom", &[farm], TransformRef::new("crash")), "a").map_err(err)?.id;
    let key = ws.cache_key(crash).map_err(err)?;
    match ws.materialize(crash, MaterializeOptions::default()) {
        Err(e) => ensure!(e.code() == "PLUGIN_CRASHED", "crash surfaced as {}", e.code()),
        Ok(_) => return Err("crashing plugin materialized".into()),
    }
    ensure!(!ws.engine().cache().contains(&key), "crashed node left a cache entry");
    ensure!(ws.cache_stats().entries == entries, "cache grew after the crash");
    let key_dir = dir.path().join("data").join("cache").join(&key.to_string()[..2]);
    ensure!(!key_dir.join(format!("{key}.bin")).exists(), "crashed node left a file");
    Ok(format!("identity plugin byte-exact over {} objects; crash -> PLUGIN_CRASHED, no cache entry", m.objects.len()))
}

#[cfg(not(unix))]
fn plugins() -> Outcome {
    Err("plugin scripts need a unix shell".into())
}

// ---------------------------------------------------------------------------
// 8. HTTP and library sessions agree

#[derive(Debug, PartialEq)]
struct SessionLog {
    ids: Vec<DatasetId>,
    objects: Vec<(String, String)>,
    lineage: vds_core::catalog::LineageGraph,
    refused: String,
    removed: Vec<DatasetId>,
    records: Vec<DatasetRecord>,
}

fn normalized(mut records: Vec<DatasetRecord>) -> Vec<DatasetRecord> {
    for r in &mut records {
        r.created_at = chrono::DateTime::UNIX_EPOCH;
    }
    records.sort_by_key(|r| r.seq);
    records
}

fn http_session(ws: Workspace) -> Result<SessionLog, String> {
    let uris = fixtures::install_farms(ws.storage(), 4);
    let state = Arc::new(AppState::new(Arc::new(ws), None, None).map_err(err)?);
    let server = spawn(state.clone(), "127.0.0.1:0").map_err(err)?;
    let c = Client::new(&server.base_url(), None).map_err(err)?;
    let mut ids = Vec::new();
    for uri in &uris {
        ids.push(
            c.register(&ExplicitRequest {
                uri: uri.clone(),
                ..Default::default()
            })
            .map_err(err)?,
        );
    }
    let create = |s: VirtualDatasetSpec| c.create_virtual(&canonical_serialize(&s), None).map(|r| r.0).map_err(err);
    let merged = create(spec("merged", &ids[..3], TransformRef::new("merge")))?;
    let sel = create(spec("temps", &[merged], TransformRef::new("select_columns").param("columns", vec!["t", "temp1", "temp2"])))?;
    let test = create(spec("test", &[sel], partition(70, 15, 15, 42)).with_outputs(&["train", "val", "test"], 2))?;
    ids.extend([merged, sel, test]);
    c.materialize(test, false).map_err(err)?;
    let mut objects = Vec::new();
    for e in c.objects(test).map_err(err)? {
        let csv = c.object(test, e.object_id.as_str()).map_err(err)?;
        objects.push((e.object_id.to_string(), digest(csv.as_bytes())));
    }
    let lineage = c.lineage(test, Direction::Backward, None).map_err(err)?;
    let refused = match c.remove(sel, RemoveMode::Restrict) {
        Err(ClientError::Api(e)) => e.code,
        other => return Err(format!("restrict removal over http: {other:?}")),
    };
    let removed = c.remove(merged, RemoveMode::Cascade).map_err(err)?;
    drop(server);
    let records = normalized(state.workspace().catalog().records());
    Ok(SessionLog {
        ids,
        objects,
        lineage,
        refused,
        removed,
        records,
    })
}

fn library_session(ws: Workspace) -> Result<SessionLog, String> {
    let uris = fixtures::install_farms(ws.storage(), 4);
    let who = "anonymous";
    let mut ids = Vec::new();
    for uri in &uris {
        let mut req = RegisterExplicit::new(uri.clone());
        req.creator = who.into();
        ids.push(ws.register_explicit(&req).map_err(err)?.id);
    }
    let create = |s: VirtualDatasetSpec| ws.create_virtual(&s, who).map(|r| r.id).map_err(err);
    let merged = create(spec("merged", &ids[..3], TransformRef::new("merge")))?;
    let sel = create(spec("temps", &[merged], TransformRef::new("select_columns").param("columns", vec!["t", "temp1", "temp2"])))?;
    let test = create(spec("test", &[sel], partition(70, 15, 15, 42)).with_outputs(&["train", "val", "test"], 2))?;
    ids.extend([merged, sel, test]);
    ws.materialize(test, MaterializeOptions::default()).map_err(err)?;
    let mut objects = Vec::new();
    for e in ws.objects(test).map_err(err)? {
        let csv = ws.open_object(test, &e.object_id).map_err(err)?.to_csv();
        objects.push((e.object_id.to_string(), digest(csv.as_bytes())));
    }
    let lineage = ws.lineage(test, Direction::Backward, None).map_err(err)?;
    let refused = match ws.remove(sel, RemoveMode::Restrict) {
        Err(e) => e.code().to_string(),
        Ok(r) => return Err(format!("restrict removal succeeded: {r:?}")),
    };
    let removed = ws.remove(merged, RemoveMode::Cascade).map_err(err)?;
    let records = normalized(ws.catalog().records());
    Ok(SessionLog {
        ids,
        objects,
        lineage,
        refused,
        removed,
        records,
    })
}

fn api_equivalence() -> Outcome {
    let cfg = Config::in_memory().seeded(808);
    let via_http = http_session(Workspace::open(&cfg).map_err(err)?)?;
    let via_lib = library_session(Workspace::open(&cfg).map_err(err)?)?;
    ensure!(via_http.objects.len() == 15, "test split has {} objects", via_http.objects.len());
    ensure!(via_http.refused == "HAS_DEPENDENTS", "restrict removal refused with {}", via_http.refused);
    ensure!(via_http.ids == via_lib.ids, "dataset ids differ");
    ensure!(via_http.objects == via_lib.objects, "object digests differ");
    ensure!(via_http.lineage == via_lib.lineage, "lineage differs");
    ensure!(via_http.removed == via_lib.removed, "removals differ");
    ensure!(via_http.records == via_lib.records, "catalog state differs");
    Ok(format!(
        "12 steps; {} records, {} object digests identical",
        via_lib.records.len(),
        via_lib.objects.len()
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 8] = [
        ("virtual chains equal eager application", Duration::from_secs(60), eager_equivalence),
        ("farm merge and seeded split", Duration::from_secs(10), farm_split),
        ("window dataset footprint", Duration::from_secs(30), window_footprint),
        ("cache contract", Duration::from_secs(120), cache_contract),
        ("lineage integrity", Duration::from_secs(120), lineage_integrity),
        ("spec round trip", Duration::from_secs(30), spec_corpus),
        ("external transform protocol", Duration::from_secs(30), plugins),
        ("HTTP and library sessions agree", Duration::from_secs(60), api_equivalence),
    ];
    let filter: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if filter.is_some_and(|f| f != n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(_) if took > *limit => Err(format!("took {took:.1?}, limit {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail} [{took:.2?}]"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {why} [{took:.2?}]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
