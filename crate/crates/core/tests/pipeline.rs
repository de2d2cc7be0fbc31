use std::collections::BTreeSet;

use vds_core::catalog::{Direction, ObjectEntry, RegisterExplicit, RemoveMode, SearchFilter};
use vds_core::engine::{codec, MaterializeOptions, NodeKind};
use vds_core::fixtures::{self, FARMS, SHARED_COLUMNS};
use vds_core::model::{Column, ColumnType, Labels, Schema, Table, Value};
use vds_core::ssvd::{DatasetKind, DatasetRef, TransformRef, VirtualDatasetSpec};
use vds_core::storage::MemObject;
use vds_core::transforms::slot_sizes;
use vds_core::{Config, DatasetId, DatasetRecord, Error, ObjectId, Workspace};

fn spec(name: &str, inputs: &[DatasetId], t: TransformRef) -> VirtualDatasetSpec {
    VirtualDatasetSpec::new(name, inputs.iter().map(|i| DatasetRef::id(*i)).collect(), t)
}

fn register_farms(ws: &Workspace, rows: usize) -> Vec<DatasetId> {
    fixtures::install_farms(ws.storage(), rows)
        .into_iter()
        .map(|uri| ws.register_explicit(&RegisterExplicit::new(uri)).unwrap().id)
        .collect()
}

struct Fig2 {
    farms: Vec<DatasetId>,
    merged: DatasetId,
    selected: DatasetId,
    splits: Vec<DatasetId>,
}

fn fig2(ws: &Workspace) -> Fig2 {
    let farms = register_farms(ws, 6);
    let merged = ws
        .create_virtual(&spec("farms_merged", &farms, TransformRef::new("merge")), "test")
        .unwrap()
        .id;
    let selected = ws
        .create_virtual(
            &spec(
                "temps",
                &[merged],
                TransformRef::new("select_columns").param("columns", vec!["t", "temp2"]),
            ),
            "test",
        )
        .unwrap()
        .id;
    let part = TransformRef::new("partition")
        .param("a", 70)
        .param("b", 15)
        .param("c", 15)
        .seed(42);
    let splits = (0..3)
        .map(|i| {
            let s = spec(&format!("split{i}"), &[selected], part.clone())
                .with_outputs(&["train", "val", "test"], i);
            ws.create_virtual(&s, "test").unwrap().id
        })
        .collect();
    Fig2 {
        farms,
        merged,
        selected,
        splits,
    }
}

fn ids(ws: &Workspace, id: DatasetId) -> Vec<ObjectId> {
    ws.objects(id).unwrap().into_iter().map(|e| e.object_id).collect()
}

fn csv_of(m: &vds_core::Materialized) -> Vec<(ObjectId, String)> {
    m.objects
        .iter()
        .map(|o| (o.object_id.clone(), o.payload.as_ref().unwrap().to_csv()))
        .collect()
}

#[test]
fn merged_farms_have_95_objects_and_59_columns() {
    let ws = Workspace::in_memory();
    let f = fig2(&ws);
    let merged = ws.get(f.merged).unwrap();
    assert_eq!(merged.object_index.len(), 95);
    assert_eq!(merged.schemas.len(), 1);
    assert_eq!(merged.schemas[0].len(), SHARED_COLUMNS);
    // Every merged object links back to one farm object.
    let farm_objects: usize = FARMS.iter().map(|f| f.objects).sum();
    let links: BTreeSet<(DatasetId, ObjectId)> = merged
        .object_index
        .iter()
        .map(|e| {
            assert_eq!(e.source_links.len(), 1);
            (e.source_links[0].dataset, e.source_links[0].object_id.clone())
        })
        .collect();
    assert_eq!(links.len(), farm_objects);

    let m = ws.materialize(f.selected, MaterializeOptions::default()).unwrap();
    assert_eq!(m.objects.len(), 95);
    for o in &m.objects {
        let names: Vec<&str> = o.payload.as_ref().unwrap().schema.names().collect();
        assert_eq!(names, ["t", "temp2"]);
    }
}

#[test]
fn partition_slots_are_66_14_15_disjoint_and_covering() {
    let ws = Workspace::in_memory();
    let f = fig2(&ws);
    assert_eq!(slot_sizes(95, 70, 15), [66, 14, 15]);
    let slots: Vec<Vec<ObjectId>> = f.splits.iter().map(|s| ids(&ws, *s)).collect();
    assert_eq!(slots.iter().map(Vec::len).collect::<Vec<_>>(), [66, 14, 15]);
    let all: BTreeSet<ObjectId> = slots.iter().flatten().cloned().collect();
    assert_eq!(all.len(), 95);
    assert_eq!(all, ids(&ws, f.selected).into_iter().collect());
}

#[test]
fn test_split_plan_and_cache_contract() {
    let ws = Workspace::in_memory();
    let f = fig2(&ws);
    let test = f.splits[2];
    let plan = ws.resolve(test).unwrap();
    let kinds: Vec<(NodeKind, Option<&str>)> = plan
        .nodes
        .iter()
        .map(|n| (n.kind, n.transform_id.as_deref()))
        .collect();
    assert_eq!(
        kinds,
        [
            (NodeKind::Source, None),
            (NodeKind::Source, None),
            (NodeKind::Source, None),
            (NodeKind::Transform, Some("merge")),
            (NodeKind::Transform, Some("select_columns")),
            (NodeKind::Transform, Some("partition")),
        ]
    );
    for (i, n) in plan.nodes.iter().enumerate() {
        assert!(n.inputs.iter().all(|&j| j < i));
    }

    let first = ws.materialize(test, MaterializeOptions::default()).unwrap();
    assert_eq!(
        (first.stats.nodes_total, first.stats.cache_hits, first.stats.transforms_executed),
        (6, 0, 3)
    );
    assert!(first.stats.bytes_written > 0);
    assert_eq!(first.objects.len(), 15);
    let second = ws.materialize(test, MaterializeOptions::default()).unwrap();
    assert_eq!((second.stats.cache_hits, second.stats.transforms_executed), (3, 0));
    assert_eq!(csv_of(&first), csv_of(&second));
    let forced = ws.materialize(test, MaterializeOptions { force_recompute: true }).unwrap();
    assert_eq!(forced.stats.transforms_executed, 3);
    assert_eq!(csv_of(&first), csv_of(&forced));

    // Siblings share the partition computation.
    let train = ws.materialize(f.splits[0], MaterializeOptions::default()).unwrap();
    assert_eq!((train.stats.cache_hits, train.stats.transforms_executed), (3, 0));
    assert_eq!(train.objects.len(), 66);
    assert_eq!(ws.cache_key(f.splits[0]).unwrap(), ws.cache_key(test).unwrap());
}

#[test]
fn zero_budget_recomputes_with_identical_bytes() {
    let warm = Workspace::open(&Config::in_memory().seeded(1)).unwrap();
    let cold = Workspace::open(&Config::in_memory().seeded(1).budget(0)).unwrap();
    let (fw, fc) = (fig2(&warm), fig2(&cold));
    assert_eq!(fw.splits, fc.splits);
    warm.materialize(fw.splits[1], MaterializeOptions::default()).unwrap();
    let a = warm.materialize(fw.splits[1], MaterializeOptions::default()).unwrap();
    let b = cold.materialize(fc.splits[1], MaterializeOptions::default()).unwrap();
    let c = cold.materialize(fc.splits[1], MaterializeOptions::default()).unwrap();
    assert_eq!(a.stats.transforms_executed, 0);
    assert_eq!((b.stats.transforms_executed, c.stats.transforms_executed), (3, 3));
    assert_eq!(cold.cache_stats().entries, 0);
    assert_eq!(csv_of(&a), csv_of(&b));
    assert_eq!(csv_of(&b), csv_of(&c));
}

#[test]
fn select_labels_keeps_the_35_anomalies() {
    let ws = Workspace::in_memory();
    let f = fig2(&ws);
    let t = TransformRef::new("select_labels")
        .param("key", "status")
        .param("values", vec!["anomaly"]);
    let r = ws.create_virtual(&spec("anomalies", &[f.merged], t), "test").unwrap();
    assert_eq!(r.object_index.len(), 35);
    assert!(r.object_index.iter().all(|e| e.labels["status"] == "anomaly"));
}

#[test]
fn open_object_matches_full_materialization() {
    let ws = Workspace::in_memory();
    let f = fig2(&ws);
    let norm = ws
        .create_virtual(
            &spec(
                "norm",
                &[f.selected],
                TransformRef::new("normalize")
                    .param("method", "minmax")
                    .param("columns", vec!["temp2"])
                    .param("scope", "global"),
            ),
            "test",
        )
        .unwrap()
        .id;
    for id in [f.merged, f.selected, f.splits[2], norm, f.farms[0]] {
        let m = ws.materialize(id, MaterializeOptions::default()).unwrap();
        for o in &m.objects {
            assert_eq!(&ws.open_object(id, &o.object_id).unwrap(), o.payload.as_ref().unwrap());
        }
    }
    // A partitioned object is the pre-partition object, untouched.
    let test = ws.materialize(f.splits[2], MaterializeOptions::default()).unwrap();
    for o in &test.objects {
        assert_eq!(&ws.open_object(f.selected, &o.object_id).unwrap(), o.payload.as_ref().unwrap());
    }
    let missing = ws.open_object(f.merged, &ObjectId::new("nope")).unwrap_err();
    assert_eq!(missing.code(), "OBJECT_NOT_FOUND");
}

fn ten_rows() -> Table {
    Table::new(
        Schema::new(vec![Column::new("t", ColumnType::Int64), Column::new("x", ColumnType::Float64)]),
        (0..10).map(|i| vec![Value::Int(i), Value::Float(i as f64 / 4.0)]).collect(),
    )
}

#[test]
fn window_segment_is_a_verbatim_slice() {
    let ws = Workspace::in_memory();
    ws.storage()
        .mem()
        .put("series", vec![MemObject::from_table("s", &ten_rows(), Labels::new())]);
    let src = ws.register_explicit(&RegisterExplicit::new("mem://series")).unwrap().id;
    let w = ws
        .create_virtual(&spec("win", &[src], TransformRef::new("window").param("W", 4)), "test")
        .unwrap();
    assert_eq!(w.object_index.len(), 7);
    let seg = ws.open_object(w.id, &ObjectId::new("s@4")).unwrap();
    assert_eq!(seg, ten_rows().slice_rows(4, 4));
    let (src_csv, seg_csv) = (ten_rows().to_csv(), seg.to_csv());
    let expected: Vec<&str> = src_csv.lines().skip(5).take(4).collect();
    assert_eq!(seg_csv.lines().skip(1).collect::<Vec<_>>(), expected);
    let m = ws.materialize(w.id, MaterializeOptions::default()).unwrap();
    for (k, o) in m.objects.iter().enumerate() {
        assert_eq!(o.payload.as_ref().unwrap(), &ten_rows().slice_rows(k, 4));
    }
}

#[test]
fn missing_metadata_is_filled_by_materializing_the_input() {
    let ws = Workspace::in_memory();
    let table = |col: &str, k: i64| {
        Table::new(
            Schema::new(vec![Column::new("t", ColumnType::Int64), Column::new(col, ColumnType::Int64)]),
            (0..6).map(|i| vec![Value::Int(i), Value::Int(i * k)]).collect(),
        )
    };
    let left = vec![MemObject::from_table("o1", &table("a", 2), Labels::new())];
    let right = vec![MemObject::from_table("o1", &table("b", 3), Labels::new())];
    ws.storage().mem().put("left", left);
    ws.storage().mem().put("right", right);
    let l = ws.register_explicit(&RegisterExplicit::new("mem://left")).unwrap().id;
    let r = ws.register_explicit(&RegisterExplicit::new("mem://right")).unwrap().id;
    let joined = ws
        .create_virtual(&spec("joined", &[l, r], TransformRef::new("integrate").param("key", "t")), "test")
        .unwrap();
    assert_eq!(ws.get(joined.id).unwrap().object_index.iter().next().unwrap().row_count, None);
    let w = ws
        .create_virtual(&spec("win", &[joined.id], TransformRef::new("window").param("W", 3)), "test")
        .unwrap();
    assert_eq!(w.object_index.len(), 4);
    assert_eq!(ws.get(joined.id).unwrap().object_index.iter().next().unwrap().row_count, Some(6));
    let seg = ws.open_object(w.id, &ObjectId::new("o1@2")).unwrap();
    assert_eq!(seg.schema.names().collect::<Vec<_>>(), ["t", "left.a", "right.b"]);
    assert_eq!(seg.rows[0], vec![Value::Int(2), Value::Int(4), Value::Int(6)]);
}

#[test]
fn diamond_resolves_shared_ancestors_once() {
    let ws = Workspace::in_memory();
    let f = fig2(&ws);
    let a = ws
        .create_virtual(
            &spec("a", &[f.merged], TransformRef::new("select_columns").param("columns", vec!["t", "temp1"])),
            "test",
        )
        .unwrap()
        .id;
    let both = ws
        .create_virtual(&spec("both", &[a, f.selected], TransformRef::new("integrate").param("key", "t")), "test")
        .unwrap()
        .id;
    let plan = ws.resolve(both).unwrap();
    assert_eq!(plan.nodes.len(), 3 + 4);
    assert_eq!(plan.nodes.iter().filter(|n| n.transform_id.as_deref() == Some("merge")).count(), 1);
    let m = ws.materialize(both, MaterializeOptions::default()).unwrap();
    let first = m.objects[0].payload.as_ref().unwrap();
    assert_eq!(first.schema.names().collect::<Vec<_>>(), ["t", "a.temp1", "temps.temp2"]);
}

#[test]
fn cache_keys_track_seeds_and_are_stable() {
    let ws = Workspace::in_memory();
    let f = fig2(&ws);
    assert_eq!(ws.cache_key(f.splits[2]).unwrap(), ws.cache_key(f.splits[2]).unwrap());
    let other = spec(
        "reseeded",
        &[f.selected],
        TransformRef::new("partition").param("a", 70).param("b", 15).param("c", 15).seed(43),
    )
    .with_outputs(&["train", "val", "test"], 2);
    let other = ws.create_virtual(&other, "test").unwrap().id;
    assert_ne!(ws.cache_key(other).unwrap(), ws.cache_key(f.splits[2]).unwrap());
}

#[test]
fn lineage_removal_and_search() {
    let ws = Workspace::in_memory();
    let f = fig2(&ws);
    let back = ws.lineage(f.merged, Direction::Backward, None).unwrap();
    assert_eq!(back.nodes.len(), 4);
    assert_eq!(back.edges.len(), 3);
    assert!(back.edges.iter().all(|e| e.via == "merge" && e.to == f.merged));
    let fwd = ws.lineage(f.merged, Direction::Forward, Some(1)).unwrap();
    assert_eq!(fwd.nodes, [f.merged, f.selected]);

    let found = ws.search(&SearchFilter {
        name: Some("farm".into()),
        ..SearchFilter::default()
    });
    assert_eq!(found.len(), 4);
    let virt = ws.search(&SearchFilter {
        kind: Some(DatasetKind::Virtual),
        transform_id: Some("partition".into()),
        ..SearchFilter::default()
    });
    assert_eq!(virt.iter().map(|r| r.id).collect::<Vec<_>>(), f.splits);

    let err = ws.remove(f.merged, RemoveMode::Restrict).unwrap_err();
    assert_eq!(err.code_and_status(), ("HAS_DEPENDENTS", 409));
    let removed = ws.remove(f.merged, RemoveMode::Cascade).unwrap();
    let mut expected = vec![f.merged, f.selected];
    expected.extend(&f.splits);
    assert_eq!(removed, expected);
    assert!(ws.catalog().check_integrity().is_empty());
    assert!(matches!(ws.get(f.selected), Err(Error::Catalog(_))));
    assert_eq!(ws.catalog().get_any(f.selected).unwrap().status, vds_core::catalog::Status::Removed);
}

fn records_without_time(ws: &Workspace) -> Vec<DatasetRecord> {
    ws.catalog()
        .records()
        .into_iter()
        .map(|mut r| {
            r.created_at = Default::default();
            r
        })
        .collect()
}

#[test]
fn file_sources_persist_and_detect_changes() {
    let data = tempfile::tempdir().unwrap();
    let src = tempfile::tempdir().unwrap();
    let farms = fixtures::write_farms(src.path(), 4).unwrap();
    let (test_id, before, catalog_before) = {
        let ws = Workspace::open(&Config::at(data.path()).seeded(7)).unwrap();
        let mut ids = Vec::new();
        for (uri, labels) in &farms {
            let req = RegisterExplicit {
                labels_file: Some(labels.display().to_string()),
                ..RegisterExplicit::new(uri.clone())
            };
            let r = ws.register_explicit(&req).unwrap();
            assert!(r.object_index.iter().all(|e: ObjectEntry| e.labels.contains_key("status")));
            ids.push(r.id);
        }
        let merged = ws.create_virtual(&spec("m", &ids, TransformRef::new("merge")), "t").unwrap().id;
        let part = spec(
            "test",
            &[merged],
            TransformRef::new("partition").param("a", 70).param("b", 15).param("c", 15).seed(42),
        )
        .with_outputs(&["train", "val", "test"], 2);
        let test = ws.create_virtual(&part, "t").unwrap().id;
        let m = ws.materialize(test, MaterializeOptions::default()).unwrap();
        (test, csv_of(&m), records_without_time(&ws))
    };
    let ws = Workspace::open(&Config::at(data.path()).seeded(7)).unwrap();
    let mut after_records = ws.catalog().records();
    assert_eq!(records_without_time(&ws), catalog_before);
    after_records.retain(|r| r.id == test_id);
    assert_eq!(after_records[0].object_index.len(), 15);
    let warm = ws.materialize(test_id, MaterializeOptions::default()).unwrap();
    assert_eq!((warm.stats.cache_hits, warm.stats.transforms_executed), (2, 0));
    assert_eq!(csv_of(&warm), before);

    // Rewriting one source file changes the key and fails verification.
    let key_before = ws.cache_key(test_id).unwrap();
    let farm_dir = src.path().join(FARMS[0].name);
    let victim = std::fs::read_dir(&farm_dir).unwrap().next().unwrap().unwrap().path();
    let mut text = std::fs::read_to_string(&victim).unwrap();
    text.push_str(&text.lines().last().unwrap().to_string());
    text.push('\n');
    std::fs::write(&victim, text).unwrap();
    assert_ne!(ws.cache_key(test_id).unwrap(), key_before);
    let err = ws.materialize(test_id, MaterializeOptions::default()).unwrap_err();
    assert_eq!(err.code(), "SOURCE_CHANGED");
}

#[test]
fn corrupt_cache_entries_are_reported_and_dropped() {
    let data = tempfile::tempdir().unwrap();
    let ws = Workspace::open(&Config::at(data.path())).unwrap();
    let f = fig2(&ws);
    ws.materialize(f.selected, MaterializeOptions::default()).unwrap();
    let key = ws.cache_key(f.selected).unwrap().to_string();
    let path = data.path().join("cache").join(&key[..2]).join(format!("{key}.bin"));
    let mut bytes = std::fs::read(&path).unwrap();
    assert!(codec::decode(&bytes).is_ok());
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    std::fs::write(&path, bytes).unwrap();
    let err = ws.materialize(f.selected, MaterializeOptions::default()).unwrap_err();
    assert_eq!(err.code(), "CACHE_CORRUPT");
    let again = ws.materialize(f.selected, MaterializeOptions::default()).unwrap();
    assert_eq!(again.stats.transforms_executed, 1);
}
