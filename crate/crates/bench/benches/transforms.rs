use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use vds_core::fixtures::{self, FARMS};
use vds_core::ssvd::{canonical_serialize, parse_spec, DatasetRef, TransformRef, VirtualDatasetSpec};
use vds_core::transforms::{apply, EagerInput, Registry};
use vds_core::{DataObject, DatasetId, IdGen, ObjectId, Table};

fn farm_input(farm: usize, rows: usize) -> EagerInput {
    let f = &FARMS[farm];
    EagerInput {
        name: f.name.to_string(),
        objects: (0..f.objects)
            .map(|k| DataObject {
                object_id: ObjectId::new(fixtures::object_id(f, k)),
                payload: Some(fixtures::event_table(farm, k, rows)),
                labels: fixtures::event_labels(f, k),
                source_link: None,
            })
            .collect(),
    }
}

fn run(c: &mut Criterion, group: &str, t: TransformRef, inputs: &[EagerInput]) {
    let reg = Registry::new();
    let transform = reg.get(&t.transform_id).unwrap();
    let ids = IdGen::seeded(1);
    c.bench_function(group, |b| {
        b.iter(|| apply(transform.as_ref(), black_box(inputs), &t.params, t.effective_seed(), &ids).unwrap())
    });
}

fn builtins(c: &mut Criterion) {
    let farms: Vec<EagerInput> = (0..3).map(|i| farm_input(i, 50)).collect();
    run(c, "merge/3 farms", TransformRef::new("merge"), &farms);
    let one = &farms[..1];
    run(
        c,
        "select_columns/3 of 80",
        TransformRef::new("select_columns").param("columns", vec!["t", "temp1", "temp2"]),
        one,
    );
    run(
        c,
        "partition/70-15-15",
        TransformRef::new("partition").param("a", 70).param("b", 15).param("c", 15).seed(42),
        one,
    );
    run(
        c,
        "normalize/zscore global",
        TransformRef::new("normalize")
            .param("method", "zscore")
            .param("scope", "global")
            .param("columns", vec!["temp1", "temp2"]),
        one,
    );
    run(
        c,
        "extract_features/mean max",
        TransformRef::new("extract_features")
            .param("features", vec!["mean", "max"])
            .param("columns", vec!["temp1", "temp2"]),
        one,
    );
}

fn window(c: &mut Criterion) {
    let reg = Registry::new();
    let t = reg.get("window").unwrap();
    let ids = IdGen::seeded(1);
    let mut g = c.benchmark_group("window");
    for rows in [1_000usize, 10_000] {
        let input = [EagerInput {
            name: "s".into(),
            objects: vec![DataObject {
                object_id: ObjectId::new("s"),
                payload: Some(fixtures::series_table(rows)),
                labels: Default::default(),
                source_link: None,
            }],
        }];
        let r = TransformRef::new("window").param("W", 100).param("stride", 10);
        g.throughput(Throughput::Elements(rows as u64));
        g.bench_with_input(BenchmarkId::from_parameter(rows), &input, |b, input| {
            b.iter(|| apply(t.as_ref(), input, &r.params, 0, &ids).unwrap())
        });
    }
    g.finish();
}

fn csv(c: &mut Criterion) {
    let table = fixtures::series_table(10_000);
    let text = table.to_csv();
    let mut g = c.benchmark_group("csv");
    g.throughput(Throughput::Bytes(text.len() as u64));
    g.bench_function("write 10k rows", |b| b.iter(|| black_box(&table).to_csv()));
    g.bench_function("parse 10k rows", |b| b.iter(|| Table::from_csv(black_box(text.as_bytes())).unwrap()));
    g.finish();
}

fn spec(c: &mut Criterion) {
    let s = VirtualDatasetSpec::new(
        "bench",
        vec![DatasetRef::id(DatasetId::from_u128(7)), DatasetRef::id(DatasetId::from_u128(8))],
        TransformRef::new("normalize")
            .param("method", "minmax")
            .param("scope", "per-object")
            .param("columns", vec!["a", "b", "c"]),
    );
    let text = canonical_serialize(&s);
    c.bench_function("spec/parse", |b| b.iter(|| parse_spec(black_box(&text)).unwrap()));
    c.bench_function("spec/canonical", |b| b.iter(|| canonical_serialize(black_box(&s))));
}

criterion_group!(benches, builtins, window, csv, spec);
criterion_main!(benches);
