use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use vds_core::fixtures;
use vds_core::ssvd::{DatasetRef, TransformRef, VirtualDatasetSpec};
use vds_core::{Config, DatasetId, MaterializeOptions, RegisterExplicit, Workspace};

fn spec(name: &str, inputs: &[DatasetId], t: TransformRef) -> VirtualDatasetSpec {
    VirtualDatasetSpec::new(name, inputs.iter().map(|i| DatasetRef::id(*i)).collect(), t)
}

/// Three farms, merged, narrowed and split; returns the test slot.
fn build(ws: &Workspace) -> DatasetId {
    let farms: Vec<DatasetId> = fixtures::install_farms(ws.storage(), 40)
        .into_iter()
        .map(|u| ws.register_explicit(&RegisterExplicit::new(u)).unwrap().id)
        .collect();
    let m = ws.create_virtual(&spec("m", &farms, TransformRef::new("merge")), "bench").unwrap().id;
    let s = ws
        .create_virtual(
            &spec("s", &[m], TransformRef::new("select_columns").param("columns", vec!["t", "temp1", "temp2"])),
            "bench",
        )
        .unwrap()
        .id;
    let p = spec(
        "test",
        &[s],
        TransformRef::new("partition").param("a", 70).param("b", 15).param("c", 15).seed(42),
    )
    .with_outputs(&["train", "val", "test"], 2);
    ws.create_virtual(&p, "bench").unwrap().id
}

fn materialize(c: &mut Criterion) {
    let ws = Workspace::open(&Config::in_memory().seeded(1)).unwrap();
    let target = build(&ws);
    ws.materialize(target, MaterializeOptions::default()).unwrap();
    c.bench_function("materialize/warm", |b| {
        b.iter(|| ws.materialize(target, MaterializeOptions::default()).unwrap())
    });
    c.bench_function("materialize/forced", |b| {
        b.iter(|| {
            ws.materialize(
                target,
                MaterializeOptions { force_recompute: true },
            )
            .unwrap()
        })
    });
    c.bench_function("resolve", |b| b.iter(|| ws.resolve(target).unwrap()));
    c.bench_function("lineage", |b| {
        b.iter(|| ws.lineage(target, vds_core::Direction::Backward, None).unwrap())
    });
}

fn catalog(c: &mut Criterion) {
    c.bench_function("catalog/build on disk", |b| {
        b.iter_batched(
            || tempfile::tempdir().unwrap(),
            |dir| {
                let ws = Workspace::open(&Config::at(dir.path())).unwrap();
                build(&ws);
                dir
            },
            BatchSize::PerIteration,
        )
    });
}

criterion_group!(benches, materialize, catalog);
criterion_main!(benches);
