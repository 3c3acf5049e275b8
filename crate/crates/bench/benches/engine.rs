use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use preprod_bench::{board, concept, memory_store};
use preprod_core::memory::{HashEmbedder, IdentityExpander};
use preprod_core::model::{Timestamp, VersionOrigin};
use preprod_core::scenario::{golden_workflow, run_scenario};
use preprod_core::{ArtifactKind, CoreConfig};

fn retrieval(c: &mut Criterion) {
    let mut g = c.benchmark_group("retrieve");
    for chunks in [100, 1000] {
        let store = memory_store(chunks);
        g.bench_function(format!("{chunks}-chunks"), |b| {
            b.iter(|| {
                store
                    .retrieve(black_box("the night warden on the rooftop"), 5, &IdentityExpander, &HashEmbedder::default())
                    .unwrap()
            })
        });
    }
    g.finish();
}

fn boards(c: &mut Criterion) {
    c.bench_function("board/create-with-auto-placement-200", |b| b.iter(|| board(black_box(200))));
    c.bench_function("board/add-version", |b| {
        b.iter_batched(
            || board(50),
            |mut store| {
                let id = store.blocks().next().unwrap().block_id.clone();
                store.add_version(&id, concept(1), VersionOrigin::UserEdit, Timestamp(1)).unwrap()
            },
            BatchSize::SmallInput,
        )
    });
    let store = board(200);
    let leaf = store
        .blocks()
        .filter(|b| b.kind == ArtifactKind::StoryConcept)
        .last()
        .unwrap()
        .block_id
        .clone();
    c.bench_function("board/lineage", |b| b.iter(|| store.lineage(black_box(&leaf)).unwrap()));
}

fn scenario(c: &mut Criterion) {
    let golden = golden_workflow();
    let mut g = c.benchmark_group("scenario");
    g.sample_size(20);
    g.bench_function("golden-workflow", |b| {
        b.iter_batched(
            || tempfile::tempdir().unwrap(),
            |dir| run_scenario(&golden, CoreConfig::default(), dir.path()).unwrap().report.passed,
            BatchSize::PerIteration,
        )
    });
    g.finish();
}

criterion_group!(benches, retrieval, boards, scenario);
criterion_main!(benches);
