use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use prag_bench::{database, query};
use prag_core::embedding::{Encoder, HashEncoder};

fn top_k(c: &mut Criterion) {
    let mut group = c.benchmark_group("retrieve_top_k");
    for tasks in [10, 100, 1000] {
        let db = database(1, tasks, 40, 384);
        let q = query(2, 384);
        group.bench_with_input(BenchmarkId::from_parameter(tasks), &tasks, |b, _| {
            b.iter(|| db.retrieve_top_k(black_box(&q), 3).unwrap().len())
        });
    }
    group.finish();
}

fn encode(c: &mut Criterion) {
    let enc = HashEncoder::new(384).unwrap();
    let text = "agent/agent/holding: True\ncounter_1/counter_1/next_to: True\nmug_1/counter_1/onTop: True\n".repeat(8);
    c.bench_function("hash_encode_scene_graph", |b| b.iter(|| enc.encode(black_box(&text)).unwrap()));
}

criterion_group!(benches, top_k, encode);
criterion_main!(benches);
