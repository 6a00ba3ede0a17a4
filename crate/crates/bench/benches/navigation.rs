use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use prag_bench::cluttered_room;
use prag_core::geometry::Heading;
use prag_core::nav::{backtrack_path, distance_field, path_to_actions};

fn plan(c: &mut Criterion) {
    let mut group = c.benchmark_group("navigate_corner_to_corner");
    for size in [16, 64, 256] {
        let (grid, from, to) = cluttered_room(3, size, 0.2);
        group.bench_with_input(BenchmarkId::from_parameter(size), &size, |b, _| {
            b.iter(|| {
                let field = distance_field(black_box(&grid), from).unwrap();
                let path = backtrack_path(&field, to).unwrap();
                path_to_actions(&path, Heading::East).unwrap().len()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, plan);
criterion_main!(benches);
