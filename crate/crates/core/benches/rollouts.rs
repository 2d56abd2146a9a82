use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mech_search_core::harness::{mix_seed, run_batch, Execution, HeapRef, LoadedHeap, RolloutConfig};
use mech_search_core::heapgen::{generate_heap, HeapSpec};
use mech_search_core::planners::distance_transform;
use mech_search_core::scene::rasterize_scene;

fn heaps(n: u32, count: u64) -> Vec<LoadedHeap> {
    (0..count)
        .map(|i| {
            let seed = mix_seed(1, ((n as u64) << 32) | i);
            let scene = generate_heap(&HeapSpec::new(n as usize, seed)).expect("heap");
            LoadedHeap { heap: HeapRef { name: format!("bench_{i}"), seed, n_objects: n }, scene }
        })
        .collect()
}

fn batch(c: &mut Criterion) {
    let heaps = heaps(15, 16);
    let configs = vec![RolloutConfig::from_policy_name("largest-push").expect("policy")];
    let workers = std::thread::available_parallelism().map_or(4, |n| n.get()).max(4);

    let mut group = c.benchmark_group("run_batch");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter(|| run_batch(&heaps, &configs, Execution::Sequential).expect("batch"))
    });
    group.bench_with_input(BenchmarkId::new("parallel", workers), &workers, |b, &workers| {
        b.iter(|| run_batch(&heaps, &configs, Execution::Parallel { workers }).expect("batch"))
    });
    group.finish();
}

fn edt(c: &mut Criterion) {
    let scene = heaps(20, 1).remove(0).scene;
    let masks = rasterize_scene(&scene, 200.0).expect("raster");
    c.bench_function("distance_transform", |b| b.iter(|| distance_transform(&masks.occupancy)));
}

criterion_group!(benches, batch, edt);
criterion_main!(benches);
