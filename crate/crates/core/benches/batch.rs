use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use drillguide::sim::{run_batch, Execution, Scenario};

fn batch(c: &mut Criterion) {
    let mut scenario = Scenario::bundled();
    scenario.duration = 2.0;
    let mut group = c.benchmark_group("batch");
    group.sample_size(10).measurement_time(Duration::from_secs(20));
    for trials in [4, 16] {
        for (name, execution) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            group.bench_with_input(BenchmarkId::new(name, trials), &trials, |b, &n| {
                b.iter(|| run_batch(black_box(&scenario), n, execution, false).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, batch);
criterion_main!(benches);
