use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use odtload::model::Configuration;
use odtload::montecarlo::{bound_trap, run_experiment_on, Executor};

const N: u64 = 200;

fn executors(c: &mut Criterion) {
    let config = Configuration::reference_defaults().with_override("beam.T_r", "0.125 mK").unwrap();
    let trap = bound_trap(&config).unwrap();

    #[allow(unused_mut)]
    let mut runs = vec![("sequential", Executor::Sequential)];
    #[cfg(feature = "parallel")]
    runs.push(("parallel", Executor::with_workers(0)));

    let mut group = c.benchmark_group("experiment");
    group.sample_size(10);
    for (name, executor) in runs {
        group.bench_with_input(BenchmarkId::new(name, N), &executor, |b, &ex| {
            b.iter(|| run_experiment_on(&config, &trap, N, 7, ex).unwrap().estimate.n_captured)
        });
    }
    group.finish();
}

criterion_group!(benches, executors);
criterion_main!(benches);
