//! Full-pool acquisition scoring on one worker against the whole thread pool.
//! Build with `--no-default-features` to time the sequential code path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use qlpv::acquisition::{select_input, Aggregation};
use qlpv::data::BoxSet;
use qlpv::harness::{bootstrap, AcquisitionTag, ExperimentConfig};
use qlpv::par;

fn pool_scoring(c: &mut Criterion) {
    let cfg = ExperimentConfig { substeps: 400, pilot_size: 20, ..ExperimentConfig::default() };
    let boot = bootstrap(&cfg, 0).expect("bootstrap");
    let ob = BoxSet::unit(2);
    let all = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut counts = vec![1, all];
    counts.dedup();
    let mut group = c.benchmark_group("pool_scoring");
    group.sample_size(10);
    for tag in [AcquisitionTag::Ltv, AcquisitionTag::Qlpv] {
        let kind = cfg.acquisition_kind(tag, 0).unwrap();
        for &threads in &counts {
            group.bench_with_input(BenchmarkId::new(tag.label(), format!("{threads} threads")), &threads, |b, &t| {
                b.iter(|| {
                    par::with_threads(t, || {
                        select_input(&boot.pool, &kind, &boot.theta0, &boot.initial, &ob, Aggregation::Sum).unwrap()
                    })
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, pool_scoring);
criterion_main!(benches);
