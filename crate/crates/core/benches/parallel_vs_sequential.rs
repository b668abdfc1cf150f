//! Thread-pool comparison on the main data-parallel paths.
//!
//! Each benchmark runs on a 1-thread pool and on the default pool. Building without default
//! features (`--no-default-features`) compiles the sequential fallback instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use scorelab::constructions::verify_all;
use scorelab::dsm::{self, McConfig, ScoreModel};
use scorelab::generator::zoo;
use scorelab::sampler::{self, ReverseRunConfig};
use scorelab::{exec, DiffusionSchedule};

fn pools() -> Vec<(String, usize)> {
    let mode = if cfg!(feature = "parallel") { "rayon" } else { "sequential" };
    vec![(format!("{mode}-1"), 1), (format!("{mode}-default"), 0)]
}

fn bench(c: &mut Criterion) {
    let gen = zoo::circle(2.0);
    let sched = DiffusionSchedule::new(0.1, 0.02, 1.0).unwrap();
    let oracle = ScoreModel::oracle(&gen, &sched).unwrap();
    let scaled = oracle.clone().with_f_scale(0.9);
    let mut group = c.benchmark_group("parallel_vs_sequential");
    group.sample_size(10);
    for (label, threads) in pools() {
        group.bench_with_input(BenchmarkId::new("score_error", &label), &threads, |b, &t| {
            b.iter(|| exec::with_threads(t, || dsm::integrated_score_error_vs(&scaled, &oracle, &gen, &sched, 400, &McConfig::new(8, 1, 1)).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("reverse_sampler", &label), &threads, |b, &t| {
            let cfg = ReverseRunConfig {
                n_steps: 50,
                n_samples: 2000,
                seed: 1,
            };
            b.iter(|| exec::with_threads(t, || sampler::reverse_sample(&oracle, &sched, &cfg).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("construction_audits", &label), &threads, |b, &t| {
            b.iter(|| exec::with_threads(t, || verify_all(2000, 1).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
