//! Parallel-vs-sequential throughput comparison for the data-parallel inner
//! loops: empirical-model construction and full sweep cells. Each workload
//! runs once inside a single-thread rayon pool and once on the default pool,
//! so the two paths are compared within one build. Solver baselines
//! (value iteration, the LP oracle) are included for scale.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use cmdp::harness::{random_cmdp, run_sweep_on, EpsilonSpec, SweepParams, TimingMode, ZetaSpec};
use cmdp::lp::solve_cmdp_exact;
use cmdp::mdp::value_iteration;
use cmdp::primal_dual::PdMode;
use cmdp::sampling::{build_empirical_model, GenerativeModel};

fn single_thread_pool() -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("single-thread pool")
}

fn bench_empirical_model(c: &mut Criterion) {
    let truth = random_cmdp(12, 4, 0.9, 7, 0.2).unwrap();
    let n = 20_000u64;
    let mut group = c.benchmark_group("empirical_model");
    group.sample_size(20);
    let seq_pool = single_thread_pool();
    group.bench_with_input(BenchmarkId::new("sequential", n), &n, |bench, &n| {
        bench.iter(|| {
            seq_pool.install(|| {
                let mut gm = GenerativeModel::new(truth.clone(), 3);
                black_box(build_empirical_model(&mut gm, n, 0.01, 0.4, 5).unwrap())
            })
        })
    });
    group.bench_with_input(BenchmarkId::new("parallel", n), &n, |bench, &n| {
        bench.iter(|| {
            let mut gm = GenerativeModel::new(truth.clone(), 3);
            black_box(build_empirical_model(&mut gm, n, 0.01, 0.4, 5).unwrap())
        })
    });
    group.finish();
}

fn bench_sweep_cells(c: &mut Criterion) {
    let truth = random_cmdp(5, 3, 0.5, 11, 0.4).unwrap();
    let params = SweepParams {
        mode: PdMode::Relaxed,
        epsilon: EpsilonSpec::Fixed(0.5),
        delta: 0.1,
        n_schedule: vec![250, 1000],
        seeds: (0..8).collect(),
        t_cap: Some(50_000),
        zeta: ZetaSpec::Oracle,
        timing: TimingMode::Deterministic,
    };
    let mut group = c.benchmark_group("sweep_cells");
    group.sample_size(10);
    let seq_pool = single_thread_pool();
    group.bench_function("sequential", |bench| {
        bench.iter(|| seq_pool.install(|| black_box(run_sweep_on(&truth, &params).unwrap())))
    });
    group.bench_function("parallel", |bench| {
        bench.iter(|| black_box(run_sweep_on(&truth, &params).unwrap()))
    });
    group.finish();
}

fn bench_solvers(c: &mut Criterion) {
    let truth = random_cmdp(10, 5, 0.9, 13, 0.2).unwrap();
    c.bench_function("value_iteration_10x5", |bench| {
        bench.iter(|| {
            black_box(
                value_iteration(&truth.transitions, 10, 5, &truth.rewards, truth.gamma, 1e-9)
                    .unwrap(),
            )
        })
    });
    c.bench_function("lp_oracle_10x5", |bench| {
        bench.iter(|| black_box(solve_cmdp_exact(&truth).unwrap()))
    });
}

criterion_group!(
    benches,
    bench_empirical_model,
    bench_sweep_cells,
    bench_solvers
);
criterion_main!(benches);
