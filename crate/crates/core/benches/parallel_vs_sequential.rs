//! Parallel core against the sequential fallback on the two hot paths: the
//! Monte-Carlo oracle and a cold-started sweep. Build with
//! `--no-default-features` to benchmark the library with rayon removed.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use disentangle_core::generative::MixingModel;
use disentangle_core::linear::{LinearVaeParams, SolverConfig};
use disentangle_core::metrics::mc_oracle_bundle;
use disentangle_core::par;
use disentangle_core::rng::Stream;
use disentangle_core::sweep::{log_grid, run_sweep_with};

fn modes() -> [(&'static str, usize); 2] {
    [("parallel", 0), ("sequential", 1)]
}

fn mc_oracle(c: &mut Criterion) {
    let m = MixingModel::half_plus_identity(16, 2).unwrap();
    let mut p = LinearVaeParams::random(16, 2, 0.5, &mut Stream::derived(3, "bench.params", &[]));
    p.b_dec.fill(0.0);
    let mut g = c.benchmark_group("mc_oracle");
    g.sample_size(10);
    for (name, jobs) in modes() {
        g.bench_function(BenchmarkId::new(name, par::workers()), |b| {
            b.iter(|| par::with_jobs(jobs, || black_box(mc_oracle_bundle(&p, &m, 1.0, 20_000, 4, 7).unwrap())))
        });
    }
    g.finish();
}

fn cold_sweep(c: &mut Criterion) {
    let m = MixingModel::half_plus_identity(32, 2).unwrap();
    let grid = log_grid(0.1, 10.0, 11).unwrap();
    let cfg = SolverConfig::default();
    let mut g = c.benchmark_group("cold_sweep");
    g.sample_size(10);
    for (name, jobs) in modes() {
        g.bench_function(BenchmarkId::new(name, par::workers()), |b| {
            b.iter(|| par::with_jobs(jobs, || black_box(run_sweep_with(&m, &grid, &cfg, false).unwrap())))
        });
    }
    g.finish();
}

fn map_range(c: &mut Criterion) {
    let work = |i: usize| (0..20_000).fold(i as f64, |acc, j| (acc + j as f64).sqrt());
    let mut g = c.benchmark_group("map_range");
    g.bench_function("parallel", |b| b.iter(|| black_box(par::map_range(256, work))));
    g.bench_function("sequential", |b| b.iter(|| black_box(par::sequential::map_range(256, work))));
    g.finish();
}

criterion_group!(benches, mc_oracle, cold_sweep, map_range);
criterion_main!(benches);
