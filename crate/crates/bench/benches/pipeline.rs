use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use dynctl_bench::fixture;
use dynctl_core::matcher::MatchIndex;
use dynctl_core::{analyze, bin_by_stratum, match_all, run_simulation, SimConfig};

fn simulate(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    for n in [1_000usize, 5_000] {
        let cfg = SimConfig {
            n_contacts: n,
            ..SimConfig::default()
        };
        g.throughput(Throughput::Elements(n as u64));
        g.bench_with_input(BenchmarkId::from_parameter(n), &cfg, |b, cfg| {
            b.iter(|| run_simulation(cfg, 1).unwrap())
        });
    }
    g.finish();
}

fn matching(c: &mut Criterion) {
    let mut g = c.benchmark_group("match");
    g.sample_size(10);
    for n in [2_000usize, 8_000] {
        let (cfg, ds) = fixture(n);
        g.throughput(Throughput::Elements(ds.messages.len() as u64));
        g.bench_function(BenchmarkId::new("index_build", n), |b| {
            b.iter(|| MatchIndex::build(black_box(&ds), &cfg.run).unwrap())
        });
        g.bench_function(BenchmarkId::new("match_all", n), |b| {
            b.iter(|| match_all(black_box(&ds), &cfg.run, 7).unwrap())
        });
    }
    g.finish();
}

fn scoring(c: &mut Criterion) {
    let mut g = c.benchmark_group("score");
    g.sample_size(10);
    let (cfg, ds) = fixture(8_000);
    let ledger = match_all(&ds, &cfg.run, 7).unwrap();
    g.throughput(Throughput::Elements(ledger.matched_count() as u64));
    g.bench_function("bin_by_stratum", |b| {
        b.iter(|| bin_by_stratum(black_box(&ledger), &ds, &cfg.run).unwrap())
    });
    g.bench_function("analyze", |b| b.iter(|| analyze(black_box(&ledger), &ds, &cfg.run).unwrap()));
    g.finish();
}

criterion_group!(benches, simulate, matching, scoring);
criterion_main!(benches);
