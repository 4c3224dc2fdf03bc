use std::collections::BTreeSet;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion, Throughput};

use aibom_bench::{feeds, workload, TIMESTAMP, WORKLOADS};
use aibom_core::metrics::{capture_metrics, parity};
use aibom_core::store::composite_hash;
use aibom_core::{harness, run_session, ParityConfig, ReplayOptions, SessionConfig, Store};

fn sessions(c: &mut Criterion) {
    let feeds = feeds();
    let mut group = c.benchmark_group("run_session");
    for name in WORKLOADS {
        let spec = workload(name);
        let cfg = SessionConfig::new("bench", TIMESTAMP);
        group.bench_with_input(BenchmarkId::from_parameter(name), &spec, |b, spec| {
            b.iter(|| run_session(black_box(spec), &feeds, &cfg).unwrap())
        });
    }
    group.finish();
}

fn capture_and_parity(c: &mut Criterion) {
    let out = run_session(&workload("late-bind-heavy"), &feeds(), &SessionConfig::new("bench", TIMESTAMP)).unwrap();
    let sbom: BTreeSet<_> = out.sbom_purls();
    c.bench_function("capture_metrics/late-bind-heavy", |b| {
        b.iter(|| capture_metrics(black_box(&sbom), &out.execution.trace).unwrap())
    });
    let bytes = out.execution.output.clone();
    let cfg = ParityConfig::default();
    c.bench_function("parity/identical", |b| b.iter(|| parity(black_box(&bytes), &bytes, &cfg, true).unwrap()));
}

fn hashing(c: &mut Criterion) {
    let mut group = c.benchmark_group("composite_hash");
    for size in [1usize << 10, 1 << 16, 1 << 20] {
        let part = vec![0x5au8; size];
        group.throughput(Throughput::Bytes(4 * size as u64));
        group.bench_with_input(BenchmarkId::from_parameter(size), &part, |b, p| {
            b.iter(|| composite_hash(black_box(p), p, p, p))
        });
    }
    group.finish();
}

fn seal_and_replay(c: &mut Criterion) {
    let feeds = feeds();
    let spec = workload("logit-glm");
    let mut n = 0u64;
    c.bench_function("capture+seal/logit-glm", |b| {
        b.iter_batched(
            || {
                n += 1;
                (tempfile_dir(), SessionConfig::new(format!("s{n}"), TIMESTAMP))
            },
            |(dir, cfg)| {
                let store = Store::open(dir.path()).unwrap();
                harness::capture(&store, &spec, &feeds, &cfg).unwrap()
            },
            BatchSize::PerIteration,
        )
    });

    let dir = tempfile_dir();
    let store = Store::open(dir.path()).unwrap();
    harness::capture(&store, &spec, &feeds, &SessionConfig::new("r", TIMESTAMP)).unwrap();
    let opts = ReplayOptions {
        runs: 1,
        ..ReplayOptions::default()
    };
    c.bench_function("replay/logit-glm", |b| b.iter(|| harness::replay(&store, "r", &feeds, &opts).unwrap()));
}

fn tempfile_dir() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}

criterion_group!(benches, sessions, capture_and_parity, hashing, seal_and_replay);
criterion_main!(benches);
