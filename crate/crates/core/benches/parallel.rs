use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use septrace::attacks::{run_attack_batch, AttackConfig, AttackKind};
use septrace::datax::gen_blobs;
use septrace::separation::{accuracy, ParallelModel, Tracer, TracerConfig};
use septrace::netcore::{Activation, DenseNet};
use septrace::tracing::{estimate_multicopy_accuracy, DolDistribution, Role};
use septrace::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn model() -> (ParallelModel, septrace::datax::Dataset) {
    let ds = gen_blobs(10, 16, 100, 0.05, 1).unwrap();
    let clf = DenseNet::new(&[16, 64, 64, 10], Activation::Relu, Activation::Identity, 3).unwrap();
    let tracer = Tracer::untrained(16, 10, 4, TracerConfig::default()).unwrap();
    let m = ParallelModel::new(0, Arc::new(clf), Arc::new(tracer), 0.15).unwrap();
    (m, ds)
}

fn bench_accuracy(c: &mut Criterion) {
    let (m, ds) = model();
    let mut g = c.benchmark_group("accuracy");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| accuracy(&m, &ds, exec).unwrap()));
    }
    g.finish();
}

fn bench_multicopy(c: &mut Criterion) {
    let d_s = DolDistribution::new(Role::Source, (0..100).map(|i| i as f64 / 50.0).collect()).unwrap();
    let d_v = DolDistribution::new(Role::Victim, (0..100).map(|i| i as f64 / 50.0 - 1.0).collect()).unwrap();
    let mut g = c.benchmark_group("multicopy");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| estimate_multicopy_accuracy(&d_s, &d_v, 10, 20_000, 1, exec).unwrap())
        });
    }
    g.finish();
}

fn bench_attack_batch(c: &mut Criterion) {
    let (m, ds) = model();
    let cfg = AttackConfig {
        seed: 7,
        max_queries: 500,
        ..AttackConfig::new(AttackKind::Hsja)
    };
    let mut g = c.benchmark_group("attack_batch");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_attack_batch(&m, 0, &ds, &ds, &cfg, 8, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_accuracy, bench_multicopy, bench_attack_batch);
criterion_main!(benches);
