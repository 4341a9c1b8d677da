use std::hint::black_box;

use agp_bench::{prompt_registry, token_text};
use agp_core::optimizers::signals::{grpo_signals, reinforcepp_signals, RlConfig};
use agp_core::optimizers::similarity::similarity;
use agp_core::persistence::{decode_registry, encode_registry};
use agp_core::registry::Update;
use agp_core::version::Version;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn bench_similarity(c: &mut Criterion) {
    let mut g = c.benchmark_group("similarity");
    for n in [8usize, 64, 256] {
        let a = token_text(n, 0);
        let b = token_text(n, 3);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bch, _| bch.iter(|| similarity(black_box(&a), black_box(&b))));
    }
    g.finish();
}

fn bench_signals(c: &mut Criterion) {
    let cfg = RlConfig::default();
    let y = token_text(32, 1);
    let prev = token_text(32, 2);
    c.bench_function("reinforcepp_signals/32", |b| {
        b.iter(|| reinforcepp_signals(black_box(&y), black_box(&prev), "alpha", black_box(&prev), &cfg))
    });
    let cands: Vec<String> = (0..8).map(|i| token_text(32, i)).collect();
    c.bench_function("grpo_signals/k8", |b| b.iter(|| grpo_signals(black_box(&cands), "alpha", &prev, &cfg)));
}

fn bench_registry(c: &mut Criterion) {
    c.bench_function("registry/update", |b| {
        let reg = prompt_registry(1, 0);
        let mut i = 0;
        b.iter(|| {
            i += 1;
            reg.update("p0", Update::Source(token_text(16, i))).unwrap()
        })
    });
    c.bench_function("registry/restore", |b| {
        let reg = prompt_registry(1, 4);
        b.iter(|| reg.restore("p0", Version::new(0, 1, 0)).unwrap())
    });
    let reg = prompt_registry(20, 5);
    c.bench_function("persistence/encode_20x6", |b| b.iter(|| encode_registry(black_box(&reg))));
    let bytes = encode_registry(&reg);
    c.bench_function("persistence/decode_20x6", |b| b.iter(|| decode_registry(black_box(&bytes)).unwrap()));
}

criterion_group!(benches, bench_similarity, bench_signals, bench_registry);
criterion_main!(benches);
