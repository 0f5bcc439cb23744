use criterion::{criterion_group, criterion_main, Criterion};
use scalegrad_core::decoding::{beam_search, greedy, sample_top_p, DecodeConfig};
use scalegrad_core::TinyLM;
use std::hint::black_box;

fn decoding(c: &mut Criterion) {
    let m = TinyLM::init(80, 64, 128, 0).unwrap();
    let prefix: Vec<u32> = (0..50).map(|i| 3 + i % 70).collect();
    let cfg = DecodeConfig {
        max_new_tokens: 100,
        ngram_block: Some(3),
        ..DecodeConfig::default()
    };
    c.bench_function("greedy_100", |b| b.iter(|| greedy(&m, black_box(&prefix), &cfg)));
    c.bench_function("top_p_100", |b| b.iter(|| sample_top_p(&m, black_box(&prefix), &cfg, 0.9)));
    c.bench_function("beam4_100", |b| b.iter(|| beam_search(&m, black_box(&prefix), &cfg, 4)));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = decoding
}
criterion_main!(benches);
