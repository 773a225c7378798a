use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use pdiff::backend::{EmbeddingToyBackend, ToyBackend, ToyModelParams};
use pdiff::tuning::example_gradient;
use pdiff::{PromptSpec, PromptVector, Scorer, ScoringConfig, ThresholdPolicy};
use pdiff_bench::{corpus, embedding_params, inputs};

fn score_pair(c: &mut Criterion) {
    let pairs = inputs(1, 0);
    let p = &pairs[0];
    let toy = ToyBackend::new(ToyModelParams::new(0.5, 50_000).unwrap()).unwrap();
    let emb = EmbeddingToyBackend::new(embedding_params()).unwrap();
    let vector = PromptVector::init_from_backend(&emb, 5, 0).unwrap();

    let mut g = c.benchmark_group("score_pair");
    let s = Scorer::new(&toy, ScoringConfig::default()).unwrap();
    g.bench_function("toy", |b| b.iter(|| s.score_pair(black_box(&p.document), black_box(&p.summary)).unwrap()));
    let s = Scorer::new(&emb, ScoringConfig::default()).unwrap();
    g.bench_function("embedding", |b| b.iter(|| s.score_pair(black_box(&p.document), black_box(&p.summary)).unwrap()));
    let s = Scorer::new(&emb, ScoringConfig::default()).unwrap().with_prompt_vector(vector).unwrap();
    g.bench_function("embedding+vector", |b| {
        b.iter(|| s.score_pair(black_box(&p.document), black_box(&p.summary)).unwrap())
    });
    g.finish();
}

fn run_batch(c: &mut Criterion) {
    let pairs = inputs(256, 1);
    let emb = EmbeddingToyBackend::new(embedding_params()).unwrap();
    let s = Scorer::new(&emb, ScoringConfig::default()).unwrap();
    let policy = ThresholdPolicy::Proportion { target_rate: 0.3 };
    let mut g = c.benchmark_group("run_batch_256");
    for workers in [1, 4] {
        g.bench_with_input(BenchmarkId::from_parameter(workers), &workers, |b, &w| {
            b.iter(|| s.run_batch(black_box(&pairs), &policy, w).unwrap())
        });
    }
    g.finish();
}

fn gradient(c: &mut Criterion) {
    let ex = &corpus(1, 2)[0];
    let emb = EmbeddingToyBackend::new(embedding_params()).unwrap();
    let s = Scorer::new(&emb, ScoringConfig::default()).unwrap();
    let enc = s.encode_pair(&ex.document, &ex.summary, &PromptSpec::base()).unwrap();
    let labels = ex.inconsistent_words().unwrap();
    let mut g = c.benchmark_group("example_gradient");
    for len in [5, 40] {
        let v = PromptVector::init_from_backend(&emb, len, 0).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(len), &v, |b, v| {
            b.iter(|| example_gradient(&s, &enc, &labels, v).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, score_pair, run_batch, gradient);
criterion_main!(benches);
