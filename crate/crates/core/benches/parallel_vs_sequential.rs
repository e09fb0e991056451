//! Data-parallel core against a single-thread rayon pool running the same
//! code. The plain-iterator build (`--no-default-features`) is exercised by
//! the test suite rather than timed here.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hitl_core::classifier::{fit, Example};
use hitl_core::featurizer::fit_vocabulary;
use hitl_core::session::{create_session, run_benchmark, Protocol, SessionConfig};
use hitl_core::synthetic::KeywordCorpus;
use hitl_core::{Oracle, TrainConfig};
use rayon::ThreadPool;

fn pools() -> Vec<(&'static str, ThreadPool)> {
    vec![
        ("sequential", rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("parallel", rayon::ThreadPoolBuilder::new().build().unwrap()),
    ]
}

fn corpus(pool: usize, eval: usize) -> KeywordCorpus {
    KeywordCorpus { pool_size: pool, eval_size: eval, ..Default::default() }
}

fn bench_fit(c: &mut Criterion) {
    let (pool, _, schema) = corpus(2000, 10).generate();
    let vocab = fit_vocabulary(pool.iter().map(|d| d.text.as_str()), 1, 50_000).unwrap();
    let examples: Vec<Example> = pool[..150]
        .iter()
        .map(|d| (vocab.vectorize(&d.text), d.gold_label.unwrap()))
        .collect();
    let mut group = c.benchmark_group("fit_150");
    for (name, tp) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| tp.install(|| fit(&examples, schema.len(), vocab.len(), TrainConfig::default()).unwrap()))
        });
    }
    group.finish();
}

fn bench_rank(c: &mut Criterion) {
    let (pool, eval, schema) = corpus(20_000, 1000).generate();
    let cfg = SessionConfig { protocol: Protocol::PoolProtocol, ..Default::default() };
    let s = create_session("bench", &pool, &eval, &schema, cfg).unwrap();
    let mut group = c.benchmark_group("rank_pool_20k");
    for (name, tp) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| tp.install(|| s.ranked_pool().unwrap())));
    }
    group.finish();
}

fn bench_loop(c: &mut Criterion) {
    let (pool, eval, schema) = corpus(2000, 1000).generate();
    let cfg = SessionConfig { protocol: Protocol::PoolProtocol, ..Default::default() };
    let mut group = c.benchmark_group("benchmark_run");
    group.sample_size(10);
    for (name, tp) in pools() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                tp.install(|| {
                    let mut o = Oracle::from_documents(pool.iter().chain(&eval), 4, 0.0, 1).unwrap();
                    run_benchmark(&eval, &pool, &schema, cfg, &mut o).unwrap()
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_fit, bench_rank, bench_loop);
criterion_main!(benches);
