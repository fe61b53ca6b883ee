//! Benchmarks for the hot paths: tokenization, embedding, top-k search,
//! F1 scoring, and graph build/retrieval.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pagerag_bench::{random_corpus, random_query, structured_corpus};
use pagerag_core::{
    embed_text, normalize_tokens, token_f1, EmbedderConfig, Extractor, GraphSearchParams,
    KnowledgeGraph, VectorIndex,
};

fn bench_tokenize(c: &mut Criterion) {
    let page = random_corpus(1, 1, 400).pages()[0].content.clone();
    c.bench_function("normalize_tokens/400_words", |b| {
        b.iter(|| normalize_tokens(black_box(&page)))
    });
}

fn bench_embed(c: &mut Criterion) {
    let cfg = EmbedderConfig::local_hash(256);
    let page = random_corpus(2, 1, 400).pages()[0].content.clone();
    c.bench_function("embed_text/local_hash_400_words", |b| {
        b.iter(|| embed_text(black_box(&page), &cfg).unwrap())
    });
}

fn bench_top_k(c: &mut Criterion) {
    let cfg = EmbedderConfig::local_hash(256);
    let mut group = c.benchmark_group("top_k");
    for pages in [100usize, 500, 2000] {
        let corpus = random_corpus(3, pages, 120);
        let index = VectorIndex::build(&corpus, &cfg).unwrap();
        let query = embed_text(&random_query(7, 8), &cfg).unwrap();
        group.bench_with_input(BenchmarkId::new("k10", pages), &pages, |b, _| {
            b.iter(|| index.top_k(black_box(&query), 10).unwrap())
        });
    }
    group.finish();
}

fn bench_build_index(c: &mut Criterion) {
    let cfg = EmbedderConfig::local_hash(256);
    let corpus = random_corpus(4, 500, 120);
    c.bench_function("build_index/500_pages", |b| {
        b.iter(|| VectorIndex::build(black_box(&corpus), &cfg).unwrap())
    });
}

fn bench_token_f1(c: &mut Criterion) {
    let reference = random_query(5, 40);
    let generated = random_query(6, 40);
    c.bench_function("token_f1/40_words", |b| {
        b.iter(|| token_f1(black_box(&reference), black_box(&generated)))
    });
}

fn bench_graph(c: &mut Criterion) {
    let corpus = structured_corpus(200);
    c.bench_function("build_graph/200_pages", |b| {
        b.iter(|| KnowledgeGraph::build(black_box(&corpus), &Extractor::RuleBased).unwrap())
    });

    let graph = KnowledgeGraph::build(&corpus, &Extractor::RuleBased)
        .unwrap()
        .graph;
    let cfg = EmbedderConfig::local_hash(256);
    let params = GraphSearchParams::default();
    c.bench_function("graph_retrieve/200_pages", |b| {
        b.iter(|| {
            graph
                .retrieve(black_box("concept42 term introduced"), &params, &cfg)
                .unwrap()
        })
    });
}

criterion_group!(
    benches,
    bench_tokenize,
    bench_embed,
    bench_top_k,
    bench_build_index,
    bench_token_f1,
    bench_graph
);
criterion_main!(benches);
