use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use thairom_bench::{name_pairs, selector_data};
use thairom_core::decoding::{beam_decode, greedy_decode, BeamConfig};
use thairom_core::metrics::{corpus_cer, levenshtein};
use thairom_core::model::tokenizer::ByteTokenizer;
use thairom_core::model::{Transformer, TransformerConfig};
use thairom_core::phonetics::{phonetic_distance, FeatureTable, ToyG2p};
use thairom_core::rtgs::{romanize_rtgs, RtgsTables};
use thairom_core::selector::{fit_forest, ForestConfig};

fn metrics(c: &mut Criterion) {
    let pairs = name_pairs(100);
    c.bench_function("levenshtein/100 pairs", |b| {
        b.iter(|| pairs.iter().map(|(t, l)| levenshtein(black_box(t), black_box(l))).sum::<usize>())
    });
    let preds: Vec<&str> = pairs.iter().map(|p| p.1.as_str()).collect();
    let refs: Vec<[&str; 1]> = pairs.iter().rev().map(|p| [p.1.as_str()]).collect();
    c.bench_function("corpus_cer/100 items", |b| b.iter(|| corpus_cer(black_box(&preds), &refs).unwrap()));
}

fn romanization(c: &mut Criterion) {
    let pairs = name_pairs(100);
    let tables = RtgsTables::builtin();
    c.bench_function("rtgs/100 names", |b| {
        b.iter(|| {
            for (t, _) in &pairs {
                black_box(romanize_rtgs(t, &tables).unwrap());
            }
        })
    });
    let (g2p, table) = (ToyG2p::builtin(), FeatureTable::builtin());
    c.bench_function("phonetic_distance/100 pairs", |b| {
        b.iter(|| {
            for (t, l) in &pairs {
                black_box(phonetic_distance(t, l, &g2p, &table).unwrap());
            }
        })
    });
}

fn selector(c: &mut Criterion) {
    let (x, y) = selector_data();
    let w = vec![1.0; x.len()];
    let mut group = c.benchmark_group("forest_fit");
    group.sample_size(10);
    for trees in [50, 200] {
        let config = ForestConfig {
            n_estimators: trees,
            ..ForestConfig::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(trees), &config, |b, cfg| {
            b.iter(|| fit_forest(&x, &y, &w, cfg).unwrap())
        });
    }
    group.finish();
    let forest = fit_forest(&x, &y, &w, &ForestConfig::default()).unwrap();
    c.bench_function("forest_predict/200 rows", |b| b.iter(|| forest.predict_many(black_box(&x)).unwrap()));
}

fn model(c: &mut Criterion) {
    let model = Transformer::new(&TransformerConfig::toy(), 1).unwrap();
    let src = ByteTokenizer.encode("สมศักดิ์");
    let dec = vec![ByteTokenizer.encode("somsak")];
    c.bench_function("toy_forward/1 example", |b| {
        b.iter(|| model.forward(black_box(std::slice::from_ref(&src)), &dec).unwrap())
    });
    c.bench_function("toy_greedy/16 tokens", |b| b.iter(|| greedy_decode(&model, black_box(&src), 16).unwrap()));
    let beam = BeamConfig {
        max_length: 16,
        ..BeamConfig::default()
    };
    let mut group = c.benchmark_group("toy_beam");
    group.sample_size(10);
    group.bench_function("width 5, 16 tokens", |b| b.iter(|| beam_decode(&model, black_box(&src), &beam).unwrap()));
    group.finish();
}

criterion_group!(benches, metrics, romanization, selector, model);
criterion_main!(benches);
