//! Hot paths of a full pipeline run, at the shipped problem size
//! (30 entities × 13 years, 4000-token documents): the within fit behind
//! every regression column, the threshold grid search (the single most
//! expensive estimator, also the bootstrap inner loop), and keyword
//! counting (scales with corpus size).

use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use ecopanel_core::models::{fixed_effects, threshold_fit, ModelSpec};
use ecopanel_core::panel::PanelDataset;
use ecopanel_core::text::{KeywordDictionary, KeywordMatcher};
use indexmap::IndexMap;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const N_ENTITIES: usize = 30;
const N_YEARS: usize = 13;

fn synthetic_panel() -> PanelDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = N_ENTITIES * N_YEARS;
    let mut norm = |scale: f64| -> Vec<f64> {
        (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let mut columns: IndexMap<String, Vec<f64>> = IndexMap::new();
    for name in ["x", "c1", "c2", "c3", "c4", "c5", "c6"] {
        columns.insert(name.to_string(), norm(1.0));
    }
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let x = columns["x"][i];
            let slope = if x <= 0.0 { -1.0 } else { -2.0 };
            slope * x + 0.5 * columns["c1"][i] + rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    columns.insert("y".to_string(), y);
    let entities = (0..N_ENTITIES).map(|i| format!("e{i:02}")).collect();
    let years = (0..N_YEARS as i32).map(|k| 2007 + k).collect();
    PanelDataset::new(entities, years, columns, BTreeMap::new()).expect("panel")
}

fn bench_within_fit(c: &mut Criterion) {
    let p = synthetic_panel();
    let spec = ModelSpec::new("y", "x").with_controls(&["c1", "c2", "c3", "c4", "c5", "c6"]);
    c.bench_function("within_fit_30x13_7regs", |b| {
        b.iter(|| fixed_effects(black_box(&p), black_box(&spec)).unwrap())
    });
}

fn bench_threshold_grid(c: &mut Criterion) {
    let p = synthetic_panel();
    let spec = ModelSpec::new("y", "x").with_controls(&["c1"]);
    let mut group = c.benchmark_group("threshold");
    group.sample_size(20);
    group.bench_function("grid_search_30x13", |b| {
        b.iter(|| threshold_fit(black_box(&p), black_box(&spec), 1, 0.05).unwrap())
    });
    group.finish();
}

fn bench_keyword_count(c: &mut Criterion) {
    let dict = KeywordDictionary::default_dictionary();
    let matcher = KeywordMatcher::new(&dict);
    let words: Vec<&str> = dict.keywords().map(|(w, _)| w).collect();
    let fillers = ["经济", "发展", "工作", "建设", "改革"];
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let text = (0..4000)
        .map(|_| {
            if rng.random::<f64>() < 0.01 {
                words[rng.random_range(0..words.len())]
            } else {
                fillers[rng.random_range(0..fillers.len())]
            }
        })
        .collect::<Vec<_>>()
        .join(" ");
    let mut group = c.benchmark_group("keyword_count");
    group.throughput(Throughput::Bytes(text.len() as u64));
    group.bench_function("document_4000_tokens", |b| {
        b.iter(|| matcher.count(black_box(&text)))
    });
    group.finish();
}

criterion_group!(benches, bench_within_fit, bench_threshold_grid, bench_keyword_count);
criterion_main!(benches);
