use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use neuroprobe::experiment::{grid_search, layerwise_sweep};
use neuroprobe::ranking::prefix_trace;
use neuroprobe::store::{split, Splits};
use neuroprobe::synthetic::LayerTask;
use neuroprobe::{rank_neurons, train, Execution, TrainConfig};

fn data() -> Splits {
    let task = LayerTask {
        n_sentences: 200,
        sentence_len: 20,
        n_layers: 6,
        hidden_dim: 64,
        target_layer: 3,
        n_tags: 8,
        seed: 1,
    }
    .generate()
    .unwrap();
    split(&task.data, [0.8, 0.1, 0.1], 1).unwrap()
}

fn config() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 128,
        ..TrainConfig::default()
    }
}

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn bench_grid(c: &mut Criterion) {
    let s = data();
    let grid = [0.0, 1e-4, 1e-2];
    let mut g = c.benchmark_group("grid_search_3x3");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(grid_search(&s.train, &s.dev, &grid, 0.2, &config(), exec).unwrap()))
        });
    }
    g.finish();
}

fn bench_layers(c: &mut Criterion) {
    let s = data();
    let mut g = c.benchmark_group("layerwise_sweep_6");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(layerwise_sweep(&s.train, &s.dev, Some(&s.test), &config(), exec).unwrap()))
        });
    }
    g.finish();
}

fn bench_prefixes(c: &mut Criterion) {
    let s = data();
    let ranking = rank_neurons(&train(&s.train, &config()).unwrap()).unwrap();
    let mut g = c.benchmark_group("prefix_trace_10pct");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(prefix_trace(&ranking, &s.train, &s.dev, &config(), 0.1, exec).unwrap()))
        });
    }
    g.finish();
}

fn bench_predict(c: &mut Criterion) {
    let s = data();
    let model = train(&s.train, &config()).unwrap();
    let mut g = c.benchmark_group("predict_train_split");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| black_box(model.predict(&s.train.activations, exec).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_grid, bench_layers, bench_prefixes, bench_predict);
criterion_main!(benches);
