//! Compares the rayon-parallel kernels against their single-threaded twins
//! on the bundled synthetic workload: graph construction, supervised batch
//! gradients, and QCA scoring.
//!
//! Run with `cargo bench`. Building with `--no-default-features` makes the
//! "parallel" entries run the sequential fallback, which is useful for
//! checking that the fallback carries no overhead.

use criterion::{criterion_group, criterion_main, Criterion};

use termforge::augment::{augment_corpus, AugmentConfig};
use termforge::corpus::split_corpus;
use termforge::embedding::HashingProvider;
use termforge::graph::{build_graph, build_graph_serial};
use termforge::losses::{sft_loss, sft_sample_loss, SftPair};
use termforge::model::{ModelConfig, TinyLm};
use termforge::synth::synthetic_corpus;
use termforge::tokenizer::Tokenizer;
use termforge::trainer::render_token_sft;

fn graph_build(c: &mut Criterion) {
    let corpus = split_corpus(&synthetic_corpus(), 0.7, 1).unwrap();
    let provider = HashingProvider::default();
    let mut group = c.benchmark_group("graph_build");
    group.sample_size(20);
    group.bench_function("parallel", |b| {
        b.iter(|| build_graph(&corpus, &provider, 0.45).unwrap())
    });
    group.bench_function("serial", |b| {
        b.iter(|| build_graph_serial(&corpus, &provider, 0.45).unwrap())
    });
    group.finish();
}

fn sft_batch(c: &mut Criterion) {
    let corpus = split_corpus(&synthetic_corpus(), 0.7, 1).unwrap();
    let provider = HashingProvider::default();
    let graph = build_graph(&corpus, &provider, 0.45).unwrap();
    let config = AugmentConfig {
        theta_sen: 0.2,
        ..AugmentConfig::default()
    };
    let out = augment_corpus(&corpus, &graph, &provider, None, &config).unwrap();
    let tokenizer = Tokenizer::byte();
    let model = TinyLm::new(ModelConfig::toy(), 7);
    let batch: Vec<SftPair> = out
        .q_tok
        .iter()
        .take(16)
        .map(|s| render_token_sft(s, &tokenizer, model.config.max_len))
        .collect();
    let sep = tokenizer.sep();
    let mut group = c.benchmark_group("sft_batch_gradients");
    group.sample_size(10);
    group.bench_function("parallel", |b| {
        b.iter(|| sft_loss(&model, &batch, sep).unwrap())
    });
    group.bench_function("serial", |b| {
        b.iter(|| {
            let mut total = 0.0;
            let mut grads = model.zero_grads();
            for pair in &batch {
                total += sft_sample_loss(&model, pair, sep, &mut grads).unwrap();
            }
            (total, grads)
        })
    });
    group.finish();
}

criterion_group!(benches, graph_build, sft_batch);
criterion_main!(benches);
