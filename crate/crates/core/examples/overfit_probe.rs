// dev probe: acceptance-shaped overfit run (single continuous schedules)
use std::time::Instant;
use termforge::augment::{augment_corpus, AugmentConfig};
use termforge::config::QcaScoringMode;
use termforge::corpus::{split_corpus, Split};
use termforge::embedding::HashingProvider;
use termforge::eval::{make_test_sets, score_qca};
use termforge::graph::build_graph;
use termforge::model::{AttentionMode, ModelConfig, TinyLm};
use termforge::synth::synthetic_corpus;
use termforge::tokenizer::Tokenizer;
use termforge::trainer::{sen_stage, sft_stage, tok_stage, TrainConfig};

fn main() {
    let a: Vec<String> = std::env::args().collect();
    let sft_epochs: usize = a.get(1).map(|s| s.parse().unwrap()).unwrap_or(60);
    let start = Instant::now();
    let provider = HashingProvider::default();
    let tokenizer = Tokenizer::byte();
    let corpus = split_corpus(&synthetic_corpus(), 0.7, 0).unwrap();
    let graph = build_graph(&corpus, &provider, 0.45).unwrap();
    let aug_cfg = AugmentConfig { theta_sen: 0.3, cap_sen: 1, ..AugmentConfig::default() };
    let out = augment_corpus(&corpus, &graph, &provider, None, &aug_cfg).unwrap();
    let train_sen: Vec<_> = out.q_sen.iter().filter(|s| s.split == Split::Train).cloned().collect();
    let train_tok: Vec<_> = out.q_tok.iter().filter(|s| s.split == Split::Train).cloned().collect();

    let model_config = ModelConfig { max_len: 384, attention_mode: AttentionMode::Causal, ..ModelConfig::toy() };
    let mut model = TinyLm::new(model_config, 0);
    let sft_cfg = TrainConfig { seed: 0, epochs_per_stage: sft_epochs, lr: 3e-3, batch_size: 4, ..TrainConfig::default() };
    let sen_cfg = TrainConfig { seed: 0, epochs_per_stage: 2, lr: 5e-4, batch_size: 8, ..TrainConfig::default() };
    let tok_cfg = TrainConfig { seed: 0, epochs_per_stage: 2, lr: 1e-3, batch_size: 8, ..TrainConfig::default() };
    let c = sft_stage(&mut model, &train_sen, &train_tok, &tokenizer, &sft_cfg).unwrap();
    println!("sft {} epochs, final mean loss {:.3} ({:.0}s)", sft_epochs, c.last().unwrap(), start.elapsed().as_secs_f64());
    sen_stage(&mut model, &train_sen, &tokenizer, &sen_cfg).unwrap();
    tok_stage(&mut model, &train_tok, &tokenizer, &tok_cfg).unwrap();
    let (train_qca, _) = make_test_sets(&train_sen, &train_tok);
    let r = score_qca(&model, &tokenizer, &train_qca, QcaScoringMode::Loglikelihood, 42).unwrap();
    println!("full-pipeline train loglik accuracy: {:.3} | total {:.0}s", r.accuracy, start.elapsed().as_secs_f64());
}
