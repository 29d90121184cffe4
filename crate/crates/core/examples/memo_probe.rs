// dev probe: SFT memorization trajectory on the synthetic train split
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
use termforge::trainer::{sft_stage, TrainConfig};

fn main() {
    let a: Vec<String> = std::env::args().collect();
    let rounds: usize = a.get(1).map(|s| s.parse().unwrap()).unwrap_or(6);
    let per_round: usize = a.get(2).map(|s| s.parse().unwrap()).unwrap_or(20);
    let lr: f64 = a.get(3).map(|s| s.parse().unwrap()).unwrap_or(3e-3);
    let batch: usize = a.get(4).map(|s| s.parse().unwrap()).unwrap_or(4);

    let provider = HashingProvider::default();
    let tokenizer = Tokenizer::byte();
    let corpus = split_corpus(&synthetic_corpus(), 0.7, 0).unwrap();
    let graph = build_graph(&corpus, &provider, 0.45).unwrap();
    let aug_cfg = AugmentConfig { theta_sen: 0.3, cap_sen: 1, ..AugmentConfig::default() };
    let out = augment_corpus(&corpus, &graph, &provider, None, &aug_cfg).unwrap();
    let train_sen: Vec<_> = out.q_sen.iter().filter(|s| s.split == Split::Train).cloned().collect();
    let train_tok: Vec<_> = out.q_tok.iter().filter(|s| s.split == Split::Train).cloned().collect();
    println!("train: {} sen + {} tok", train_sen.len(), train_tok.len());

    let model_config = ModelConfig { max_len: 384, attention_mode: AttentionMode::Causal, ..ModelConfig::toy() };
    let mut model = TinyLm::new(model_config, 0);
    let (sen_qca, _) = make_test_sets(&train_sen, &[]);
    let (tok_qca, _) = make_test_sets(&[], &train_tok);
    let start = Instant::now();
    for round in 0..rounds {
        // NOTE: each round is an independent sft_stage call (Adam state and
        // lr schedule reset); approximates a longer schedule in chunks
        let config = TrainConfig { seed: round as u64, epochs_per_stage: per_round, lr, batch_size: batch, ..TrainConfig::default() };
        let curve = sft_stage(&mut model, &train_sen, &train_tok, &tokenizer, &config).unwrap();
        let sen_ll = score_qca(&model, &tokenizer, &sen_qca, QcaScoringMode::Loglikelihood, 42).unwrap().accuracy;
        let tok_ll = score_qca(&model, &tokenizer, &tok_qca, QcaScoringMode::Loglikelihood, 42).unwrap().accuracy;
        println!(
            "epochs {:>3}: sft mean loss {:>8.3} | loglik sen {:.3} tok {:.3} | {:.0}s",
            (round + 1) * per_round, curve.last().unwrap(), sen_ll, tok_ll,
            start.elapsed().as_secs_f64()
        );
    }
}
