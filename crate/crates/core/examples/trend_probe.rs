// dev probe for the pipeline trend: margins, train/test QCA, wall time
// args: reps cap_sen sft_epochs sen_epochs sen_lr sen_batch tau tok_epochs
use std::time::Instant;
use termforge::augment::{augment_corpus, AugmentConfig};
use termforge::config::QcaScoringMode;
use termforge::corpus::{split_corpus, Split};
use termforge::embedding::HashingProvider;
use termforge::eval::{make_test_sets, score_qca};
use termforge::graph::build_graph;
use termforge::model::{AttentionMode, ModelConfig, TinyLm};
#[allow(unused_imports)]
use termforge::eval::QcaSample;
use termforge::synth::synthetic_corpus;
use termforge::tokenizer::Tokenizer;
use termforge::trainer::{embedding_margin, sen_stage, sft_stage, tok_stage, TrainConfig};

fn main() {
    let a: Vec<String> = std::env::args().collect();
    let reps: u64 = a.get(1).map(|s| s.parse().unwrap()).unwrap_or(3);
    let cap_sen: usize = a.get(2).map(|s| s.parse().unwrap()).unwrap_or(4);
    let sft_epochs: usize = a.get(3).map(|s| s.parse().unwrap()).unwrap_or(2);
    let sen_epochs: usize = a.get(4).map(|s| s.parse().unwrap()).unwrap_or(8);
    let sen_lr: f64 = a.get(5).map(|s| s.parse().unwrap()).unwrap_or(3e-3);
    let sen_batch: usize = a.get(6).map(|s| s.parse().unwrap()).unwrap_or(16);
    let tau: f64 = a.get(7).map(|s| s.parse().unwrap()).unwrap_or(0.05);
    let tok_epochs: usize = a.get(8).map(|s| s.parse().unwrap()).unwrap_or(2);
    println!("cap_sen={cap_sen} sft={sft_epochs} sen={sen_epochs}@{sen_lr}/b{sen_batch} tau={tau} tok={tok_epochs}");

    let provider = HashingProvider::default();
    let tokenizer = Tokenizer::byte();
    let model_config = ModelConfig {
        max_len: 384,
        attention_mode: AttentionMode::Causal,
        ..ModelConfig::toy()
    };
    let mut wins = 0;
    let total_start = Instant::now();
    for seed in 0..reps {
        let start = Instant::now();
        let corpus = split_corpus(&synthetic_corpus(), 0.7, seed).unwrap();
        let graph = build_graph(&corpus, &provider, 0.45).unwrap();
        let aug_cfg = AugmentConfig { theta_sen: 0.3, cap_sen, ..AugmentConfig::default() };
        let out = augment_corpus(&corpus, &graph, &provider, None, &aug_cfg).unwrap();
        let train_sen: Vec<_> = out.q_sen.iter().filter(|s| s.split == Split::Train).cloned().collect();
        let test_sen: Vec<_> = out.q_sen.iter().filter(|s| s.split == Split::Test).cloned().collect();
        let train_tok: Vec<_> = out.q_tok.iter().filter(|s| s.split == Split::Train).cloned().collect();
        let test_tok: Vec<_> = out.q_tok.iter().filter(|s| s.split == Split::Test).cloned().collect();

        let sft_lr: f64 = std::env::var("SFT_LR").ok().and_then(|v| v.parse().ok()).unwrap_or(1e-3);
        let sft_batch: usize = std::env::var("SFT_BATCH").ok().and_then(|v| v.parse().ok()).unwrap_or(16);
        let sft_config = TrainConfig { seed, epochs_per_stage: sft_epochs, lr: sft_lr, batch_size: sft_batch, ..TrainConfig::default() };
        let sen_config = TrainConfig { seed, epochs_per_stage: sen_epochs, lr: sen_lr, batch_size: sen_batch, tau, ..TrainConfig::default() };
        let tok_config = TrainConfig { seed, epochs_per_stage: tok_epochs, ..TrainConfig::default() };
        let mut model = TinyLm::new(model_config.clone(), seed);
        sft_stage(&mut model, &train_sen, &train_tok, &tokenizer, &sft_config).unwrap();
        let sft_only = model.clone();
        let margin_before = embedding_margin(&model, &tokenizer, &train_sen).unwrap();
        let sen_curve = sen_stage(&mut model, &train_sen, &tokenizer, &sen_config).unwrap();
        let margin_after = embedding_margin(&model, &tokenizer, &train_sen).unwrap();
        let (sen_qca_only, _) = make_test_sets(&train_sen, &[]);
        let (tok_qca_only, _) = make_test_sets(&[], &train_tok);
        let ll = |m: &TinyLm, set: &[termforge::eval::QcaSample]| -> f64 {
            if set.is_empty() { return f64::NAN; }
            score_qca(m, &tokenizer, set, QcaScoringMode::Loglikelihood, 42).unwrap().accuracy
        };
        println!("  after sft: loglik sen {:.3} tok {:.3}", ll(&sft_only, &sen_qca_only), ll(&sft_only, &tok_qca_only));
        println!("  after sen: loglik sen {:.3} tok {:.3}", ll(&model, &sen_qca_only), ll(&model, &tok_qca_only));
        let pre_tok_sen = score_qca(&model, &tokenizer, &sen_qca_only, QcaScoringMode::EmbeddingSimilarity, 42).unwrap();
        let pre_tok_tok = score_qca(&model, &tokenizer, &tok_qca_only, QcaScoringMode::EmbeddingSimilarity, 42).unwrap();
        tok_stage(&mut model, &train_tok, &tokenizer, &tok_config).unwrap();
        let post_tok_sen = score_qca(&model, &tokenizer, &sen_qca_only, QcaScoringMode::EmbeddingSimilarity, 42).unwrap();
        let post_tok_tok = score_qca(&model, &tokenizer, &tok_qca_only, QcaScoringMode::EmbeddingSimilarity, 42).unwrap();
        println!("  after tok: loglik sen {:.3} tok {:.3}", ll(&model, &sen_qca_only), ll(&model, &tok_qca_only));
        println!("  train sen acc: {:.3} -> {:.3} (tok stage effect), train tok acc: {:.3} -> {:.3}",
            pre_tok_sen.accuracy, post_tok_sen.accuracy, pre_tok_tok.accuracy, post_tok_tok.accuracy);

        let (train_qca, _) = make_test_sets(&train_sen, &train_tok);
        let (test_qca, _) = make_test_sets(&test_sen, &test_tok);
        let full_train = score_qca(&model, &tokenizer, &train_qca, QcaScoringMode::EmbeddingSimilarity, 42).unwrap();
        let full_train_ll = score_qca(&model, &tokenizer, &train_qca, QcaScoringMode::Loglikelihood, 42).unwrap();
        println!("  train acc loglikelihood: {:.3}", full_train_ll.accuracy);
        let full_test = score_qca(&model, &tokenizer, &test_qca, QcaScoringMode::EmbeddingSimilarity, 42).unwrap();
        let abl_test = score_qca(&sft_only, &tokenizer, &test_qca, QcaScoringMode::EmbeddingSimilarity, 42).unwrap();
        let win = full_test.accuracy > abl_test.accuracy;
        if win { wins += 1; }
        println!(
            "seed {seed}: margin {margin_before:.3}->{margin_after:.3} | sen loss {:.3}->{:.3} | train acc {:.3} | test {:.3} vs {:.3} ({}) n={} | {:.0}s",
            sen_curve.first().unwrap(), sen_curve.last().unwrap(),
            full_train.accuracy, full_test.accuracy, abl_test.accuracy,
            if win { "WIN" } else { "lose" }, test_qca.len(),
            start.elapsed().as_secs_f64()
        );
    }
    println!("wins: {wins}/{reps}, total {:.0}s", total_start.elapsed().as_secs_f64());
}
