// dev probe: per-option normalized logp on sen samples after memorization
use termforge::augment::{augment_corpus, AugmentConfig};
use termforge::corpus::{split_corpus, Split};
use termforge::embedding::HashingProvider;
use termforge::graph::build_graph;
use termforge::model::{AttentionMode, ModelConfig, TinyLm};
use termforge::synth::synthetic_corpus;
use termforge::tokenizer::Tokenizer;
use termforge::trainer::{render_sentence_sft, sft_stage, TrainConfig};

fn main() {
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
    for round in 0..4u64 {
        let config = TrainConfig { seed: round, epochs_per_stage: 20, lr: 3e-3, batch_size: 4, ..TrainConfig::default() };
        sft_stage(&mut model, &train_sen, &train_tok, &tokenizer, &config).unwrap();
    }
    // score three samples by hand
    for s in train_sen.iter().take(3) {
        let pair = render_sentence_sft(s, &tokenizer, 320);
        println!("sample {}: q = {}", s.anchor_id, s.question);
        let mut options = vec![s.answer.clone()];
        options.extend(s.negatives.clone());
        options.sort_unstable();
        // the same sorted x the trainer used
        let x = tokenizer.decode(&pair.condition);
        for opt in &options {
            let target = tokenizer.encode(opt);
            let cond = tokenizer.encode(&x);
            let (dists, _) = model.forward_conditioned(&cond, &target, tokenizer.sep()).unwrap();
            let total: f64 = target.iter().enumerate().map(|(j, &t)| dists[j][t as usize].max(1e-300).ln()).sum();
            let marker = if *opt == s.answer { "  <- ANSWER" } else { "" };
            println!("   {:>8.4} | {}{}", total / target.len() as f64, opt, marker);
        }
    }
}
