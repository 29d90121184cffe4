//! Three-stage optimization pipeline: supervised fine-tuning over both QCA
//! datasets, then sentence-level contrastive learning, then token-level
//! contrastive learning, in that fixed order.
//!
//! Updates use an adaptive-moment optimizer with decoupled weight decay and
//! a linear learning-rate decay to zero across each stage. All shuffling and
//! batching derives from named sub-seeds, so a fixed (seed, config, data)
//! triple reproduces checkpoints bitwise.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{SentenceQca, TokenQca};
use crate::config::derive_seed;
use crate::losses::{
    mix, sen_contrastive_loss, sft_loss, tok_loss, LossError, SftPair,
};
use crate::model::{
    accumulate_grads, load_checkpoint, save_checkpoint, ModelError, ParamMap, TinyLm,
};
use crate::par;
use crate::tokenizer::{TokenId, Tokenizer};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("stage `{0}` has no usable samples")]
    EmptyStage(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Hyperparameters for one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub epochs_per_stage: usize,
    pub seed: u64,
    pub grad_clip: Option<f64>,
    pub weight_decay: f64,
    /// Stage toggles; the fixed order is sft -> sen -> tok regardless.
    pub run_sft: bool,
    pub run_sen: bool,
    pub run_tok: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        // Desk-scale learning rate; the published full-scale range of
        // [5e-6, 5e-5] targets 8B-parameter backbones and stalls a model
        // this small.
        Self {
            lr: 1e-3,
            tau: 0.05,
            batch_size: 16,
            epochs_per_stage: 3,
            seed: 42,
            grad_clip: None,
            weight_decay: 0.01,
            run_sft: true,
            run_sen: true,
            run_tok: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) {
        assert!(self.lr > 0.0, "lr must be positive");
        assert!(self.tau > 0.0, "tau must be positive");
        assert!(self.batch_size >= 1, "batch_size must be at least 1");
        assert!(self.epochs_per_stage >= 1, "need at least one epoch");
    }
}

/// Adaptive-moment optimizer with decoupled weight decay.
pub struct Adam {
    m: ParamMap,
    v: ParamMap,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Adam {
    pub fn new(model: &TinyLm, weight_decay: f64) -> Self {
        Self {
            m: model.zero_grads(),
            v: model.zero_grads(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }

    pub fn step(&mut self, params: &mut ParamMap, grads: &ParamMap, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (key, p) in params.iter_mut() {
            let g = &grads[key];
            let m = self.m.get_mut(key).expect("moment tensor");
            let v = self.v.get_mut(key).expect("moment tensor");
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m.data[i] / bc1;
                let v_hat = v.data[i] / bc2;
                p.data[i] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * p.data[i]);
            }
        }
    }
}

fn clip_grads(grads: &mut ParamMap, clip: f64) {
    let norm: f64 = grads
        .values()
        .map(|t| t.data.iter().map(|g| g * g).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > clip {
        let k = clip / norm;
        for t in grads.values_mut() {
            t.scale(k);
        }
    }
}

fn scale_grads(grads: &mut ParamMap, k: f64) {
    for t in grads.values_mut() {
        t.scale(k);
    }
}

/// Truncate the condition to fit `cond ++ sep ++ target` into `max_len`,
/// keeping the head (the question comes first in every rendering).
fn fit_condition(mut cond: Vec<TokenId>, target_len: usize, max_len: usize) -> Vec<TokenId> {
    let budget = max_len.saturating_sub(target_len + 1);
    cond.truncate(budget.max(1));
    cond
}

/// Render the supervised pair for a sentence-level sample: the question plus
/// the lettered options in lexicographic order (content-determined, so the
/// answer's slot carries no usable position signal), targeting the answer
/// text.
pub fn render_sentence_sft(sample: &SentenceQca, tokenizer: &Tokenizer, max_len: usize) -> SftPair {
    let mut options: Vec<&str> = Vec::with_capacity(4);
    options.push(&sample.answer);
    options.extend(sample.negatives.iter().map(String::as_str));
    options.sort_unstable();
    let labels = ["A", "B", "C", "D", "E", "F", "G", "H"];
    let mut x = sample.question.clone();
    for (label, opt) in labels.iter().zip(&options) {
        x.push_str(&format!("\n{label}) {opt}"));
    }
    let mut target = tokenizer.encode(&sample.answer);
    target.push(tokenizer.eos());
    let condition = fit_condition(tokenizer.encode(&x), target.len(), max_len);
    SftPair { condition, target }
}

/// Render the supervised pair for a token-level sample: plain question to
/// answer term.
pub fn render_token_sft(sample: &TokenQca, tokenizer: &Tokenizer, max_len: usize) -> SftPair {
    let mut target = tokenizer.encode(&sample.answer);
    target.push(tokenizer.eos());
    let condition = fit_condition(tokenizer.encode(&sample.question), target.len(), max_len);
    SftPair { condition, target }
}

fn epoch_order(n: usize, seed: u64, stage: &str, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("{stage}-epoch-{epoch}")));
    order.shuffle(&mut rng);
    order
}

/// Per-stage training curve: mean per-sample loss for each epoch.
pub type LossCurve = Vec<f64>;

/// Stage 1: supervised fine-tuning over the union of both datasets.
pub fn sft_stage(
    model: &mut TinyLm,
    q_sen: &[SentenceQca],
    q_tok: &[TokenQca],
    tokenizer: &Tokenizer,
    config: &TrainConfig,
) -> Result<LossCurve, TrainError> {
    config.validate();
    let max_len = model.config.max_len;
    let mut pairs: Vec<SftPair> = Vec::with_capacity(q_sen.len() + q_tok.len());
    for s in q_sen {
        pairs.push(render_sentence_sft(s, tokenizer, max_len));
    }
    for t in q_tok {
        pairs.push(render_token_sft(t, tokenizer, max_len));
    }
    if pairs.is_empty() {
        return Err(TrainError::EmptyStage("sft".into()));
    }
    let sep = tokenizer.sep();
    let steps_per_epoch = pairs.len().div_ceil(config.batch_size);
    let total_steps = (config.epochs_per_stage * steps_per_epoch) as f64;
    let mut optimizer = Adam::new(model, config.weight_decay);
    let mut step = 0u64;
    let mut curve = Vec::with_capacity(config.epochs_per_stage);
    for epoch in 0..config.epochs_per_stage {
        let order = epoch_order(pairs.len(), config.seed, "sft", epoch);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<SftPair> = chunk.iter().map(|&i| pairs[i].clone()).collect();
            let (loss, mut grads) = sft_loss(model, &batch, sep)?;
            epoch_loss += loss;
            scale_grads(&mut grads, 1.0 / batch.len() as f64);
            if let Some(clip) = config.grad_clip {
                clip_grads(&mut grads, clip);
            }
            let lr_t = config.lr * (1.0 - step as f64 / total_steps);
            optimizer.step(&mut model.params, &grads, lr_t);
            step += 1;
        }
        curve.push(epoch_loss / pairs.len() as f64);
    }
    Ok(curve)
}

struct SenTokens {
    question: Vec<TokenId>,
    answer: Vec<TokenId>,
    negatives: Vec<Vec<TokenId>>,
}

fn clamp_tokens(mut t: Vec<TokenId>, max_len: usize) -> Vec<TokenId> {
    t.truncate(max_len);
    t
}

/// Stage 2: sentence-level contrastive learning over the sentence dataset.
pub fn sen_stage(
    model: &mut TinyLm,
    q_sen: &[SentenceQca],
    tokenizer: &Tokenizer,
    config: &TrainConfig,
) -> Result<LossCurve, TrainError> {
    config.validate();
    if q_sen.is_empty() {
        return Err(TrainError::EmptyStage("sen".into()));
    }
    let max_len = model.config.max_len;
    let samples: Vec<SenTokens> = q_sen
        .iter()
        .map(|s| SenTokens {
            question: clamp_tokens(tokenizer.encode(&s.question), max_len),
            answer: clamp_tokens(tokenizer.encode(&s.answer), max_len),
            negatives: s
                .negatives
                .iter()
                .map(|n| clamp_tokens(tokenizer.encode(n), max_len))
                .collect(),
        })
        .collect();
    let steps_per_epoch = samples.len().div_ceil(config.batch_size);
    let total_steps = (config.epochs_per_stage * steps_per_epoch) as f64;
    let mut optimizer = Adam::new(model, config.weight_decay);
    let mut step = 0u64;
    let mut curve = Vec::with_capacity(config.epochs_per_stage);
    for epoch in 0..config.epochs_per_stage {
        let order = epoch_order(samples.len(), config.seed, "sen", epoch);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let refs: Vec<&SenTokens> = chunk.iter().map(|&i| &samples[i]).collect();
            let results = par::map_collect(&refs, |s| {
                let mut g = model.zero_grads();
                sen_contrastive_loss(model, &s.question, &s.answer, &s.negatives, config.tau, &mut g)
                    .map(|l| (l, g))
            });
            let mut grads = model.zero_grads();
            let mut batch_loss = 0.0;
            for r in results {
                let (l, g) = r?;
                batch_loss += l;
                accumulate_grads(&mut grads, &g);
            }
            epoch_loss += batch_loss;
            scale_grads(&mut grads, 1.0 / refs.len() as f64);
            if let Some(clip) = config.grad_clip {
                clip_grads(&mut grads, clip);
            }
            let lr_t = config.lr * (1.0 - step as f64 / total_steps);
            optimizer.step(&mut model.params, &grads, lr_t);
            step += 1;
        }
        curve.push(epoch_loss / samples.len() as f64);
    }
    Ok(curve)
}

struct TokTokens {
    question: Vec<TokenId>,
    declarative: Vec<TokenId>,
    answer: Vec<TokenId>,
    negatives: Vec<Vec<TokenId>>,
}

/// Tokenize and pre-validate one token-level sample: the answer must remain
/// a contiguous subsequence of the declarative after tokenization, and the
/// longest mixed sequence must fit the model.
fn prepare_tok_sample(
    sample: &TokenQca,
    tokenizer: &Tokenizer,
    max_len: usize,
) -> Result<TokTokens, String> {
    let declarative = tokenizer.encode(&sample.declarative);
    let answer = tokenizer.encode(&sample.answer);
    let question = tokenizer.encode(&sample.question);
    let negatives: Vec<Vec<TokenId>> = sample
        .negatives
        .iter()
        .map(|n| tokenizer.encode(n))
        .collect();
    if mix(&declarative, &answer, &negatives[0]).is_err() {
        return Err("answer is not a contiguous token subsequence of the declarative".into());
    }
    let longest_neg = negatives.iter().map(Vec::len).max().unwrap_or(0);
    let needed = question.len() + 1 + declarative.len() - answer.len() + longest_neg;
    if needed > max_len {
        return Err(format!("mixed sequence length {needed} exceeds max_len {max_len}"));
    }
    Ok(TokTokens {
        question,
        declarative,
        answer,
        negatives,
    })
}

/// Stage 3: token-level contrastive learning over the token dataset.
/// Invalid samples (answer not tokenizable as a contiguous subsequence, or
/// oversized) are skipped; the stage fails only if none remain.
pub fn tok_stage(
    model: &mut TinyLm,
    q_tok: &[TokenQca],
    tokenizer: &Tokenizer,
    config: &TrainConfig,
) -> Result<LossCurve, TrainError> {
    config.validate();
    let max_len = model.config.max_len;
    let samples: Vec<TokTokens> = q_tok
        .iter()
        .filter_map(|s| prepare_tok_sample(s, tokenizer, max_len).ok())
        .collect();
    if samples.is_empty() {
        return Err(TrainError::EmptyStage("tok".into()));
    }
    let sep = tokenizer.sep();
    let steps_per_epoch = samples.len().div_ceil(config.batch_size);
    let total_steps = (config.epochs_per_stage * steps_per_epoch) as f64;
    let mut optimizer = Adam::new(model, config.weight_decay);
    let mut step = 0u64;
    let mut curve = Vec::with_capacity(config.epochs_per_stage);
    for epoch in 0..config.epochs_per_stage {
        let order = epoch_order(samples.len(), config.seed, "tok", epoch);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let refs: Vec<&TokTokens> = chunk.iter().map(|&i| &samples[i]).collect();
            let results = par::map_collect(&refs, |s| {
                tok_loss(model, &s.declarative, &s.answer, &s.negatives, &s.question, sep)
            });
            let mut grads = model.zero_grads();
            let mut batch_loss = 0.0;
            for r in results {
                let (l, g) = r?;
                batch_loss += l;
                accumulate_grads(&mut grads, &g);
            }
            epoch_loss += batch_loss;
            scale_grads(&mut grads, 1.0 / refs.len() as f64);
            if let Some(clip) = config.grad_clip {
                clip_grads(&mut grads, clip);
            }
            let lr_t = config.lr * (1.0 - step as f64 / total_steps);
            optimizer.step(&mut model.params, &grads, lr_t);
            step += 1;
        }
        curve.push(epoch_loss / samples.len() as f64);
    }
    Ok(curve)
}

/// Report for one stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    pub epoch_mean_loss: Vec<f64>,
    pub wall_clock_s: f64,
    pub checkpoint: Option<String>,
}

/// Full pipeline report: per-stage curves, timings, checkpoint lineage, and
/// the configuration that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub stages: Vec<StageReport>,
    pub final_checkpoint: Option<String>,
    pub config: TrainConfig,
}

fn stage_checkpoint(dir: &Path, stage: &str) -> PathBuf {
    dir.join(format!("after_{stage}.ckpt"))
}

/// Execute the pipeline strictly in the order sft -> sen -> tok, writing a
/// checkpoint after each stage when a directory is given. If a stage
/// checkpoint already exists on disk it is loaded and the stage skipped, so
/// a run resumes from the last completed stage.
pub fn run_pipeline(
    model: &mut TinyLm,
    q_sen: &[SentenceQca],
    q_tok: &[TokenQca],
    tokenizer: &Tokenizer,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainReport, TrainError> {
    config.validate();
    let mut report = TrainReport {
        stages: Vec::new(),
        final_checkpoint: None,
        config: config.clone(),
    };
    let mut lineage = vec!["init".to_string()];

    let stages: [(&str, bool); 3] = [
        ("sft", config.run_sft),
        ("sen", config.run_sen),
        ("tok", config.run_tok),
    ];
    for (name, enabled) in stages {
        if !enabled {
            continue;
        }
        let ckpt_path = checkpoint_dir.map(|d| stage_checkpoint(d, name));
        if let Some(path) = ckpt_path.as_ref().filter(|p| p.exists()) {
            let (loaded, loaded_lineage) = load_checkpoint(path)?;
            *model = loaded;
            lineage = loaded_lineage;
            report.stages.push(StageReport {
                name: name.to_string(),
                epoch_mean_loss: Vec::new(),
                wall_clock_s: 0.0,
                checkpoint: Some(path.display().to_string()),
            });
            report.final_checkpoint = Some(path.display().to_string());
            continue;
        }
        let start = Instant::now();
        let curve = match name {
            "sft" => sft_stage(model, q_sen, q_tok, tokenizer, config)?,
            "sen" => sen_stage(model, q_sen, tokenizer, config)?,
            _ => tok_stage(model, q_tok, tokenizer, config)?,
        };
        lineage.push(name.to_string());
        let mut entry = StageReport {
            name: name.to_string(),
            epoch_mean_loss: curve,
            wall_clock_s: start.elapsed().as_secs_f64(),
            checkpoint: None,
        };
        if let Some(path) = ckpt_path {
            save_checkpoint(model, &lineage, &path)?;
            entry.checkpoint = Some(path.display().to_string());
            report.final_checkpoint = Some(path.display().to_string());
        }
        report.stages.push(entry);
    }
    Ok(report)
}

/// Mean positive-vs-negative embedding margin over sentence samples:
/// `mean(unit(e_q) . unit(e_a)) - mean(unit(e_q) . unit(e_c))`, embeddings
/// taken from the model under bidirectional attention.
pub fn embedding_margin(
    model: &TinyLm,
    tokenizer: &Tokenizer,
    samples: &[SentenceQca],
) -> Result<f64, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyStage("margin".into()));
    }
    let max_len = model.config.max_len;
    let per_sample = par::map_collect(samples, |s| -> Result<(f64, f64, usize), TrainError> {
        let unit = |text: &str| -> Result<Vec<f64>, TrainError> {
            let e = model.embed_sequence(&clamp_tokens(tokenizer.encode(text), max_len))?;
            let n = e.norm();
            Ok(e.values().iter().map(|x| x / n).collect())
        };
        let q = unit(&s.question)?;
        let a = unit(&s.answer)?;
        let pos = crate::tensor::dot(&q, &a);
        let mut neg_sum = 0.0;
        for n in &s.negatives {
            neg_sum += crate::tensor::dot(&q, &unit(n)?);
        }
        Ok((pos, neg_sum, s.negatives.len()))
    });
    let mut pos_sum = 0.0;
    let mut neg_sum = 0.0;
    let mut neg_count = 0usize;
    for r in per_sample {
        let (p, ns, nc) = r?;
        pos_sum += p;
        neg_sum += ns;
        neg_count += nc;
    }
    Ok(pos_sum / samples.len() as f64 - neg_sum / neg_count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use crate::model::{AttentionMode, ModelConfig};

    fn tiny_model(seed: u64) -> TinyLm {
        TinyLm::new(
            ModelConfig {
                d_model: 16,
                n_layers: 1,
                n_heads: 2,
                d_ff: 32,
                max_len: 96,
                vocab_size: 260,
                attention_mode: AttentionMode::Causal,
            },
            seed,
        )
    }

    fn tok_sample() -> TokenQca {
        TokenQca {
            anchor_id: "a".into(),
            split: Split::Train,
            question: "Which term completes: the ____ files?".into(),
            answer: "clerk".into(),
            negatives: vec!["registrar".into()],
            declarative: "the clerk files".into(),
        }
    }

    fn sen_sample() -> SentenceQca {
        SentenceQca {
            anchor_id: "a".into(),
            split: Split::Train,
            question: "Which statement is correct?".into(),
            answer: "The clerk files daily.".into(),
            negatives: vec![
                "The registrar files daily.".into(),
                "The clerk never files.".into(),
                "Filing is optional.".into(),
            ],
        }
    }

    #[test]
    fn single_sample_overfits_below_threshold() {
        let mut model = tiny_model(3);
        let tokenizer = Tokenizer::byte();
        let sample = tok_sample();
        let config = TrainConfig {
            lr: 5e-3,
            epochs_per_stage: 500,
            batch_size: 1,
            seed: 7,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        sft_stage(&mut model, &[], &[sample.clone()], &tokenizer, &config).unwrap();
        let pair = render_token_sft(&sample, &tokenizer, model.config.max_len);
        let (loss, _) = sft_loss(&model, &[pair.clone()], tokenizer.sep()).unwrap();
        let per_token = loss / pair.target.len() as f64;
        assert!(per_token < 0.01, "memorization failed: {per_token} nats/token");
    }

    #[test]
    fn same_seed_gives_bitwise_identical_parameters() {
        let tokenizer = Tokenizer::byte();
        let config = TrainConfig {
            epochs_per_stage: 2,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let run = || {
            let mut model = tiny_model(3);
            sft_stage(&mut model, &[sen_sample()], &[tok_sample()], &tokenizer, &config).unwrap();
            sen_stage(&mut model, &[sen_sample()], &tokenizer, &config).unwrap();
            tok_stage(&mut model, &[tok_sample()], &tokenizer, &config).unwrap();
            model
        };
        let (a, b) = (run(), run());
        for (k, t) in &a.params {
            assert_eq!(t, &b.params[k], "parameter {k} diverged across runs");
        }
    }

    #[test]
    fn zero_lr_leaves_parameters_level() {
        // lr must be > 0 by contract; approximate the lr = 0 check with an
        // optimizer step at lr = 0 applied directly.
        let mut model = tiny_model(5);
        let before = model.params.clone();
        let mut opt = Adam::new(&model, 0.0);
        let grads = {
            let tokenizer = Tokenizer::byte();
            let (_, g) = sft_loss(
                &model,
                &[render_token_sft(&tok_sample(), &tokenizer, 96)],
                tokenizer.sep(),
            )
            .unwrap();
            g
        };
        opt.step(&mut model.params, &grads, 0.0);
        for (k, t) in &model.params {
            assert_eq!(t, &before[k], "parameter {k} moved at lr = 0");
        }
    }

    #[test]
    fn pipeline_runs_stages_in_order_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = tiny_model(1);
        let tokenizer = Tokenizer::byte();
        let config = TrainConfig {
            epochs_per_stage: 1,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let report = run_pipeline(
            &mut model,
            &[sen_sample()],
            &[tok_sample()],
            &tokenizer,
            &config,
            Some(dir.path()),
        )
        .unwrap();
        let names: Vec<&str> = report.stages.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, vec!["sft", "sen", "tok"]);
        let (final_model, lineage) =
            load_checkpoint(&dir.path().join("after_tok.ckpt")).unwrap();
        assert_eq!(lineage, vec!["init", "sft", "sen", "tok"]);
        for (k, t) in &model.params {
            assert_eq!(t, &final_model.params[k]);
        }
    }

    #[test]
    fn pipeline_resumes_from_existing_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let tokenizer = Tokenizer::byte();
        let config = TrainConfig {
            epochs_per_stage: 1,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let mut first = tiny_model(1);
        run_pipeline(
            &mut first,
            &[sen_sample()],
            &[tok_sample()],
            &tokenizer,
            &config,
            Some(dir.path()),
        )
        .unwrap();
        // second run with the same directory resumes (all stages skipped)
        let mut second = tiny_model(999); // different init, will be replaced
        let report = run_pipeline(
            &mut second,
            &[sen_sample()],
            &[tok_sample()],
            &tokenizer,
            &config,
            Some(dir.path()),
        )
        .unwrap();
        assert!(report.stages.iter().all(|s| s.epoch_mean_loss.is_empty()));
        for (k, t) in &first.params {
            assert_eq!(t, &second.params[k]);
        }
    }

    #[test]
    fn sen_stage_increases_embedding_margin_on_trained_samples() {
        let mut model = tiny_model(17);
        let tokenizer = Tokenizer::byte();
        let samples = vec![sen_sample()];
        let before = embedding_margin(&model, &tokenizer, &samples).unwrap();
        let config = TrainConfig {
            epochs_per_stage: 12,
            batch_size: 1,
            lr: 2e-3,
            ..TrainConfig::default()
        };
        sen_stage(&mut model, &samples, &tokenizer, &config).unwrap();
        let after = embedding_margin(&model, &tokenizer, &samples).unwrap();
        assert!(after > before, "margin must grow: {before} -> {after}");
    }

    #[test]
    fn empty_stages_error() {
        let mut model = tiny_model(2);
        let tokenizer = Tokenizer::byte();
        let config = TrainConfig::default();
        assert!(matches!(
            sft_stage(&mut model, &[], &[], &tokenizer, &config),
            Err(TrainError::EmptyStage(_))
        ));
        assert!(matches!(
            sen_stage(&mut model, &[], &tokenizer, &config),
            Err(TrainError::EmptyStage(_))
        ));
        assert!(matches!(
            tok_stage(&mut model, &[], &tokenizer, &config),
            Err(TrainError::EmptyStage(_))
        ));
    }
}
