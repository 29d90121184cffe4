//! Training objectives: supervised next-token loss, sentence-level InfoNCE
//! over question/answer embeddings, and the token-level mixed-sequence loss
//! that rewards kept tokens and suppresses negative-origin tokens.
//!
//! Every loss returns exact reverse-mode parameter gradients through the
//! model's backward pass.

use thiserror::Error;

use crate::model::{accumulate_grads, ModelError, ParamMap, TinyLm};
use crate::par;
use crate::tokenizer::TokenId;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before logs so the
/// suppression term stays finite.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("positive span not found as a contiguous subsequence of the base sequence")]
    SpanNotFound,
    #[error("empty replacement (negative) sequence")]
    EmptyNegative,
    #[error("empty positive span")]
    EmptyPositive,
    #[error("empty batch")]
    EmptyBatch,
    #[error("embedding dim mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A mixed sequence: the base sequence with its positive span replaced by a
/// negative span, plus the binary mask marking which positions came from the
/// replacement (mask `false` = negative-origin).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixedSequence {
    pub tokens: Vec<TokenId>,
    pub mask: Vec<bool>,
    /// Half-open range of the replaced region inside `tokens`.
    pub pos_span: (usize, usize),
    pub source_t: Vec<TokenId>,
    pub source_z_plus: Vec<TokenId>,
    pub source_z_minus: Vec<TokenId>,
}

impl MixedSequence {
    /// Rebuild the original base sequence from the stored sources.
    pub fn reconstruct_base(&self) -> Vec<TokenId> {
        let (lo, hi) = self.pos_span;
        let mut out = Vec::with_capacity(self.source_t.len());
        out.extend_from_slice(&self.tokens[..lo]);
        out.extend_from_slice(&self.source_z_plus);
        out.extend_from_slice(&self.tokens[hi..]);
        out
    }
}

fn find_subsequence(haystack: &[TokenId], needle: &[TokenId]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    haystack.windows(needle.len()).position(|w| w == needle)
}

/// Replace the first occurrence of `z_plus` inside `t` with `z_minus`,
/// producing the mixed sequence and its mask.
pub fn mix(
    t: &[TokenId],
    z_plus: &[TokenId],
    z_minus: &[TokenId],
) -> Result<MixedSequence, LossError> {
    if z_plus.is_empty() {
        return Err(LossError::EmptyPositive);
    }
    if z_minus.is_empty() {
        return Err(LossError::EmptyNegative);
    }
    let start = find_subsequence(t, z_plus).ok_or(LossError::SpanNotFound)?;
    let mut tokens = Vec::with_capacity(t.len() - z_plus.len() + z_minus.len());
    tokens.extend_from_slice(&t[..start]);
    tokens.extend_from_slice(z_minus);
    tokens.extend_from_slice(&t[start + z_plus.len()..]);
    let mut mask = vec![true; tokens.len()];
    for m in mask.iter_mut().skip(start).take(z_minus.len()) {
        *m = false;
    }
    Ok(MixedSequence {
        tokens,
        mask,
        pos_span: (start, start + z_minus.len()),
        source_t: t.to_vec(),
        source_z_plus: z_plus.to_vec(),
        source_z_minus: z_minus.to_vec(),
    })
}

/// Masked next-token loss over `target` conditioned on `condition`:
/// positions with mask `true` accumulate `-log p(token)`, positions with
/// mask `false` accumulate `-log(1 - p(token))`, suppressing the token's
/// probability. Gradients accumulate into `grads`.
pub fn masked_token_loss(
    model: &TinyLm,
    condition: &[TokenId],
    target: &[TokenId],
    mask: &[bool],
    sep: TokenId,
    grads: &mut ParamMap,
) -> Result<f64, LossError> {
    assert_eq!(target.len(), mask.len(), "mask must cover the target");
    let (dists, cache) = model.forward_conditioned(condition, target, sep)?;
    let base = condition.len();
    let vocab = model.config.vocab_size;
    let mut loss = 0.0;
    let mut d_logits: Vec<(usize, Vec<f64>)> = Vec::with_capacity(target.len());
    for (j, (&tok, &keep)) in target.iter().zip(mask).enumerate() {
        let probs = &dists[j];
        let p = probs[tok as usize];
        let p_c = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        let mut row = vec![0.0; vocab];
        if keep {
            loss -= p_c.ln();
            // d(-ln p_tok)/d logit_i = p_i - [i == tok]
            if p > PROB_EPS && p < 1.0 - PROB_EPS {
                for (i, &pi) in probs.iter().enumerate() {
                    row[i] = pi - if i == tok as usize { 1.0 } else { 0.0 };
                }
            }
        } else {
            loss -= (1.0 - p_c).ln();
            // d(-ln(1 - p_tok))/d logit_i = p_tok (delta - p_i) / (1 - p_tok)
            if p > PROB_EPS && p < 1.0 - PROB_EPS {
                let k = p / (1.0 - p);
                for (i, &pi) in probs.iter().enumerate() {
                    row[i] = k * (if i == tok as usize { 1.0 } else { 0.0 } - pi);
                }
            }
        }
        d_logits.push((base + j, row));
    }
    model.backward_logits(&cache, &d_logits, grads);
    Ok(loss)
}

/// One supervised pair: the rendered input and the target answer tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SftPair {
    pub condition: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

/// Supervised loss for a single pair: token-level negative log-likelihood of
/// the target conditioned on the input.
pub fn sft_sample_loss(
    model: &TinyLm,
    pair: &SftPair,
    sep: TokenId,
    grads: &mut ParamMap,
) -> Result<f64, LossError> {
    let mask = vec![true; pair.target.len()];
    masked_token_loss(model, &pair.condition, &pair.target, &mask, sep, grads)
}

/// Sum of per-pair supervised losses over the batch, with gradients.
/// Batch members evaluate in parallel; the reduction is ordered, so the
/// result is bitwise reproducible.
pub fn sft_loss(
    model: &TinyLm,
    batch: &[SftPair],
    sep: TokenId,
) -> Result<(f64, ParamMap), LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let per_sample = par::map_collect(batch, |pair| {
        let mut g = model.zero_grads();
        sft_sample_loss(model, pair, sep, &mut g).map(|l| (l, g))
    });
    let mut loss = 0.0;
    let mut grads = model.zero_grads();
    for r in per_sample {
        let (l, g) = r?;
        loss += l;
        accumulate_grads(&mut grads, &g);
    }
    Ok((loss, grads))
}

/// Mixed-sequence loss: build the mixed sequence, then score kept positions
/// with likelihood and replaced positions with suppression.
pub fn mix_loss(
    model: &TinyLm,
    t: &[TokenId],
    z_plus: &[TokenId],
    z_minus: &[TokenId],
    condition: &[TokenId],
    sep: TokenId,
    grads: &mut ParamMap,
) -> Result<f64, LossError> {
    let mixed = mix(t, z_plus, z_minus)?;
    masked_token_loss(model, condition, &mixed.tokens, &mixed.mask, sep, grads)
}

/// Token-level contrastive loss: the sum of [`mix_loss`] over every negative
/// in listed order. The accumulation order is part of the contract, so the
/// result equals the iterated sum bitwise.
pub fn tok_loss(
    model: &TinyLm,
    t: &[TokenId],
    z_plus: &[TokenId],
    negatives: &[Vec<TokenId>],
    condition: &[TokenId],
    sep: TokenId,
) -> Result<(f64, ParamMap), LossError> {
    if negatives.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let mut loss = 0.0;
    let mut grads = model.zero_grads();
    for z_minus in negatives {
        loss += mix_loss(model, t, z_plus, z_minus, condition, sep, &mut grads)?;
    }
    Ok((loss, grads))
}

/// Result of the InfoNCE computation on raw embedding vectors: the loss and
/// the gradients with respect to each input vector.
#[derive(Debug, Clone)]
pub struct InfoNceGrads {
    pub loss: f64,
    pub d_query: Vec<f64>,
    pub d_answer: Vec<f64>,
    pub d_negatives: Vec<Vec<f64>>,
}

/// InfoNCE over one positive and `k` negatives: the softmax denominator runs
/// over all `k + 1` options (answer included), similarities are raw dot
/// products of the inputs, scaled by `1/tau`.
pub fn sen_infonce(
    e_query: &[f64],
    e_answer: &[f64],
    e_negatives: &[Vec<f64>],
    tau: f64,
) -> Result<InfoNceGrads, LossError> {
    assert!(tau > 0.0, "temperature must be positive");
    if e_negatives.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let dim = e_query.len();
    if e_answer.len() != dim {
        return Err(LossError::DimMismatch(dim, e_answer.len()));
    }
    for n in e_negatives {
        if n.len() != dim {
            return Err(LossError::DimMismatch(dim, n.len()));
        }
    }
    let n_opts = 1 + e_negatives.len();
    let mut logits = Vec::with_capacity(n_opts);
    logits.push(crate::tensor::dot(e_query, e_answer) / tau);
    for n in e_negatives {
        logits.push(crate::tensor::dot(e_query, n) / tau);
    }
    let probs = crate::tensor::softmax(&logits);
    let loss = -probs[0].max(PROB_EPS).ln();

    // d loss / d logit_j = p_j - [j == 0]; d logit_j / d sim_j = 1/tau
    let mut d_query = vec![0.0; dim];
    let mut d_answer = vec![0.0; dim];
    let mut d_negatives = vec![vec![0.0; dim]; e_negatives.len()];
    let d0 = (probs[0] - 1.0) / tau;
    for i in 0..dim {
        d_query[i] += d0 * e_answer[i];
        d_answer[i] = d0 * e_query[i];
    }
    for (j, n) in e_negatives.iter().enumerate() {
        let dj = probs[j + 1] / tau;
        for i in 0..dim {
            d_query[i] += dj * n[i];
            d_negatives[j][i] = dj * e_query[i];
        }
    }
    Ok(InfoNceGrads {
        loss,
        d_query,
        d_answer,
        d_negatives,
    })
}

fn normalize_rows(v: &[f64]) -> (Vec<f64>, f64) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (v.iter().map(|x| x / norm).collect(), norm)
}

/// Chain an upstream gradient on the unit-normalized vector back to the raw
/// vector: `d_raw = (d_unit - unit * (unit . d_unit)) / norm`.
fn normalize_backward(unit: &[f64], norm: f64, d_unit: &[f64]) -> Vec<f64> {
    let proj = crate::tensor::dot(unit, d_unit);
    unit.iter()
        .zip(d_unit)
        .map(|(u, d)| (d - u * proj) / norm)
        .collect()
}

/// Sentence-level contrastive loss for one sample, end to end through the
/// model: embeds question, answer, and negatives under bidirectional
/// attention (final-token hidden state), L2-normalizes, applies InfoNCE, and
/// backpropagates through all embedding passes.
pub fn sen_contrastive_loss(
    model: &TinyLm,
    question: &[TokenId],
    answer: &[TokenId],
    negatives: &[Vec<TokenId>],
    tau: f64,
    grads: &mut ParamMap,
) -> Result<f64, LossError> {
    if negatives.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let (e_q, c_q) = model.embed_sequence_with_cache(question)?;
    let (e_a, c_a) = model.embed_sequence_with_cache(answer)?;
    let mut neg_caches = Vec::with_capacity(negatives.len());
    let mut neg_units = Vec::with_capacity(negatives.len());
    let mut neg_norms = Vec::with_capacity(negatives.len());
    for n in negatives {
        let (e_n, c_n) = model.embed_sequence_with_cache(n)?;
        let (unit, norm) = normalize_rows(e_n.values());
        neg_caches.push(c_n);
        neg_units.push(unit);
        neg_norms.push(norm);
    }
    let (u_q, n_q) = normalize_rows(e_q.values());
    let (u_a, n_a) = normalize_rows(e_a.values());

    let nce = sen_infonce(&u_q, &u_a, &neg_units, tau)?;

    let d = model.config.d_model;
    let scatter = |cache: &crate::model::ForwardCache,
                   unit: &[f64],
                   norm: f64,
                   d_unit: &[f64],
                   grads: &mut ParamMap| {
        let d_raw = normalize_backward(unit, norm, d_unit);
        let mut d_hidden = vec![vec![0.0; d]; cache.len()];
        *d_hidden.last_mut().expect("non-empty sequence") = d_raw;
        model.backward_hidden(cache, &d_hidden, grads);
    };
    scatter(&c_q, &u_q, n_q, &nce.d_query, grads);
    scatter(&c_a, &u_a, n_a, &nce.d_answer, grads);
    for ((cache, unit), (norm, d_unit)) in neg_caches
        .iter()
        .zip(&neg_units)
        .zip(neg_norms.iter().zip(&nce.d_negatives))
    {
        scatter(cache, unit, *norm, d_unit, grads);
    }
    Ok(nce.loss)
}
