//! QCA sample generation from anchors and candidate sets.
//!
//! Two generation routes share the same validation: a remote chat-completion
//! client driven by the bundled prompt templates, and a deterministic offline
//! template generator so the whole pipeline runs with zero network access.
//! Parsed outputs are validated against the sample invariants before they
//! enter a dataset; rejects are logged in the augmentation report.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, EntityMention, SentenceRecord, Split};
use crate::embedding::{EmbeddingProvider, API_KEY_ENV};
use crate::graph::{candidate_sets, EntityRef, GraphError, SentenceGraph};

/// Default token-level prompt template, compiled in; a file path in the
/// config overrides it at runtime.
pub const TOKEN_PROMPT_TEMPLATE: &str = include_str!("../templates/token_prompt.txt");
/// Default sentence-level prompt template.
pub const SENTENCE_PROMPT_TEMPLATE: &str = include_str!("../templates/sentence_prompt.txt");

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("output missing tag `{0}`")]
    MissingTag(String),
    #[error("tag `{0}` has an empty value")]
    EmptyField(String),
    #[error("correct answer does not occur in the rephrased sentence")]
    AnswerNotInRephrased,
    #[error("correct answer matches none of the four choices")]
    CorrectMatchesNoChoice,
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("generation client failed after {attempts} attempts: {message}")]
    Client { attempts: u32, message: String },
    #[error("augmentation produced zero samples")]
    NoSamples,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Collapse whitespace runs and trim; the comparison form for answers and
/// choices.
pub fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Sentence-level QCA sample: a question, the correct full-sentence answer,
/// and exactly three wrong options (one derived from the negative sentence,
/// two hard negatives).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceQca {
    pub anchor_id: String,
    pub split: Split,
    pub question: String,
    pub answer: String,
    pub negatives: Vec<String>,
}

impl SentenceQca {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.negatives.len() != 3 {
            return Err(AugmentError::InvalidSample(format!(
                "expected 3 negatives, got {}",
                self.negatives.len()
            )));
        }
        let fields = [&self.question, &self.answer]
            .into_iter()
            .chain(self.negatives.iter());
        for f in fields {
            if f.trim().is_empty() {
                return Err(AugmentError::InvalidSample("empty field".into()));
            }
        }
        let answer_norm = normalize_ws(&self.answer);
        for n in &self.negatives {
            if normalize_ws(n) == answer_norm {
                return Err(AugmentError::InvalidSample(
                    "a negative equals the answer".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Token-level QCA sample: the answer is a term surface, the declarative
/// sentence contains it verbatim, and the negatives are confusable terms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenQca {
    pub anchor_id: String,
    pub split: Split,
    pub question: String,
    pub answer: String,
    pub negatives: Vec<String>,
    pub declarative: String,
}

impl TokenQca {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.negatives.is_empty() {
            return Err(AugmentError::InvalidSample("no negatives".into()));
        }
        if self.question.trim().is_empty()
            || self.answer.trim().is_empty()
            || self.declarative.trim().is_empty()
        {
            return Err(AugmentError::InvalidSample("empty field".into()));
        }
        if !self.declarative.contains(&self.answer) {
            return Err(AugmentError::InvalidSample(
                "answer does not occur verbatim in the declarative sentence".into(),
            ));
        }
        let mut seen = BTreeSet::new();
        for n in &self.negatives {
            if n == &self.answer {
                return Err(AugmentError::InvalidSample(
                    "a negative equals the answer".into(),
                ));
            }
            if !seen.insert(n.clone()) {
                return Err(AugmentError::InvalidSample("duplicate negative".into()));
            }
        }
        Ok(())
    }
}

/// Dataset line with a `kind` discriminator, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum QcaRecord {
    Sen(SentenceQca),
    Tok(TokenQca),
}

/// Chat-completion backend. Implementations must not block forever; the
/// remote client enforces a per-request timeout.
pub trait GenerationClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, AugmentError>;
}

/// HTTP chat-completion client: `POST {"model", "messages":
/// [{"role":"user","content"}], "temperature"}`, reading the first choice's
/// message content. Transient failures retry with exponential backoff.
pub struct RemoteChatClient {
    pub endpoint: String,
    pub model_name: String,
    pub max_retries: u32,
    pub temperature: f64,
    backoff_base: Duration,
    agent: ureq::Agent,
}

impl RemoteChatClient {
    pub fn new(endpoint: &str, model_name: &str, max_retries: u32, temperature: f64) -> Self {
        Self::with_timing(
            endpoint,
            model_name,
            max_retries,
            temperature,
            Duration::from_millis(200),
            Duration::from_secs(60),
        )
    }

    pub fn with_timing(
        endpoint: &str,
        model_name: &str,
        max_retries: u32,
        temperature: f64,
        backoff_base: Duration,
        timeout: Duration,
    ) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .new_agent();
        Self {
            endpoint: endpoint.to_string(),
            model_name: model_name.to_string(),
            max_retries,
            temperature,
            backoff_base,
            agent,
        }
    }

    fn request_once(&self, prompt: &str) -> Result<String, AugmentError> {
        let key = std::env::var(API_KEY_ENV).unwrap_or_default();
        let body = serde_json::json!({
            "model": self.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        });
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {key}"))
            .send_json(&body)
            .map_err(|e| AugmentError::Client {
                attempts: 1,
                message: e.to_string(),
            })?;
        let parsed: serde_json::Value =
            resp.body_mut().read_json().map_err(|e| AugmentError::Client {
                attempts: 1,
                message: format!("bad response body: {e}"),
            })?;
        parsed
            .get("choices")
            .and_then(|c| c.get(0))
            .and_then(|c| c.get("message"))
            .and_then(|m| m.get("content"))
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| AugmentError::Client {
                attempts: 1,
                message: "missing choices[0].message.content".into(),
            })
    }
}

impl GenerationClient for RemoteChatClient {
    fn complete(&self, prompt: &str) -> Result<String, AugmentError> {
        let mut last_message = String::new();
        for attempt in 0..=self.max_retries {
            match self.request_once(prompt) {
                Ok(text) => return Ok(text),
                Err(AugmentError::Client { message, .. }) => last_message = message,
                Err(other) => return Err(other),
            }
            if attempt < self.max_retries {
                std::thread::sleep(self.backoff_base * 2u32.pow(attempt));
            }
        }
        Err(AugmentError::Client {
            attempts: self.max_retries + 1,
            message: last_message,
        })
    }
}

fn fill_slots(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in slots {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

/// Render the token-level augmentation prompt for one anchor sentence and
/// one of its terms.
pub fn render_token_prompt(anchor: &SentenceRecord, term: &EntityMention, template: &str) -> String {
    fill_slots(
        template,
        &[("background", &anchor.text), ("term", &term.surface)],
    )
}

/// Render the sentence-level augmentation prompt for an anchor and the
/// negative sentence.
pub fn render_sentence_prompt(
    anchor: &SentenceRecord,
    negative: &SentenceRecord,
    template: &str,
) -> String {
    fill_slots(
        template,
        &[("anchor", &anchor.text), ("negative", &negative.text)],
    )
}

/// Split tagged output into `(tag, value)` pairs. A value runs until the
/// next tag line or end of input; surrounding whitespace and blank lines are
/// tolerated.
fn parse_tagged(raw: &str, tags: &[&str]) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    let mut current: Option<(String, String)> = None;
    for line in raw.lines() {
        let trimmed = line.trim();
        let mut matched = None;
        for tag in tags {
            let marker = format!("<{tag}>:");
            if let Some(rest) = trimmed.strip_prefix(marker.as_str()) {
                matched = Some((tag.to_string(), rest.trim().to_string()));
                break;
            }
        }
        match matched {
            Some((tag, first)) => {
                if let Some(done) = current.take() {
                    out.push(done);
                }
                current = Some((tag, first));
            }
            None => {
                if let Some((_, value)) = current.as_mut() {
                    if !trimmed.is_empty() {
                        if !value.is_empty() {
                            value.push(' ');
                        }
                        value.push_str(trimmed);
                    }
                }
            }
        }
    }
    if let Some(done) = current.take() {
        out.push(done);
    }
    out
}

fn required<'a>(
    fields: &'a [(String, String)],
    tag: &str,
) -> Result<&'a str, AugmentError> {
    let value = fields
        .iter()
        .find(|(t, _)| t == tag)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| AugmentError::MissingTag(tag.to_string()))?;
    if value.is_empty() {
        return Err(AugmentError::EmptyField(tag.to_string()));
    }
    Ok(value)
}

/// Parsed token-level generation output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenOutput {
    pub question: String,
    pub correct_answer: String,
    pub rephrased: String,
}

/// Parse the three tagged lines of a token-level output and check that the
/// answer occurs in the rephrased sentence.
pub fn parse_token_output(raw: &str) -> Result<TokenOutput, AugmentError> {
    let fields = parse_tagged(raw, &["Question", "Correct Answer", "Rephrased Sentence"]);
    let question = required(&fields, "Question")?.to_string();
    let correct_answer = required(&fields, "Correct Answer")?.to_string();
    let rephrased = required(&fields, "Rephrased Sentence")?.to_string();
    if !rephrased.contains(&correct_answer) {
        return Err(AugmentError::AnswerNotInRephrased);
    }
    Ok(TokenOutput {
        question,
        correct_answer,
        rephrased,
    })
}

/// Parsed sentence-level generation output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceOutput {
    pub question: String,
    pub choices: [String; 4],
    pub correct: String,
    /// Index of the choice matching the correct answer. The template asks
    /// for choice A; anything else is kept with a warning flag.
    pub correct_index: usize,
}

/// Parse a sentence-level output: question, choices A-D, and the correct
/// answer, which must equal one choice after whitespace normalization.
pub fn parse_sentence_output(raw: &str) -> Result<SentenceOutput, AugmentError> {
    let fields = parse_tagged(
        raw,
        &[
            "Question",
            "Choice A",
            "Choice B",
            "Choice C",
            "Choice D",
            "Correct Answer",
        ],
    );
    let question = required(&fields, "Question")?.to_string();
    let choices = [
        required(&fields, "Choice A")?.to_string(),
        required(&fields, "Choice B")?.to_string(),
        required(&fields, "Choice C")?.to_string(),
        required(&fields, "Choice D")?.to_string(),
    ];
    let correct = required(&fields, "Correct Answer")?.to_string();
    let correct_norm = normalize_ws(&correct);
    let correct_index = choices
        .iter()
        .position(|c| normalize_ws(c) == correct_norm)
        .ok_or(AugmentError::CorrectMatchesNoChoice)?;
    Ok(SentenceOutput {
        question,
        choices,
        correct,
        correct_index,
    })
}

/// Offline question for a token sample: the anchor text with the term
/// blanked out.
fn offline_token_question(anchor: &SentenceRecord, term: &EntityMention) -> String {
    let chars: Vec<char> = anchor.text.chars().collect();
    let mut blanked = String::new();
    blanked.extend(chars[..term.start].iter());
    blanked.push_str("____");
    blanked.extend(chars[term.end..].iter());
    format!("Which term completes: {blanked}?")
}

/// Build one token-level QCA sample. `client: None` uses the offline
/// template route, whose declarative sentence is the anchor text itself.
pub fn generate_token_qca(
    anchor: &SentenceRecord,
    c_anchor: &EntityMention,
    candidates: &[EntityRef],
    client: Option<&dyn GenerationClient>,
    template: &str,
) -> Result<TokenQca, AugmentError> {
    let answer = c_anchor.surface.clone();
    let mut negatives: Vec<String> = Vec::new();
    let mut seen = BTreeSet::new();
    for c in candidates {
        if c.surface != answer && seen.insert(c.surface.clone()) {
            negatives.push(c.surface.clone());
        }
    }
    if negatives.is_empty() {
        return Err(AugmentError::InvalidSample(
            "no usable negatives for term".into(),
        ));
    }
    let (question, declarative) = match client {
        None => (offline_token_question(anchor, c_anchor), anchor.text.clone()),
        Some(client) => {
            let prompt = render_token_prompt(anchor, c_anchor, template);
            let parsed = parse_token_output(&client.complete(&prompt)?)?;
            if !parsed.rephrased.contains(&answer) {
                return Err(AugmentError::InvalidSample(
                    "generated declarative lacks the term".into(),
                ));
            }
            (parsed.question, parsed.rephrased)
        }
    };
    let sample = TokenQca {
        anchor_id: anchor.id.clone(),
        split: anchor.split,
        question,
        answer,
        negatives,
        declarative,
    };
    sample.validate()?;
    Ok(sample)
}

fn last_word(text: &str) -> String {
    text.split_whitespace()
        .last()
        .unwrap_or("this")
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_string()
}

fn offline_sentence_question(anchor: &SentenceRecord) -> String {
    let subject = anchor
        .entities
        .first()
        .map(|m| m.surface.clone())
        .unwrap_or_else(|| anchor.category.clone());
    format!(
        "Which statement about the {} involving {} is correct?",
        subject,
        last_word(&anchor.text)
    )
}

/// Deterministic hard negative: swap one anchor entity surface for a
/// token-edge-similar entity, or fall back to a contradiction prefix.
fn offline_swap_negative(anchor: &SentenceRecord, swaps: &[(EntityMention, String)]) -> String {
    if let Some((mention, replacement)) = swaps.first() {
        let chars: Vec<char> = anchor.text.chars().collect();
        let mut out = String::new();
        out.extend(chars[..mention.start].iter());
        out.push_str(replacement);
        out.extend(chars[mention.end..].iter());
        out
    } else {
        format!("Contrary to the record, {}", anchor.text)
    }
}

/// Deterministic hard negative: wrap the clause in a leading negation
/// marker.
fn offline_negation_negative(text: &str) -> String {
    format!("It is not the case that {text}")
}

/// Build sentence-level QCA samples for an anchor, one per candidate
/// negative sentence. Offline hard negatives perturb the anchor: an entity
/// swap and a clause negation.
pub fn generate_sentence_qca(
    anchor: &SentenceRecord,
    s_sen: &[&SentenceRecord],
    swaps: &[(EntityMention, String)],
    client: Option<&dyn GenerationClient>,
    template: &str,
) -> Vec<Result<SentenceQca, AugmentError>> {
    s_sen
        .iter()
        .map(|s_j| {
            let sample = match client {
                None => SentenceQca {
                    anchor_id: anchor.id.clone(),
                    split: anchor.split,
                    question: offline_sentence_question(anchor),
                    answer: anchor.text.clone(),
                    negatives: vec![
                        s_j.text.clone(),
                        offline_swap_negative(anchor, swaps),
                        offline_negation_negative(&anchor.text),
                    ],
                },
                Some(client) => {
                    let prompt = render_sentence_prompt(anchor, s_j, template);
                    let parsed = parse_sentence_output(&client.complete(&prompt)?)?;
                    let negatives = parsed
                        .choices
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != parsed.correct_index)
                        .map(|(_, c)| c.clone())
                        .collect();
                    SentenceQca {
                        anchor_id: anchor.id.clone(),
                        split: anchor.split,
                        question: parsed.question,
                        answer: parsed.correct,
                        negatives,
                    }
                }
            };
            sample.validate()?;
            Ok(sample)
        })
        .collect()
}

/// Caps and thresholds for augmentation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Max sentence-level samples per anchor.
    pub cap_sen: usize,
    /// Max token-level samples per anchor.
    pub cap_tok: usize,
    /// Max negatives carried by one token-level sample.
    pub max_negatives: usize,
    /// Sentence-cosine threshold for candidate selection.
    pub theta_sen: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            cap_sen: 4,
            cap_tok: 4,
            max_negatives: 5,
            theta_sen: 0.7,
        }
    }
}

/// One rejected sample and why.
#[derive(Debug, Clone, Serialize)]
pub struct Rejection {
    pub anchor_id: String,
    pub stage: String,
    pub reason: String,
}

/// Augmentation result: the two datasets plus the rejection report.
#[derive(Debug, Default)]
pub struct AugmentOutput {
    pub q_sen: Vec<SentenceQca>,
    pub q_tok: Vec<TokenQca>,
    pub rejections: Vec<Rejection>,
}

/// Run augmentation over every anchor, each split handled independently so
/// no sample mixes train and test material. Per-sample failures accumulate
/// in the report; only a zero-sample outcome is an error.
pub fn augment_corpus(
    corpus: &Corpus,
    graph: &SentenceGraph,
    provider: &dyn EmbeddingProvider,
    client: Option<&dyn GenerationClient>,
    config: &AugmentConfig,
) -> Result<AugmentOutput, AugmentError> {
    let mut out = AugmentOutput::default();
    for anchor in &corpus.records {
        let cs = candidate_sets(graph, corpus, &anchor.id, provider, config.theta_sen)?;

        // sentence level: candidates restricted to the anchor's split
        let neighbors: Vec<&SentenceRecord> = cs
            .s_sen
            .iter()
            .filter_map(|id| corpus.record(id))
            .filter(|r| r.split == anchor.split)
            .take(config.cap_sen)
            .collect();
        // entity swaps for offline hard negatives, from same-split token candidates
        let swaps: Vec<(EntityMention, String)> = anchor
            .entities
            .iter()
            .filter_map(|m| {
                let key = EntityRef::from_mention(m);
                cs.c_tok.get(&key).and_then(|cands| {
                    cands
                        .iter()
                        .find(|c| {
                            c.entity.surface != m.surface
                                && corpus.record(&c.source_id).map(|r| r.split)
                                    == Some(anchor.split)
                        })
                        .map(|c| (m.clone(), c.entity.surface.clone()))
                })
            })
            .collect();
        if !neighbors.is_empty() {
            for result in
                generate_sentence_qca(anchor, &neighbors, &swaps, client, SENTENCE_PROMPT_TEMPLATE)
            {
                match result {
                    Ok(s) => out.q_sen.push(s),
                    Err(e) => out.rejections.push(Rejection {
                        anchor_id: anchor.id.clone(),
                        stage: "sen".into(),
                        reason: e.to_string(),
                    }),
                }
            }
        }

        // token level: one sample per anchor entity with same-split candidates
        let mut emitted = 0;
        for mention in &anchor.entities {
            if emitted >= config.cap_tok {
                break;
            }
            let key = EntityRef::from_mention(mention);
            let Some(cands) = cs.c_tok.get(&key) else {
                continue;
            };
            let usable: Vec<EntityRef> = cands
                .iter()
                .filter(|c| {
                    corpus.record(&c.source_id).map(|r| r.split) == Some(anchor.split)
                })
                .map(|c| c.entity.clone())
                .take(config.max_negatives)
                .collect();
            if usable.is_empty() {
                continue;
            }
            match generate_token_qca(anchor, mention, &usable, client, TOKEN_PROMPT_TEMPLATE) {
                Ok(s) => {
                    out.q_tok.push(s);
                    emitted += 1;
                }
                Err(e) => out.rejections.push(Rejection {
                    anchor_id: anchor.id.clone(),
                    stage: "tok".into(),
                    reason: e.to_string(),
                }),
            }
        }
    }
    if out.q_sen.is_empty() && out.q_tok.is_empty() {
        return Err(AugmentError::NoSamples);
    }
    Ok(out)
}

/// Serialize QCA records as JSON lines (with the `kind` discriminator).
pub fn qca_to_jsonl(sen: &[SentenceQca], tok: &[TokenQca]) -> String {
    let mut out = String::new();
    for s in sen {
        let rec = QcaRecord::Sen(s.clone());
        writeln!(out, "{}", serde_json::to_string(&rec).expect("sample serializes")).unwrap();
    }
    for t in tok {
        let rec = QcaRecord::Tok(t.clone());
        writeln!(out, "{}", serde_json::to_string(&rec).expect("sample serializes")).unwrap();
    }
    out
}

/// Load a JSONL QCA dataset written by [`qca_to_jsonl`].
pub fn load_qca_jsonl(path: &Path) -> Result<(Vec<SentenceQca>, Vec<TokenQca>), AugmentError> {
    let content = std::fs::read_to_string(path)
        .map_err(|e| AugmentError::InvalidSample(format!("read {}: {e}", path.display())))?;
    let mut sen = Vec::new();
    let mut tok = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: QcaRecord = serde_json::from_str(line)
            .map_err(|e| AugmentError::InvalidSample(format!("line {}: {e}", idx + 1)))?;
        match rec {
            QcaRecord::Sen(s) => {
                s.validate()?;
                sen.push(s);
            }
            QcaRecord::Tok(t) => {
                t.validate()?;
                tok.push(t);
            }
        }
    }
    Ok((sen, tok))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anchor_record() -> SentenceRecord {
        SentenceRecord {
            id: "a1".into(),
            text: "The supervisor must report irregular transfers to the council.".into(),
            category: "oversight".into(),
            entities: vec![EntityMention {
                surface: "supervisor".into(),
                start: 4,
                end: 14,
                canonical_id: Some("T1".into()),
            }],
            split: Split::Train,
        }
    }

    #[test]
    fn token_prompt_contains_format_tags_and_term_twice() {
        let rec = anchor_record();
        let prompt = render_token_prompt(&rec, &rec.entities[0], TOKEN_PROMPT_TEMPLATE);
        assert!(prompt.contains("<Correct Answer>:"));
        assert!(prompt.contains("<Rephrased Sentence>:"));
        assert!(prompt.contains("<Question>:"));
        assert!(prompt.matches("supervisor").count() >= 2);
        // deterministic
        assert_eq!(
            prompt,
            render_token_prompt(&rec, &rec.entities[0], TOKEN_PROMPT_TEMPLATE)
        );
        assert!(!prompt.contains("{term}") && !prompt.contains("{background}"));
    }

    #[test]
    fn sentence_prompt_contains_choice_tags() {
        let a = anchor_record();
        let mut b = anchor_record();
        b.id = "b1".into();
        b.text = "The inspector files the ledger.".into();
        b.entities.clear();
        let prompt = render_sentence_prompt(&a, &b, SENTENCE_PROMPT_TEMPLATE);
        for tag in ["<Question>:", "<Choice A>:", "<Choice B>:", "<Choice C>:", "<Choice D>:", "<Correct Answer>:"] {
            assert!(prompt.contains(tag), "missing {tag}");
        }
        assert!(prompt.contains(&a.text) && prompt.contains(&b.text));
    }

    #[test]
    fn parse_token_output_happy_path() {
        let raw = "<Question>: Q?\n<Correct Answer>: debtor\n<Rephrased Sentence>: The debtor must be notified.";
        let out = parse_token_output(raw).unwrap();
        assert_eq!(out.question, "Q?");
        assert_eq!(out.correct_answer, "debtor");
        assert_eq!(out.rephrased, "The debtor must be notified.");
    }

    #[test]
    fn parse_token_output_missing_tag_names_it() {
        let raw = "<Question>: Q?\n<Correct Answer>: debtor\n";
        match parse_token_output(raw).unwrap_err() {
            AugmentError::MissingTag(tag) => assert_eq!(tag, "Rephrased Sentence"),
            other => panic!("expected MissingTag, got {other:?}"),
        }
    }

    #[test]
    fn parse_token_output_rejects_answer_not_in_rephrased() {
        let raw = "<Question>: Q?\n<Correct Answer>: debtor\n<Rephrased Sentence>: The guarantor pays.";
        assert!(matches!(
            parse_token_output(raw),
            Err(AugmentError::AnswerNotInRephrased)
        ));
    }

    #[test]
    fn parse_token_output_tolerates_blank_lines_and_multiline_values() {
        let raw = "\n  <Question>: What duty\napplies here?\n\n<Correct Answer>: debtor\n<Rephrased Sentence>: The debtor\n pays promptly.\n \n";
        let out = parse_token_output(raw).unwrap();
        assert_eq!(out.question, "What duty applies here?");
        assert_eq!(out.rephrased, "The debtor pays promptly.");
    }

    #[test]
    fn parse_sentence_output_happy_and_reject_paths() {
        let raw = "<Question>: Which duty applies?\n<Choice A>: The supervisor reports.\n<Choice B>: The clerk reports.\n<Choice C>: The auditor reports.\n<Choice D>: Nobody reports.\n<Correct Answer>: The supervisor reports.";
        let out = parse_sentence_output(raw).unwrap();
        assert_eq!(out.correct_index, 0);
        assert_eq!(out.choices[1], "The clerk reports.");

        let bad = raw.replace("<Correct Answer>: The supervisor reports.", "<Correct Answer>: Unrelated text.");
        assert!(matches!(
            parse_sentence_output(&bad),
            Err(AugmentError::CorrectMatchesNoChoice)
        ));
    }

    #[test]
    fn parse_sentence_output_accepts_non_a_correct_with_index() {
        let raw = "<Question>: Q?\n<Choice A>: one.\n<Choice B>: two.\n<Choice C>: three.\n<Choice D>: four.\n<Correct Answer>: three.";
        let out = parse_sentence_output(raw).unwrap();
        assert_eq!(out.correct_index, 2);
    }

    #[test]
    fn render_parse_round_trip() {
        // a synthetic well-formed answer block renders and parses back exactly
        let block = format!(
            "<Question>: {}\n<Correct Answer>: {}\n<Rephrased Sentence>: {}",
            "What role reviews transfers?", "supervisor", "The supervisor reviews transfers."
        );
        let out = parse_token_output(&block).unwrap();
        assert_eq!(out.question, "What role reviews transfers?");
        assert_eq!(out.correct_answer, "supervisor");
        assert_eq!(out.rephrased, "The supervisor reviews transfers.");
    }

    #[test]
    fn offline_token_sample_holds_invariants_by_construction() {
        let rec = anchor_record();
        let negs = vec![
            EntityRef {
                canonical_id: Some("T2".into()),
                surface: "external supervisor".into(),
            },
            EntityRef {
                canonical_id: Some("T3".into()),
                surface: "director".into(),
            },
        ];
        let s = generate_token_qca(&rec, &rec.entities[0], &negs, None, TOKEN_PROMPT_TEMPLATE)
            .unwrap();
        assert_eq!(s.declarative, rec.text);
        assert_eq!(s.answer, "supervisor");
        assert_eq!(s.negatives.len(), 2);
        assert!(s.question.contains("____"));
        assert!(s.declarative.contains(&s.answer));
    }

    #[test]
    fn token_negatives_dedup_and_exclude_answer() {
        let rec = anchor_record();
        let negs = vec![
            EntityRef { canonical_id: Some("TX".into()), surface: "supervisor".into() },
            EntityRef { canonical_id: Some("T2".into()), surface: "director".into() },
            EntityRef { canonical_id: Some("T3".into()), surface: "director".into() },
        ];
        let s = generate_token_qca(&rec, &rec.entities[0], &negs, None, TOKEN_PROMPT_TEMPLATE)
            .unwrap();
        assert_eq!(s.negatives, vec!["director".to_string()]);
    }

    #[test]
    fn offline_sentence_samples_are_valid_and_deterministic() {
        let a = anchor_record();
        let mut b = anchor_record();
        b.id = "b1".into();
        b.text = "The external supervisor files the annual ledger.".into();
        let swaps = vec![(a.entities[0].clone(), "external supervisor".to_string())];
        let out1 = generate_sentence_qca(&a, &[&b], &swaps, None, SENTENCE_PROMPT_TEMPLATE);
        let out2 = generate_sentence_qca(&a, &[&b], &swaps, None, SENTENCE_PROMPT_TEMPLATE);
        assert_eq!(out1.len(), 1);
        let s1 = out1[0].as_ref().unwrap();
        let s2 = out2[0].as_ref().unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.negatives.len(), 3);
        assert_eq!(s1.negatives[0], b.text);
        assert!(s1.negatives[1].contains("external supervisor"));
        assert!(s1.negatives[2].starts_with("It is not the case that"));
    }

    #[test]
    fn qca_jsonl_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("qca.jsonl");
        let sen = vec![SentenceQca {
            anchor_id: "a".into(),
            split: Split::Train,
            question: "Q?".into(),
            answer: "The answer sentence.".into(),
            negatives: vec!["n1".into(), "n2".into(), "n3".into()],
        }];
        let tok = vec![TokenQca {
            anchor_id: "a".into(),
            split: Split::Test,
            question: "Which term completes: the ____ files?".into(),
            answer: "clerk".into(),
            negatives: vec!["registrar".into()],
            declarative: "the clerk files".into(),
        }];
        std::fs::write(&path, qca_to_jsonl(&sen, &tok)).unwrap();
        let (s2, t2) = load_qca_jsonl(&path).unwrap();
        assert_eq!(s2, sen);
        assert_eq!(t2, tok);
    }
}
