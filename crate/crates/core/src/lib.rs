//! Terminology-aware contrastive fine-tuning at desk scale.
//!
//! The pipeline runs end to end on an entity-annotated corpus:
//!
//! 1. [`corpus`] — ingest, validate, and split sentence records; lexicon-based
//!    entity extraction.
//! 2. [`graph`] — build the sentence graph (sentence-level and token-level
//!    confusability edges) and per-anchor candidate sets.
//! 3. [`augment`] — generate multiple-choice (QCA) training samples from the
//!    graph, either offline from templates or through a chat-completion
//!    endpoint.
//! 4. [`model`] / [`losses`] / [`trainer`] — a small from-scratch
//!    autoregressive transformer with exact reverse-mode gradients, trained in
//!    three stages: supervised fine-tuning, sentence-level contrastive
//!    (InfoNCE over question/answer embeddings), and token-level contrastive
//!    (mixed-sequence likelihood/suppression).
//! 5. [`eval`] — QCA choice-selection and free-generation QA scoring with
//!    accuracy/precision/recall/F1 and BLEU/ROUGE.
//!
//! Heavy inner loops (graph construction, batch gradients, scoring) run on
//! rayon when the default `parallel` feature is enabled and fall back to
//! sequential loops without it; results are bitwise identical either way.

pub mod augment;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod eval;
pub mod graph;
pub mod losses;
pub mod model;
pub mod par;
pub mod synth;
pub mod tensor;
pub mod tokenizer;
pub mod trainer;

pub use corpus::{Corpus, EntityMention, SentenceRecord, Split, TermLexicon};
pub use embedding::{cosine, EmbeddingProvider, HashingProvider, Vector};
pub use graph::{CandidateSets, EdgeKind, SentenceGraph};
pub use model::{ModelConfig, TinyLm};
pub use tokenizer::Tokenizer;
