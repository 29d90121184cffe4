//! Corpus ingestion, validation, entity extraction, and train/test splitting.
//!
//! A corpus is a list of sentence records, each carrying its entity mentions
//! (character-offset spans), a category label, and a split assignment. Files
//! are UTF-8 JSON lines, one record per line. All character offsets count
//! Unicode scalar values, not bytes, so spans stay portable.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("duplicate record id `{id}` (line {line})")]
    DuplicateId { id: String, line: usize },
    #[error("record `{id}`: span ({start},{end}) does not slice to surface `{surface}`")]
    SpanMismatch {
        id: String,
        start: usize,
        end: usize,
        surface: String,
    },
    #[error("record `{id}`: span ({start},{end}) out of bounds for text of length {len}")]
    SpanOutOfBounds {
        id: String,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("record `{id}`: overlapping entity mentions")]
    OverlappingMentions { id: String },
    #[error("record `{id}`: text empty after trimming")]
    EmptyText { id: String },
    #[error("lexicon contains an empty surface form")]
    EmptyLexiconSurface,
    #[error("lexicon surface `{0}` listed twice")]
    DuplicateLexiconSurface(String),
    #[error("split requested but records are already assigned")]
    AlreadySplit,
    #[error("corpus mixes assigned and unassigned splits")]
    InconsistentSplits,
}

/// Train/test assignment of a sentence record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Unassigned,
}

/// One entity occurrence inside a sentence.
///
/// `span` is a half-open `(start, end)` range in Unicode scalar values;
/// slicing the sentence text at the span yields `surface` exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub surface: String,
    pub start: usize,
    pub end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canonical_id: Option<String>,
}

impl EntityMention {
    /// Canonical key used when comparing entities across sentences: the
    /// canonical id when present, otherwise the surface form itself.
    pub fn canonical_key(&self) -> &str {
        self.canonical_id.as_deref().unwrap_or(&self.surface)
    }
}

/// One corpus sentence: a node of the sentence graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub id: String,
    pub text: String,
    pub category: String,
    #[serde(default)]
    pub entities: Vec<EntityMention>,
    #[serde(
        default = "unassigned",
        skip_serializing_if = "is_unassigned",
        rename = "split"
    )]
    pub split: Split,
}

fn unassigned() -> Split {
    Split::Unassigned
}

fn is_unassigned(s: &Split) -> bool {
    *s == Split::Unassigned
}

/// Surface form → canonical id map for deterministic entity extraction.
#[derive(Debug, Clone, Default)]
pub struct TermLexicon {
    entries: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct LexiconLine {
    surface: String,
    canonical_id: String,
}

impl TermLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, surface: &str, canonical_id: &str) -> Result<(), CorpusError> {
        if surface.is_empty() {
            return Err(CorpusError::EmptyLexiconSurface);
        }
        if self.entries.contains_key(surface) {
            return Err(CorpusError::DuplicateLexiconSurface(surface.to_string()));
        }
        self.entries
            .insert(surface.to_string(), canonical_id.to_string());
        Ok(())
    }

    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, CorpusError> {
        let mut lex = Self::new();
        for (s, c) in pairs {
            lex.insert(s, c)?;
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let content = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut lex = Self::new();
        for (idx, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: LexiconLine =
                serde_json::from_str(line).map_err(|e| CorpusError::MalformedLine {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            lex.insert(&parsed.surface, &parsed.canonical_id)?;
        }
        Ok(lex)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = String::new();
        for (surface, canonical_id) in &self.entries {
            let line = LexiconLine {
                surface: surface.clone(),
                canonical_id: canonical_id.clone(),
            };
            out.push_str(&serde_json::to_string(&line).expect("lexicon line serializes"));
            out.push('\n');
        }
        write_file(path, out.as_bytes())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &String)> {
        self.entries.iter()
    }
}

/// An ingested corpus. Immutable after load; split assignments are the only
/// state [`split_corpus`] changes, and it returns a new corpus.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub records: Vec<SentenceRecord>,
    pub lexicon: Option<TermLexicon>,
}

impl Corpus {
    pub fn new(records: Vec<SentenceRecord>) -> Result<Self, CorpusError> {
        validate_records(&records)?;
        Ok(Self {
            records,
            lexicon: None,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, id: &str) -> Option<&SentenceRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Records belonging to `split`.
    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &SentenceRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

fn validate_record(rec: &SentenceRecord) -> Result<(), CorpusError> {
    if rec.text.trim().is_empty() {
        return Err(CorpusError::EmptyText { id: rec.id.clone() });
    }
    let chars: Vec<char> = rec.text.chars().collect();
    let mut spans: Vec<(usize, usize)> = Vec::with_capacity(rec.entities.len());
    for m in &rec.entities {
        if m.start >= m.end || m.end > chars.len() {
            return Err(CorpusError::SpanOutOfBounds {
                id: rec.id.clone(),
                start: m.start,
                end: m.end,
                len: chars.len(),
            });
        }
        let sliced: String = chars[m.start..m.end].iter().collect();
        if sliced != m.surface {
            return Err(CorpusError::SpanMismatch {
                id: rec.id.clone(),
                start: m.start,
                end: m.end,
                surface: m.surface.clone(),
            });
        }
        spans.push((m.start, m.end));
    }
    spans.sort_unstable();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(CorpusError::OverlappingMentions { id: rec.id.clone() });
        }
    }
    Ok(())
}

fn validate_records(records: &[SentenceRecord]) -> Result<(), CorpusError> {
    let mut seen: HashSet<&str> = HashSet::with_capacity(records.len());
    let mut any_assigned = false;
    let mut any_unassigned = false;
    for (idx, rec) in records.iter().enumerate() {
        if !seen.insert(&rec.id) {
            return Err(CorpusError::DuplicateId {
                id: rec.id.clone(),
                line: idx + 1,
            });
        }
        validate_record(rec)?;
        match rec.split {
            Split::Unassigned => any_unassigned = true,
            _ => any_assigned = true,
        }
    }
    if any_assigned && any_unassigned {
        return Err(CorpusError::InconsistentSplits);
    }
    Ok(())
}

/// Load a JSON-lines corpus file, validating every record invariant.
/// Input order is preserved.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let content = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut records = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: SentenceRecord =
            serde_json::from_str(line).map_err(|e| CorpusError::MalformedLine {
                line: idx + 1,
                message: e.to_string(),
            })?;
        records.push(rec);
    }
    validate_records(&records)?;
    Ok(Corpus {
        records,
        lexicon: None,
    })
}

/// Write the corpus in canonical JSON-lines form (one record per line,
/// newline-terminated). `save_corpus(load_corpus(f))` reproduces a canonical
/// file byte for byte.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let mut out = String::new();
    for rec in &corpus.records {
        out.push_str(&serde_json::to_string(rec).expect("record serializes"));
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CorpusError> {
    let mut f = fs::File::create(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(bytes).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Leftmost-longest lexicon matching over the text.
///
/// Scans left to right in character space; at each position the longest
/// matching lexicon surface wins and its region is consumed, so matches never
/// overlap.
pub fn extract_entities(text: &str, lexicon: &TermLexicon) -> Vec<EntityMention> {
    let chars: Vec<char> = text.chars().collect();
    let surfaces: Vec<(Vec<char>, &str, &str)> = lexicon
        .entries
        .iter()
        .map(|(s, c)| (s.chars().collect(), s.as_str(), c.as_str()))
        .collect();

    let mut mentions = Vec::new();
    let mut pos = 0;
    while pos < chars.len() {
        let mut best: Option<&(Vec<char>, &str, &str)> = None;
        for cand in &surfaces {
            let len = cand.0.len();
            if pos + len <= chars.len() && chars[pos..pos + len] == cand.0[..] {
                match best {
                    Some(b) if b.0.len() >= len => {}
                    _ => best = Some(cand),
                }
            }
        }
        if let Some((surface_chars, surface, canonical)) = best {
            mentions.push(EntityMention {
                surface: (*surface).to_string(),
                start: pos,
                end: pos + surface_chars.len(),
                canonical_id: Some((*canonical).to_string()),
            });
            pos += surface_chars.len();
        } else {
            pos += 1;
        }
    }
    mentions
}

/// Deterministically shuffle records by `seed` and assign the first
/// `ceil(train_fraction * n)` of the shuffled order to train, the rest to
/// test. Must run before augmentation so generated samples never cross
/// splits.
pub fn split_corpus(
    corpus: &Corpus,
    train_fraction: f64,
    seed: u64,
) -> Result<Corpus, CorpusError> {
    assert!(
        train_fraction > 0.0 && train_fraction < 1.0,
        "train_fraction must lie in (0,1)"
    );
    if corpus.records.iter().any(|r| r.split != Split::Unassigned) {
        return Err(CorpusError::AlreadySplit);
    }
    let n = corpus.records.len();
    let n_train = (train_fraction * n as f64).ceil() as usize;

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut records = corpus.records.clone();
    for (rank, &idx) in order.iter().enumerate() {
        records[idx].split = if rank < n_train {
            Split::Train
        } else {
            Split::Test
        };
    }
    Ok(Corpus {
        records,
        lexicon: corpus.lexicon.clone(),
    })
}

/// Fill empty entity lists by lexicon extraction. Pre-annotated records are
/// left untouched.
pub fn fill_entities(corpus: &mut Corpus, lexicon: &TermLexicon) {
    for rec in &mut corpus.records {
        if rec.entities.is_empty() {
            rec.entities = extract_entities(&rec.text, lexicon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, text: &str) -> SentenceRecord {
        SentenceRecord {
            id: id.to_string(),
            text: text.to_string(),
            category: "general".to_string(),
            entities: vec![],
            split: Split::Unassigned,
        }
    }

    #[test]
    fn load_preserves_order_and_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"text\":\"first sentence\",\"category\":\"x\",\"entities\":[]}\n\
             {\"id\":\"b\",\"text\":\"second sentence\",\"category\":\"y\",\"entities\":[]}\n",
        )
        .unwrap();
        let corpus = load_corpus(&path).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.records[0].id, "a");
        assert_eq!(corpus.records[1].id, "b");
    }

    #[test]
    fn span_surface_mismatch_names_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"bad1\",\"text\":\"the supervisor reports\",\"category\":\"x\",\
             \"entities\":[{\"surface\":\"supervisor\",\"start\":0,\"end\":10}]}\n",
        )
        .unwrap();
        let err = load_corpus(&path).unwrap_err();
        match err {
            CorpusError::SpanMismatch { id, .. } => assert_eq!(id, "bad1"),
            other => panic!("expected SpanMismatch, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"text\":\"ok sentence\",\"category\":\"x\"}\nnot json\n",
        )
        .unwrap();
        match load_corpus(&path).unwrap_err() {
            CorpusError::MalformedLine { line, .. } => assert_eq!(line, 2),
            other => panic!("expected MalformedLine, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let recs = vec![rec("a", "one"), rec("a", "two")];
        match Corpus::new(recs).unwrap_err() {
            CorpusError::DuplicateId { id, .. } => assert_eq!(id, "a"),
            other => panic!("expected DuplicateId, got {other:?}"),
        }
    }

    #[test]
    fn large_corpus_loads_with_all_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rules.jsonl");
        let mut content = String::new();
        for i in 0..425 {
            content.push_str(&format!(
                "{{\"id\":\"rule-{i}\",\"text\":\"regulatory rule number {i}\",\"category\":\"reg\",\"entities\":[]}}\n"
            ));
        }
        std::fs::write(&path, content).unwrap();
        let corpus = load_corpus(&path).unwrap();
        assert_eq!(corpus.len(), 425);
    }

    #[test]
    fn extraction_single_match_span() {
        let lex = TermLexicon::from_pairs([("supervisor", "T1")]).unwrap();
        let got = extract_entities("the supervisor reports", &lex);
        assert_eq!(got.len(), 1);
        assert_eq!((got[0].start, got[0].end), (4, 14));
        assert_eq!(got[0].surface, "supervisor");
        assert_eq!(got[0].canonical_id.as_deref(), Some("T1"));
    }

    #[test]
    fn extraction_longest_match_wins() {
        let lex = TermLexicon::from_pairs([("board", "T1"), ("board secretary", "T2")]).unwrap();
        let got = extract_entities("notify the board secretary today", &lex);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].canonical_id.as_deref(), Some("T2"));
        assert_eq!(got[0].surface, "board secretary");
    }

    #[test]
    fn extraction_no_hits_is_empty() {
        let lex = TermLexicon::from_pairs([("supervisor", "T1")]).unwrap();
        assert!(extract_entities("nothing relevant here", &lex).is_empty());
    }

    #[test]
    fn extraction_offsets_are_chars_not_bytes() {
        let lex = TermLexicon::from_pairs([("董事", "T1")]).unwrap();
        let text = "公司董事会议";
        let got = extract_entities(text, &lex);
        assert_eq!(got.len(), 1);
        assert_eq!((got[0].start, got[0].end), (2, 4));
        let sliced: String = text.chars().skip(2).take(2).collect();
        assert_eq!(sliced, got[0].surface);
    }

    #[test]
    fn split_seven_three() {
        let recs = (0..10).map(|i| rec(&format!("r{i}"), "text body")).collect();
        let corpus = Corpus::new(recs).unwrap();
        let split = split_corpus(&corpus, 0.7, 1).unwrap();
        assert_eq!(split.in_split(Split::Train).count(), 7);
        assert_eq!(split.in_split(Split::Test).count(), 3);
    }

    #[test]
    fn split_is_deterministic() {
        let recs: Vec<_> = (0..50).map(|i| rec(&format!("r{i}"), "text body")).collect();
        let corpus = Corpus::new(recs).unwrap();
        let a = split_corpus(&corpus, 0.7, 9).unwrap();
        let b = split_corpus(&corpus, 0.7, 9).unwrap();
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.split, y.split);
        }
    }

    #[test]
    fn split_ceiling_on_larger_corpus() {
        let recs: Vec<_> = (0..1038).map(|i| rec(&format!("q{i}"), "question text")).collect();
        let corpus = Corpus::new(recs).unwrap();
        let split = split_corpus(&corpus, 0.7, 3).unwrap();
        assert_eq!(split.in_split(Split::Train).count(), 727);
        assert_eq!(split.in_split(Split::Test).count(), 311);
    }

    #[test]
    fn split_rejects_assigned_records() {
        let mut r = rec("a", "text");
        r.split = Split::Train;
        let corpus = Corpus {
            records: vec![r],
            lexicon: None,
        };
        assert!(matches!(
            split_corpus(&corpus, 0.5, 0),
            Err(CorpusError::AlreadySplit)
        ));
    }

    #[test]
    fn fill_entities_respects_existing_annotations() {
        let lex = TermLexicon::from_pairs([("debtor", "T9")]).unwrap();
        let mut pre = rec("a", "the debtor pays");
        pre.entities = vec![EntityMention {
            surface: "debtor".into(),
            start: 4,
            end: 10,
            canonical_id: Some("CUSTOM".into()),
        }];
        let mut corpus = Corpus::new(vec![pre, rec("b", "the debtor pays")]).unwrap();
        corpus.lexicon = Some(lex.clone());
        fill_entities(&mut corpus, &lex);
        assert_eq!(corpus.records[0].entities[0].canonical_id.as_deref(), Some("CUSTOM"));
        assert_eq!(corpus.records[1].entities[0].canonical_id.as_deref(), Some("T9"));
    }

    proptest! {
        #[test]
        fn extraction_spans_never_overlap_and_slice_match(
            text in "[a-d ]{0,40}",
            surfaces in proptest::collection::btree_set("[a-d]{1,4}", 1..6)
        ) {
            let lex = TermLexicon::from_pairs(
                surfaces.iter().enumerate().map(|(i, s)| (s.as_str(), Box::leak(format!("T{i}").into_boxed_str()) as &str))
            ).unwrap();
            let got = extract_entities(&text, &lex);
            let chars: Vec<char> = text.chars().collect();
            for w in got.windows(2) {
                prop_assert!(w[0].end <= w[1].start);
            }
            for m in &got {
                let sliced: String = chars[m.start..m.end].iter().collect();
                prop_assert_eq!(&sliced, &m.surface);
            }
        }

        #[test]
        fn split_partitions_every_record(n in 1usize..120, frac in 0.05f64..0.95, seed in 0u64..1000) {
            let recs: Vec<_> = (0..n).map(|i| rec(&format!("r{i}"), "body")).collect();
            let corpus = Corpus::new(recs).unwrap();
            let split = split_corpus(&corpus, frac, seed).unwrap();
            let train = split.in_split(Split::Train).count();
            let test = split.in_split(Split::Test).count();
            prop_assert_eq!(train + test, n);
            prop_assert_eq!(train, (frac * n as f64).ceil() as usize);
        }

        #[test]
        fn save_load_save_round_trips(n in 1usize..8) {
            let dir = tempfile::tempdir().unwrap();
            let p1 = dir.path().join("a.jsonl");
            let p2 = dir.path().join("b.jsonl");
            let recs: Vec<_> = (0..n).map(|i| rec(&format!("r{i}"), &format!("sentence {i}"))).collect();
            let corpus = Corpus::new(recs).unwrap();
            save_corpus(&corpus, &p1).unwrap();
            let loaded = load_corpus(&p1).unwrap();
            save_corpus(&loaded, &p2).unwrap();
            prop_assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        }
    }
}
