//! Sentence graph construction and per-anchor candidate sets.
//!
//! Nodes are corpus sentences. Two edge families encode confusability:
//! sentence-level edges (shared canonical entity, or same category label
//! within the same split) and token-level edges (one per pair of distinct
//! entities whose surface embeddings exceed the similarity threshold).
//! Construction is all-pairs by design; corpora are desk-scale.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::Corpus;
use crate::embedding::{cosine, EmbedError, EmbeddingProvider, Vector};
use crate::par;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("unknown anchor id `{0}`")]
    UnknownAnchor(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Why a sentence-level edge exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SenReason {
    SharedEntity,
    SameCategory,
}

/// An entity identity: canonical id (when known) plus surface form.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct EntityRef {
    pub canonical_id: Option<String>,
    pub surface: String,
}

impl EntityRef {
    pub fn from_mention(m: &crate::corpus::EntityMention) -> Self {
        Self {
            canonical_id: m.canonical_id.clone(),
            surface: m.surface.clone(),
        }
    }

    /// Key used to decide whether two entities are "the same term".
    pub fn canonical_key(&self) -> &str {
        self.canonical_id.as_deref().unwrap_or(&self.surface)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EdgeKind {
    Sen {
        reason: SenReason,
    },
    Tok {
        /// Entity on the source side of this directed adjacency entry.
        anchor_entity: EntityRef,
        /// Entity on the neighbor side.
        other_entity: EntityRef,
        similarity: f64,
    },
}

impl EdgeKind {
    /// The same edge viewed from the other endpoint.
    fn mirrored(&self) -> EdgeKind {
        match self {
            EdgeKind::Sen { reason } => EdgeKind::Sen { reason: *reason },
            EdgeKind::Tok {
                anchor_entity,
                other_entity,
                similarity,
            } => EdgeKind::Tok {
                anchor_entity: other_entity.clone(),
                other_entity: anchor_entity.clone(),
                similarity: *similarity,
            },
        }
    }
}

/// Undirected multigraph over sentence ids. A node pair may carry several
/// edges of different kinds (and several token edges for different entity
/// pairs).
#[derive(Debug, Clone)]
pub struct SentenceGraph {
    node_ids: Vec<String>,
    index: BTreeMap<String, usize>,
    adjacency: Vec<Vec<(usize, EdgeKind)>>,
    pub theta_tok: f64,
}

impl SentenceGraph {
    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// Adjacency entries for a node id.
    pub fn neighbors(&self, id: &str) -> Option<impl Iterator<Item = (&str, &EdgeKind)>> {
        let &idx = self.index.get(id)?;
        Some(
            self.adjacency[idx]
                .iter()
                .map(move |(j, k)| (self.node_ids[*j].as_str(), k)),
        )
    }

    /// Each undirected edge exactly once, as (src, dst, kind-from-src) with
    /// src preceding dst in node order.
    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, &EdgeKind)> {
        self.adjacency.iter().enumerate().flat_map(move |(i, list)| {
            list.iter().filter(move |(j, _)| i < *j).map(move |(j, k)| {
                (self.node_ids[i].as_str(), self.node_ids[*j].as_str(), k)
            })
        })
    }
}

/// One token-level candidate: the confusable entity and the sentence it was
/// observed in (used to keep augmentation inside one split).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct TokCandidate {
    pub entity: EntityRef,
    pub source_id: String,
}

/// Per-anchor candidate sets for augmentation.
#[derive(Debug, Clone, Default)]
pub struct CandidateSets {
    /// Sentence ids connected by a sentence-level edge whose sentence
    /// embedding cosine against the anchor exceeds the threshold.
    pub s_sen: Vec<String>,
    /// For each anchor entity, the confusable entities reached over token
    /// edges, deduplicated by (canonical id, surface).
    pub c_tok: BTreeMap<EntityRef, Vec<TokCandidate>>,
    pub theta_sen: f64,
}

fn entity_embeddings(
    corpus: &Corpus,
    provider: &dyn EmbeddingProvider,
) -> Result<BTreeMap<String, Vector>, EmbedError> {
    let surfaces: BTreeSet<String> = corpus
        .records
        .iter()
        .flat_map(|r| r.entities.iter().map(|m| m.surface.clone()))
        .collect();
    let surfaces: Vec<String> = surfaces.into_iter().collect();
    let embedded = par::map_collect(&surfaces, |s| provider.embed(s).map(|v| (s.clone(), v)));
    embedded.into_iter().collect()
}

fn pair_edges(
    corpus: &Corpus,
    embeds: &BTreeMap<String, Vector>,
    theta_tok: f64,
    i: usize,
    j: usize,
) -> Vec<EdgeKind> {
    let a = &corpus.records[i];
    let b = &corpus.records[j];
    let mut out = Vec::new();

    let keys_a: BTreeSet<&str> = a.entities.iter().map(|m| m.canonical_key()).collect();
    if b.entities.iter().any(|m| keys_a.contains(m.canonical_key())) {
        out.push(EdgeKind::Sen {
            reason: SenReason::SharedEntity,
        });
    }
    // Category edges stay within one split so augmentation cannot leak
    // across the train/test boundary.
    if a.category == b.category && a.split == b.split {
        out.push(EdgeKind::Sen {
            reason: SenReason::SameCategory,
        });
    }

    let mut seen: BTreeSet<(EntityRef, EntityRef)> = BTreeSet::new();
    for ma in &a.entities {
        for mb in &b.entities {
            if ma.canonical_key() == mb.canonical_key() {
                continue;
            }
            let ra = EntityRef::from_mention(ma);
            let rb = EntityRef::from_mention(mb);
            if !seen.insert((ra.clone(), rb.clone())) {
                continue;
            }
            let (ea, eb) = (&embeds[&ma.surface], &embeds[&mb.surface]);
            let sim = cosine(ea, eb).expect("entity embeddings share provider dim");
            if sim > theta_tok {
                out.push(EdgeKind::Tok {
                    anchor_entity: ra,
                    other_entity: rb,
                    similarity: sim,
                });
            }
        }
    }
    out
}

fn assemble(
    corpus: &Corpus,
    theta_tok: f64,
    per_node: Vec<Vec<(usize, EdgeKind)>>,
) -> SentenceGraph {
    let node_ids: Vec<String> = corpus.records.iter().map(|r| r.id.clone()).collect();
    let index: BTreeMap<String, usize> = node_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i))
        .collect();
    let mut adjacency: Vec<Vec<(usize, EdgeKind)>> = vec![Vec::new(); node_ids.len()];
    for (i, list) in per_node.into_iter().enumerate() {
        for (j, kind) in list {
            adjacency[j].push((i, kind.mirrored()));
            adjacency[i].push((j, kind));
        }
    }
    SentenceGraph {
        node_ids,
        index,
        adjacency,
        theta_tok,
    }
}

/// Build the sentence graph over every unordered record pair.
pub fn build_graph(
    corpus: &Corpus,
    provider: &dyn EmbeddingProvider,
    theta_tok: f64,
) -> Result<SentenceGraph, GraphError> {
    let embeds = entity_embeddings(corpus, provider)?;
    let n = corpus.records.len();
    let per_node = par::map_range(n, |i| {
        ((i + 1)..n)
            .flat_map(|j| {
                pair_edges(corpus, &embeds, theta_tok, i, j)
                    .into_iter()
                    .map(move |k| (j, k))
            })
            .collect::<Vec<_>>()
    });
    Ok(assemble(corpus, theta_tok, per_node))
}

/// Single-threaded twin of [`build_graph`]; the fallback when the `parallel`
/// feature is off and the reference side of the benchmark suite.
pub fn build_graph_serial(
    corpus: &Corpus,
    provider: &dyn EmbeddingProvider,
    theta_tok: f64,
) -> Result<SentenceGraph, GraphError> {
    let embeds = entity_embeddings(corpus, provider)?;
    let n = corpus.records.len();
    let per_node = par::map_range_seq(n, |i| {
        ((i + 1)..n)
            .flat_map(|j| {
                pair_edges(corpus, &embeds, theta_tok, i, j)
                    .into_iter()
                    .map(move |k| (j, k))
            })
            .collect::<Vec<_>>()
    });
    Ok(assemble(corpus, theta_tok, per_node))
}

/// Compute the candidate sets for one anchor: sentence-level candidates pass
/// the sentence-cosine threshold, token-level candidates come straight off
/// the anchor's token edges.
pub fn candidate_sets(
    graph: &SentenceGraph,
    corpus: &Corpus,
    anchor: &str,
    provider: &dyn EmbeddingProvider,
    theta_sen: f64,
) -> Result<CandidateSets, GraphError> {
    let &anchor_idx = graph
        .index
        .get(anchor)
        .ok_or_else(|| GraphError::UnknownAnchor(anchor.to_string()))?;
    let anchor_text = &corpus.records[anchor_idx].text;
    let e_anchor = provider.embed(anchor_text)?;

    let mut s_sen = Vec::new();
    let mut seen_sen: BTreeSet<usize> = BTreeSet::new();
    let mut c_tok: BTreeMap<EntityRef, Vec<TokCandidate>> = BTreeMap::new();
    let mut seen_tok: BTreeSet<(EntityRef, EntityRef)> = BTreeSet::new();

    for (j, kind) in &graph.adjacency[anchor_idx] {
        match kind {
            EdgeKind::Sen { .. } => {
                if seen_sen.contains(j) {
                    continue;
                }
                let e_j = provider.embed(&corpus.records[*j].text)?;
                if cosine(&e_anchor, &e_j)? > theta_sen {
                    seen_sen.insert(*j);
                    s_sen.push(graph.node_ids[*j].clone());
                }
            }
            EdgeKind::Tok {
                anchor_entity,
                other_entity,
                ..
            } => {
                if seen_tok.insert((anchor_entity.clone(), other_entity.clone())) {
                    c_tok.entry(anchor_entity.clone()).or_default().push(TokCandidate {
                        entity: other_entity.clone(),
                        source_id: graph.node_ids[*j].clone(),
                    });
                }
            }
        }
    }
    Ok(CandidateSets {
        s_sen,
        c_tok,
        theta_sen,
    })
}

/// Summary counts: nodes, undirected edge counts by kind, degree histogram.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub sen_shared_entity: usize,
    pub sen_same_category: usize,
    pub tok: usize,
    /// degree -> number of nodes with that degree (multi-edges counted).
    pub degree_histogram: BTreeMap<usize, usize>,
}

pub fn graph_stats(graph: &SentenceGraph) -> GraphStats {
    let mut shared = 0;
    let mut category = 0;
    let mut tok = 0;
    for (_, _, kind) in graph.edges() {
        match kind {
            EdgeKind::Sen {
                reason: SenReason::SharedEntity,
            } => shared += 1,
            EdgeKind::Sen {
                reason: SenReason::SameCategory,
            } => category += 1,
            EdgeKind::Tok { .. } => tok += 1,
        }
    }
    let mut degree_histogram: BTreeMap<usize, usize> = BTreeMap::new();
    for list in &graph.adjacency {
        *degree_histogram.entry(list.len()).or_insert(0) += 1;
    }
    GraphStats {
        nodes: graph.node_count(),
        sen_shared_entity: shared,
        sen_same_category: category,
        tok,
        degree_histogram,
    }
}

#[derive(Serialize)]
struct EdgeLine<'a> {
    src: &'a str,
    dst: &'a str,
    kind: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<SenReason>,
    #[serde(skip_serializing_if = "Option::is_none")]
    anchor_entity: Option<&'a EntityRef>,
    #[serde(skip_serializing_if = "Option::is_none")]
    other_entity: Option<&'a EntityRef>,
    #[serde(skip_serializing_if = "Option::is_none")]
    similarity: Option<f64>,
}

/// Export each undirected edge once as a JSON line, for inspection and
/// golden tests.
pub fn export_edges(graph: &SentenceGraph) -> String {
    let mut out = String::new();
    for (src, dst, kind) in graph.edges() {
        let line = match kind {
            EdgeKind::Sen { reason } => EdgeLine {
                src,
                dst,
                kind: "sen",
                reason: Some(*reason),
                anchor_entity: None,
                other_entity: None,
                similarity: None,
            },
            EdgeKind::Tok {
                anchor_entity,
                other_entity,
                similarity,
            } => EdgeLine {
                src,
                dst,
                kind: "tok",
                reason: None,
                anchor_entity: Some(anchor_entity),
                other_entity: Some(other_entity),
                similarity: Some(*similarity),
            },
        };
        writeln!(out, "{}", serde_json::to_string(&line).expect("edge serializes")).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EntityMention, SentenceRecord, Split};
    use crate::embedding::{embed_hashing, HashingProvider};

    fn record(id: &str, text: &str, category: &str, entities: &[(&str, &str)]) -> SentenceRecord {
        let chars: Vec<char> = text.chars().collect();
        let mentions = entities
            .iter()
            .map(|(surface, canon)| {
                let s_chars: Vec<char> = surface.chars().collect();
                let start = (0..chars.len())
                    .find(|&p| {
                        p + s_chars.len() <= chars.len() && chars[p..p + s_chars.len()] == s_chars[..]
                    })
                    .expect("surface present in text");
                EntityMention {
                    surface: surface.to_string(),
                    start,
                    end: start + s_chars.len(),
                    canonical_id: Some(canon.to_string()),
                }
            })
            .collect();
        SentenceRecord {
            id: id.to_string(),
            text: text.to_string(),
            category: category.to_string(),
            entities: mentions,
            split: Split::Unassigned,
        }
    }

    #[test]
    fn shared_entity_creates_sen_edge() {
        let corpus = Corpus::new(vec![
            record("a", "the supervisor reports", "c1", &[("supervisor", "T1")]),
            record("b", "each supervisor signs", "c2", &[("supervisor", "T1")]),
        ])
        .unwrap();
        let g = build_graph(&corpus, &HashingProvider::default(), 0.8).unwrap();
        let kinds: Vec<_> = g.neighbors("a").unwrap().collect();
        assert!(kinds
            .iter()
            .any(|(id, k)| *id == "b" && matches!(k, EdgeKind::Sen { reason: SenReason::SharedEntity })));
    }

    #[test]
    fn tok_edge_follows_embedding_threshold() {
        let provider = HashingProvider::default();
        let sim = crate::embedding::cosine(
            &embed_hashing("supervisor", 256, 0).unwrap(),
            &embed_hashing("external supervisor", 256, 0).unwrap(),
        )
        .unwrap();
        let corpus = Corpus::new(vec![
            record("a", "the supervisor reports", "c1", &[("supervisor", "T1")]),
            record("b", "an external supervisor signs", "c2", &[("external supervisor", "T2")]),
        ])
        .unwrap();
        // just below the pair's similarity: edge exists and carries it
        let g = build_graph(&corpus, &provider, sim - 0.01).unwrap();
        let tok: Vec<_> = g
            .neighbors("a")
            .unwrap()
            .filter(|(_, k)| matches!(k, EdgeKind::Tok { .. }))
            .collect();
        assert_eq!(tok.len(), 1);
        if let EdgeKind::Tok { similarity, .. } = tok[0].1 {
            assert!((similarity - sim).abs() < 1e-12);
        }
        // just above: no edge
        let g2 = build_graph(&corpus, &provider, sim + 0.01).unwrap();
        assert!(g2
            .neighbors("a")
            .unwrap()
            .all(|(_, k)| !matches!(k, EdgeKind::Tok { .. })));
    }

    #[test]
    fn unrelated_sentences_yield_empty_graph() {
        let corpus = Corpus::new(vec![
            record("a", "zzzz qqqq", "c1", &[("zzzz", "T1")]),
            record("b", "mmmm wwww", "c2", &[("mmmm", "T2")]),
            record("c", "ffff gggg", "c3", &[]),
        ])
        .unwrap();
        let g = build_graph(&corpus, &HashingProvider::default(), 0.99).unwrap();
        assert_eq!(g.edges().count(), 0);
        let stats = graph_stats(&g);
        assert_eq!(stats.nodes, 3);
        assert_eq!(stats.tok + stats.sen_shared_entity + stats.sen_same_category, 0);
    }

    #[test]
    fn empty_corpus_builds_empty_graph() {
        let corpus = Corpus::new(vec![]).unwrap();
        let g = build_graph(&corpus, &HashingProvider::default(), 0.5).unwrap();
        assert_eq!(g.node_count(), 0);
        assert_eq!(g.edges().count(), 0);
    }

    #[test]
    fn same_canonical_id_never_forms_tok_edge() {
        let corpus = Corpus::new(vec![
            record("a", "the supervisor reports", "c1", &[("supervisor", "T1")]),
            record("b", "the supervisors sign", "c2", &[("supervisors", "T1")]),
        ])
        .unwrap();
        // similar surfaces, same canonical id: sen edge only
        let g = build_graph(&corpus, &HashingProvider::default(), 0.1).unwrap();
        assert!(g
            .neighbors("a")
            .unwrap()
            .all(|(_, k)| !matches!(k, EdgeKind::Tok { .. })));
        assert!(g
            .neighbors("a")
            .unwrap()
            .any(|(_, k)| matches!(k, EdgeKind::Sen { .. })));
    }

    #[test]
    fn candidate_sets_empty_for_isolated_anchor() {
        let corpus = Corpus::new(vec![
            record("a", "zzzz qqqq", "c1", &[]),
            record("b", "mmmm wwww", "c2", &[]),
        ])
        .unwrap();
        let provider = HashingProvider::default();
        let g = build_graph(&corpus, &provider, 0.8).unwrap();
        let cs = candidate_sets(&g, &corpus, "a", &provider, 0.5).unwrap();
        assert!(cs.s_sen.is_empty());
        assert!(cs.c_tok.is_empty());
    }

    #[test]
    fn candidate_sets_respects_sentence_threshold() {
        let corpus = Corpus::new(vec![
            record("a", "the supervisor reports daily", "c1", &[("supervisor", "T1")]),
            record("b", "the supervisor reports weekly", "c1", &[("supervisor", "T1")]),
        ])
        .unwrap();
        let provider = HashingProvider::default();
        let sim = crate::embedding::cosine(
            &provider.embed("the supervisor reports daily").unwrap(),
            &provider.embed("the supervisor reports weekly").unwrap(),
        )
        .unwrap();
        let g = build_graph(&corpus, &provider, 0.8).unwrap();
        let cs = candidate_sets(&g, &corpus, "a", &provider, sim - 0.01).unwrap();
        assert_eq!(cs.s_sen, vec!["b".to_string()]);
        let cs2 = candidate_sets(&g, &corpus, "a", &provider, sim + 0.01).unwrap();
        assert!(cs2.s_sen.is_empty());
    }

    #[test]
    fn unknown_anchor_is_an_error() {
        let corpus = Corpus::new(vec![record("a", "text here", "c", &[])]).unwrap();
        let provider = HashingProvider::default();
        let g = build_graph(&corpus, &provider, 0.5).unwrap();
        assert!(matches!(
            candidate_sets(&g, &corpus, "nope", &provider, 0.5),
            Err(GraphError::UnknownAnchor(_))
        ));
    }

    #[test]
    fn adjacency_is_symmetric_with_mirrored_roles() {
        let corpus = Corpus::new(vec![
            record("a", "the supervisor reports", "c1", &[("supervisor", "T1")]),
            record("b", "an external supervisor signs", "c2", &[("external supervisor", "T2")]),
        ])
        .unwrap();
        let g = build_graph(&corpus, &HashingProvider::default(), 0.1).unwrap();
        let ab: Vec<_> = g.neighbors("a").unwrap().filter(|(id, _)| *id == "b").collect();
        let ba: Vec<_> = g.neighbors("b").unwrap().filter(|(id, _)| *id == "a").collect();
        assert_eq!(ab.len(), ba.len());
        for ((_, ka), (_, kb)) in ab.iter().zip(&ba) {
            assert_eq!(&(*ka).mirrored(), *kb);
        }
    }

    #[test]
    fn serial_and_parallel_builds_agree() {
        let records: Vec<SentenceRecord> = (0..12)
            .map(|i| {
                record(
                    &format!("s{i}"),
                    &format!("clause {i} involves supervisor duty"),
                    if i % 3 == 0 { "alpha" } else { "beta" },
                    &[("supervisor", "T1")],
                )
            })
            .collect();
        let corpus = Corpus::new(records).unwrap();
        let provider = HashingProvider::default();
        let a = build_graph(&corpus, &provider, 0.6).unwrap();
        let b = build_graph_serial(&corpus, &provider, 0.6).unwrap();
        let ea: Vec<_> = a.edges().collect();
        let eb: Vec<_> = b.edges().collect();
        assert_eq!(ea.len(), eb.len());
        for (x, y) in ea.iter().zip(&eb) {
            assert_eq!(x.0, y.0);
            assert_eq!(x.1, y.1);
            assert_eq!(x.2, y.2);
        }
    }

    #[test]
    fn export_lines_parse_back() {
        let corpus = Corpus::new(vec![
            record("a", "the supervisor reports", "c1", &[("supervisor", "T1")]),
            record("b", "each supervisor signs", "c1", &[("supervisor", "T1")]),
        ])
        .unwrap();
        let g = build_graph(&corpus, &HashingProvider::default(), 0.8).unwrap();
        let exported = export_edges(&g);
        for line in exported.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v.get("src").is_some() && v.get("dst").is_some() && v.get("kind").is_some());
        }
        assert_eq!(exported.lines().count(), g.edges().count());
    }
}
