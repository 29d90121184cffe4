//! Bundled synthetic corpus: 60 short regulatory-flavored sentences built
//! around 10 planted confusable term pairs.
//!
//! Each pair shares a long lexical prefix ("settlement agent" vs
//! "settlement broker"), so the hashing provider sees the two members as
//! similar while distinct terms stay far apart. Each member has three
//! sentences with member-specific context words, which makes the
//! term-from-context mapping learnable. The generator is a pure function of
//! its constant tables, so regeneration is byte-identical.

use crate::corpus::{Corpus, EntityMention, SentenceRecord, TermLexicon};

/// (category, [term A, term B], [three sentence tails per member]).
const PAIRS: [(&str, [&str; 2], [[&str; 3]; 2]); 10] = [
    (
        "clearing",
        ["settlement agent", "settlement broker"],
        [
            ["logs wire fees", "seals day books", "checks pay orders"],
            ["quotes bid sheets", "stamps sale slips", "counts lot codes"],
        ],
    ),
    (
        "oversight",
        ["credit supervisor", "credit superintendent"],
        [
            ["reads audit notes", "signs case files", "grades branch desks"],
            ["tracks fraud tips", "visits field sites", "flags odd drafts"],
        ],
    ),
    (
        "lending",
        ["loan underwriter", "loan undertaker"],
        [
            ["backs new notes", "vets debt terms", "holds margin bonds"],
            ["stores deed packs", "files lien cards", "keeps vault keys"],
        ],
    ),
    (
        "reserves",
        ["reserve auditor", "reserve assessor"],
        [
            ["sums cash floats", "tests ledger rows", "proofs tally runs"],
            ["rates buffer size", "maps fund gaps", "scores pool depth"],
        ],
    ),
    (
        "deposits",
        ["depositary bank", "depository bank"],
        [
            ["guards escrow pots", "splits joint sums", "renews term plans"],
            ["lists new books", "codes branch rolls", "prints rate cards"],
        ],
    ),
    (
        "compliance",
        ["compliance officer", "compliance observer"],
        [
            ["vets gift logs", "clears trade memos", "drafts rule briefs"],
            ["notes desk calls", "shadows floor runs", "tapes client talks"],
        ],
    ),
    (
        "interbank",
        ["interbank dealer", "interbank mediator"],
        [
            ["swaps night funds", "prices repo lots", "nets due balances"],
            ["settles rate rows", "brokers line splits", "calms desk feuds"],
        ],
    ),
    (
        "capital",
        ["capital controller", "capital comptroller"],
        [
            ["caps risk books", "sets buffer bars", "trims asset loads"],
            ["audits tier sums", "checks ratio math", "signs stress packs"],
        ],
    ),
    (
        "risk",
        ["risk examiner", "risk examinee"],
        [
            ["probes loss tails", "grills desk heads", "samples trade tapes"],
            ["weights event odds", "ranks threat maps", "models shock paths"],
        ],
    ),
    (
        "exchange",
        ["exchange liquidator", "exchange arbitrator"],
        [
            ["unwinds dead books", "sells seized seats", "closes stale bids"],
            ["hears fee rows", "rules on ties", "voids bad fills"],
        ],
    ),
];

/// The 10 planted confusable `(term A, term B)` pairs.
pub fn confusable_pairs() -> Vec<(&'static str, &'static str)> {
    PAIRS.iter().map(|(_, terms, _)| (terms[0], terms[1])).collect()
}

/// Canonical id for pair `p` member `m` (0 = A, 1 = B).
fn canonical_id(pair: usize, member: usize) -> String {
    format!("P{:02}{}", pair + 1, if member == 0 { "A" } else { "B" })
}

/// Build the 60-sentence corpus: 10 pairs x 2 members x 3 sentences, ids
/// `syn-00` through `syn-59`, splits unassigned.
pub fn synthetic_corpus() -> Corpus {
    let mut records = Vec::with_capacity(60);
    let mut idx = 0;
    for (pair_idx, (category, terms, tails)) in PAIRS.iter().enumerate() {
        for member in 0..2 {
            let term = terms[member];
            for tail in &tails[member] {
                let text = format!("The {term} {tail}.");
                let start = 4; // after "The "
                let end = start + term.chars().count();
                records.push(SentenceRecord {
                    id: format!("syn-{idx:02}"),
                    text,
                    category: (*category).to_string(),
                    entities: vec![EntityMention {
                        surface: term.to_string(),
                        start,
                        end,
                        canonical_id: Some(canonical_id(pair_idx, member)),
                    }],
                    split: crate::corpus::Split::Unassigned,
                });
                idx += 1;
            }
        }
    }
    Corpus::new(records).expect("synthetic corpus is valid")
}

/// Lexicon covering all 20 planted terms.
pub fn synthetic_lexicon() -> TermLexicon {
    let mut lex = TermLexicon::new();
    for (pair_idx, (_, terms, _)) in PAIRS.iter().enumerate() {
        for member in 0..2 {
            lex.insert(terms[member], &canonical_id(pair_idx, member))
                .expect("terms are unique");
        }
    }
    lex
}
