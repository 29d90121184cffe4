// dev probe: similarity landscape of the synthetic corpus (not shipped docs)
use termforge::corpus::split_corpus;
use termforge::embedding::{cosine, EmbeddingProvider, HashingProvider};
use termforge::graph::{build_graph, graph_stats};
use termforge::synth::{confusable_pairs, synthetic_corpus};
use termforge::augment::{augment_corpus, AugmentConfig};

fn main() {
    let provider = HashingProvider::default();
    let mut min_within: f64 = 1.0;
    let mut max_cross: f64 = -1.0;
    for (a, b) in confusable_pairs() {
        let s = cosine(&provider.embed(a).unwrap(), &provider.embed(b).unwrap()).unwrap();
        min_within = min_within.min(s);
        println!("pair: {a} / {b}: {s:.4}");
    }
    let terms: Vec<(&str, &str)> = confusable_pairs();
    let all: Vec<&str> = terms.iter().flat_map(|(a, b)| [*a, *b]).collect();
    for i in 0..all.len() {
        for j in (i + 1)..all.len() {
            if i / 2 == j / 2 { continue; }
            let s = cosine(&provider.embed(all[i]).unwrap(), &provider.embed(all[j]).unwrap()).unwrap();
            if s > max_cross { max_cross = s; }
        }
    }
    println!("min within-pair: {min_within:.4}, max cross-pair: {max_cross:.4}");

    // sentence-level similarities within category
    let corpus = synthetic_corpus();
    let mut same_member = (1.0f64, -1.0f64);
    let mut cross_member = (1.0f64, -1.0f64);
    for i in 0..corpus.len() {
        for j in (i+1)..corpus.len() {
            let (a, b) = (&corpus.records[i], &corpus.records[j]);
            if a.category != b.category { continue; }
            let s = cosine(&provider.embed(&a.text).unwrap(), &provider.embed(&b.text).unwrap()).unwrap();
            let same = a.entities[0].canonical_id == b.entities[0].canonical_id;
            let slot = if same { &mut same_member } else { &mut cross_member };
            slot.0 = slot.0.min(s); slot.1 = slot.1.max(s);
        }
    }
    println!("same-member sentence sims: [{:.4}, {:.4}]", same_member.0, same_member.1);
    println!("cross-member sentence sims: [{:.4}, {:.4}]", cross_member.0, cross_member.1);

    // graph + augmentation shape at candidate thresholds
    for (tt, ts) in [(0.45, 0.25), (0.5, 0.3), (0.4, 0.2)] {
        let split = split_corpus(&corpus, 0.7, 11).unwrap();
        let g = build_graph(&split, &provider, tt).unwrap();
        let st = graph_stats(&g);
        let cfg = AugmentConfig { theta_sen: ts, ..AugmentConfig::default() };
        let out = augment_corpus(&split, &g, &provider, None, &cfg).unwrap();
        let train_sen = out.q_sen.iter().filter(|s| s.split == termforge::corpus::Split::Train).count();
        let test_sen = out.q_sen.len() - train_sen;
        let train_tok = out.q_tok.iter().filter(|s| s.split == termforge::corpus::Split::Train).count();
        let test_tok = out.q_tok.len() - train_tok;
        println!("theta_tok={tt} theta_sen={ts}: edges sen_shared={} sen_cat={} tok={} | q_sen {train_sen}+{test_sen}, q_tok {train_tok}+{test_tok}, rejects {}",
            st.sen_shared_entity, st.sen_same_category, st.tok, out.rejections.len());
    }
}
