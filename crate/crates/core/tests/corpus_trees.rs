use std::collections::{BTreeSet, HashSet};

use dismark::corpus::{label_matches, parse_conllu, write_conllu, DepSentence, Document, Token};
use dismark::patterns::{default_patterns, match_pattern, MarkerPattern};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FORMS: &[&str] = &["because", "so", "and", "but", "then", "when", "if", "x", "y", "z", "Because", "So"];
const RELS: &[&str] = &["mark", "cc", "advmod", "advcl", "conj", "parataxis", "nsubj", "obj", "advcl:tmod"];
const UPOS: &[&str] = &["VERB", "AUX", "NOUN", "SCONJ", "ADV"];

/// A random tree: nodes attach to a node placed earlier in a random order.
fn random_sentence(rng: &mut ChaCha8Rng, n: usize) -> DepSentence {
    let mut order: Vec<usize> = (1..=n).collect();
    order.shuffle(rng);
    let mut heads = vec![0; n + 1];
    for k in 1..n {
        heads[order[k]] = order[rng.gen_range(0..k)];
    }
    let tokens = (1..=n)
        .map(|i| {
            Token::new(
                i,
                *FORMS.choose(rng).unwrap(),
                *UPOS.choose(rng).unwrap(),
                heads[i],
                if heads[i] == 0 { "root" } else { *RELS.choose(rng).unwrap() },
            )
        })
        .collect();
    DepSentence::new(tokens, Some(format!("r{}", n))).unwrap()
}

fn tree_strategy() -> impl Strategy<Value = DepSentence> {
    (1usize..25, any::<u64>()).prop_map(|(n, seed)| random_sentence(&mut ChaCha8Rng::seed_from_u64(seed), n))
}

/// Ancestor walk: `t` survives when neither it nor any node on its path up
/// to `head` is excluded.
fn subtree_oracle(s: &DepSentence, head: usize, excluded: &HashSet<usize>) -> Vec<usize> {
    let mut out = Vec::new();
    for t in s.tokens() {
        let mut cur = t.index;
        let kept = loop {
            if excluded.contains(&cur) {
                break false;
            }
            if cur == head {
                break true;
            }
            if cur == 0 {
                break false;
            }
            cur = s.token(cur).unwrap().head;
        };
        if kept {
            out.push(t.index);
        }
    }
    out
}

/// Every (marker, s2, s1) triple checked by brute force.
fn triple_oracle(s: &DepSentence, p: &MarkerPattern) -> BTreeSet<(usize, usize, Option<usize>)> {
    let n = s.len();
    let rels = p.marker_relations();
    let mut found = BTreeSet::new();
    for a in 1..=n {
        let ta = s.token(a).unwrap();
        if ta.form.to_lowercase() != p.marker {
            continue;
        }
        for b in 1..=n {
            if ta.head != b || !rels.iter().any(|r| label_matches(&ta.deprel, r)) {
                continue;
            }
            let tb = s.token(b).unwrap();
            let mut s1 = None;
            for c in 1..=n {
                if tb.head == c && label_matches(&tb.deprel, &p.s2_attach) {
                    s1 = Some(c);
                }
            }
            if s1 != Some(a) {
                found.insert((a, b, s1));
            }
        }
    }
    found
}

#[test]
fn pattern_matcher_agrees_with_triple_enumeration() {
    let reg = default_patterns();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut nonempty = 0;
    for _ in 0..100 {
        let n = rng.gen_range(2..20);
        let s = random_sentence(&mut rng, n);
        for p in reg.patterns().iter().filter(|p| !p.marker.contains(' ')) {
            let got: BTreeSet<_> = match_pattern(&s, p)
                .into_iter()
                .map(|m| (m.marker_token, m.s2_head, m.s1_head))
                .collect();
            let want = triple_oracle(&s, p);
            nonempty += usize::from(!want.is_empty());
            assert_eq!(got, want, "marker {} in {:?}", p.marker, s);
        }
    }
    assert!(nonempty > 20, "random trees produced too few matches ({})", nonempty);
}

#[test]
fn subtree_yield_agrees_with_ancestor_walk() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let n = rng.gen_range(1..30);
        let s = random_sentence(&mut rng, n);
        let head = rng.gen_range(1..=n);
        let excluded: HashSet<usize> = (1..=n).filter(|_| rng.gen_bool(0.15)).collect();
        let got: Vec<usize> = s.subtree_yield(head, &excluded).unwrap().iter().map(|t| t.index).collect();
        assert_eq!(got, subtree_oracle(&s, head, &excluded));
    }
}

proptest! {
    #[test]
    fn every_non_root_token_is_one_dependent(s in tree_strategy()) {
        let n = s.len();
        let total: usize = (1..=n).map(|h| s.dependents(h, None).unwrap().len()).sum();
        prop_assert_eq!(total, n - 1);
        let root = s.root().index;
        prop_assert_eq!(s.subtree_yield(root, &HashSet::new()).unwrap().len(), n);
    }

    #[test]
    fn conllu_round_trip(trees in prop::collection::vec(tree_strategy(), 1..5)) {
        let mut doc = Document::new("d0");
        doc.sentences = trees;
        let mut buf = Vec::new();
        write_conllu(std::slice::from_ref(&doc), &mut buf).unwrap();
        let back = parse_conllu(buf.as_slice()).unwrap();
        prop_assert_eq!(back, vec![doc]);
    }
}

#[test]
fn reader_skips_ranges_and_empty_nodes() {
    let text = "# newdoc id = a\n# sent_id = s\n\
                1\tThey\tthey\tPRON\t_\t_\t2\tnsubj\t_\t_\n\
                2-3\tcouldn't\t_\t_\t_\t_\t_\t_\t_\t_\n\
                2\tcould\tcould\tAUX\t_\t_\t0\troot\t_\t_\n\
                2.1\tgo\tgo\tVERB\t_\t_\t_\t_\t2:conj\t_\n\
                3\tn't\tnot\tPART\t_\t_\t2\tadvmod\t_\t_\n\n";
    let docs = parse_conllu(text.as_bytes()).unwrap();
    assert_eq!(docs.len(), 1);
    assert_eq!(docs[0].sentences[0].text(), "They could n't");
}

#[test]
fn malformed_trees_are_rejected() {
    for rows in [
        "1\ta\t_\tX\t_\t_\t2\tdep\t_\t_\n2\tb\t_\tX\t_\t_\t1\tdep\t_\t_\n",
        "1\ta\t_\tX\t_\t_\t0\troot\t_\t_\n2\tb\t_\tX\t_\t_\t0\troot\t_\t_\n",
        "1\ta\t_\tX\t_\t_\t5\tdep\t_\t_\n",
        "1\ta\t_\tX\t_\t_\tzero\troot\t_\t_\n",
        "1\ta\t_\tX\t_\t_\t0\n",
    ] {
        let text = format!("# sent_id = bad\n{}\n", rows);
        assert!(parse_conllu(text.as_bytes()).is_err(), "accepted {:?}", rows);
    }
}
