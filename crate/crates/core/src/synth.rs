//! Synthetic parses and pair corpora for tests, examples and fuzzing.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{DepSentence, Document, Token};
use crate::dataset::PairRecord;
use crate::error::Result;
use crate::patterns::MarkerPattern;

/// Builds a sentence from `(form, upos, head, deprel)` rows; ids are
/// assigned 1..=n in order.
pub fn sentence(rows: &[(&str, &str, usize, &str)], sent_id: Option<&str>) -> Result<DepSentence> {
    let tokens = rows
        .iter()
        .enumerate()
        .map(|(i, &(form, upos, head, deprel))| Token::new(i + 1, form, upos, head, deprel))
        .collect();
    DepSentence::new(tokens, sent_id.map(str::to_string))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Word {
    pub form: String,
    pub upos: String,
    /// Local index of the head word; `None` for the clause head.
    pub head: Option<usize>,
    pub deprel: String,
}

/// A flat clause: every word hangs off the clause head.
#[derive(Clone, Debug, PartialEq)]
pub struct Clause {
    pub words: Vec<Word>,
    pub head: usize,
}

impl Clause {
    /// Words before the head become subjects, words after it objects. The
    /// head is tagged VERB.
    pub fn flat(forms: &[&str], head: usize) -> Self {
        Self::tagged(forms, head, "VERB")
    }

    /// Same shape as [`Clause::flat`] but with a nominal head, so the
    /// clause has no main verb.
    pub fn verbless(forms: &[&str], head: usize) -> Self {
        Self::tagged(forms, head, "NOUN")
    }

    fn tagged(forms: &[&str], head: usize, head_upos: &str) -> Self {
        assert!(head < forms.len(), "clause head out of range");
        let words = forms
            .iter()
            .enumerate()
            .map(|(i, f)| Word {
                form: f.to_string(),
                upos: if i == head { head_upos.to_string() } else { "NOUN".to_string() },
                head: if i == head { None } else { Some(head) },
                deprel: match i.cmp(&head) {
                    std::cmp::Ordering::Less => "nsubj",
                    std::cmp::Ordering::Equal => "root",
                    std::cmp::Ordering::Greater => "obj",
                }
                .to_string(),
            })
            .collect();
        Clause { words, head }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn text(&self) -> String {
        self.words.iter().map(|w| w.form.as_str()).collect::<Vec<_>>().join(" ")
    }
}

/// Surface arrangement of a two-clause template.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// `S1 [,] marker S2 .`
    Inline,
    /// `Marker S2 , S1 .`
    Fronted,
    /// `S1 .` followed by a second sentence `Marker [,] S2 .`
    Ips,
}

#[derive(Clone, Copy)]
enum HeadRef {
    Root,
    S1(usize),
    S2(usize),
    S2Head,
    /// Last word of the marker.
    Marker,
}

struct Pending {
    form: String,
    upos: String,
    head: HeadRef,
    deprel: String,
}

fn push_clause(out: &mut Vec<Pending>, clause: &Clause, side: fn(usize) -> HeadRef, head: HeadRef, head_rel: &str) {
    for w in &clause.words {
        let (h, rel) = match w.head {
            None => (head, head_rel.to_string()),
            Some(l) => (side(l), w.deprel.clone()),
        };
        out.push(Pending {
            form: w.form.clone(),
            upos: w.upos.clone(),
            head: h,
            deprel: rel,
        });
    }
}

fn push_marker(out: &mut Vec<Pending>, marker: &str, attach: &str, capitalize: bool) {
    let words: Vec<&str> = marker.split_whitespace().collect();
    for (i, w) in words.iter().enumerate() {
        let form = if i == 0 && capitalize {
            let mut c = w.chars();
            c.next().map(|f| f.to_uppercase().collect::<String>() + c.as_str()).unwrap_or_default()
        } else {
            w.to_string()
        };
        let last = i + 1 == words.len();
        out.push(Pending {
            form,
            upos: if last { "SCONJ" } else { "ADV" }.to_string(),
            head: if last { HeadRef::S2Head } else { HeadRef::Marker },
            deprel: if last { attach } else { "fixed" }.to_string(),
        });
    }
}

fn punct(form: &str, head: HeadRef) -> Pending {
    Pending {
        form: form.to_string(),
        upos: "PUNCT".to_string(),
        head,
        deprel: "punct".to_string(),
    }
}

/// Sentences realizing `s1 marker s2` under `pattern` and `layout`. The S2
/// head attaches to the S1 head via `s2_attach` (or is a root for IPS); the
/// last marker word attaches to the S2 head via `marker_attach`, using `cc`
/// for coordination patterns.
pub fn assemble(
    s1: &Clause,
    marker: &str,
    s2: &Clause,
    pattern: &MarkerPattern,
    layout: Layout,
    comma: bool,
) -> Result<Vec<DepSentence>> {
    let marker_rel = if pattern.marker_relations().contains(&"cc") {
        "cc"
    } else {
        pattern.marker_attach.as_str()
    };
    let s2_rel = pattern.s2_attach.as_str();
    let mut sentences = Vec::new();
    let mut cur: Vec<Pending> = Vec::new();
    // Offset of each clause within its own sentence.
    let mut s1_at = 0;
    let s2_at;
    match layout {
        Layout::Inline => {
            push_clause(&mut cur, s1, HeadRef::S1, HeadRef::Root, "root");
            if comma {
                cur.push(punct(",", HeadRef::S2(s2.head)));
            }
            push_marker(&mut cur, marker, marker_rel, false);
            s2_at = cur.len();
            push_clause(&mut cur, s2, HeadRef::S2, HeadRef::S1(s1.head), s2_rel);
            cur.push(punct(".", HeadRef::S1(s1.head)));
        }
        Layout::Fronted => {
            push_marker(&mut cur, marker, marker_rel, true);
            s2_at = cur.len();
            push_clause(&mut cur, s2, HeadRef::S2, HeadRef::S1(s1.head), s2_rel);
            cur.push(punct(",", HeadRef::S2(s2.head)));
            s1_at = cur.len();
            push_clause(&mut cur, s1, HeadRef::S1, HeadRef::Root, "root");
            cur.push(punct(".", HeadRef::S1(s1.head)));
        }
        Layout::Ips => {
            push_clause(&mut cur, s1, HeadRef::S1, HeadRef::Root, "root");
            cur.push(punct(".", HeadRef::S1(s1.head)));
            sentences.push(std::mem::take(&mut cur));
            push_marker(&mut cur, marker, marker_rel, true);
            if comma {
                cur.push(punct(",", HeadRef::S2(s2.head)));
            }
            s2_at = cur.len();
            push_clause(&mut cur, s2, HeadRef::S2, HeadRef::Root, "root");
            cur.push(punct(".", HeadRef::S2(s2.head)));
        }
    }
    sentences.push(cur);

    sentences
        .into_iter()
        .map(|pend| {
            let marker_head = pend
                .iter()
                .position(|p| p.deprel != "fixed" && p.upos == "SCONJ")
                .map(|i| i + 1);
            let tokens = pend
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let head = match p.head {
                        HeadRef::Root => 0,
                        HeadRef::S1(l) => s1_at + l + 1,
                        HeadRef::S2Head => s2_at + s2.head + 1,
                        HeadRef::S2(l) => s2_at + l + 1,
                        HeadRef::Marker => marker_head.expect("marker present"),
                    };
                    Token::new(i + 1, &p.form, &p.upos, head, &p.deprel)
                })
                .collect();
            DepSentence::new(tokens, None)
        })
        .collect()
}

/// Filler vocabulary for random clauses; disjoint from every marker.
pub const FILLER: &[&str] = &[
    "dog", "cat", "river", "stone", "lamp", "garden", "window", "teacher", "soldier", "letter", "kitchen", "storm",
    "bridge", "horse", "candle", "forest", "market", "doctor", "pocket", "mirror", "engine", "island", "tower",
    "basket", "ladder", "village", "captain", "blanket", "harbor", "pencil", "meadow", "violin", "coat", "train",
    "apple", "shadow", "wagon", "kettle", "valley", "rabbit",
];

pub const VERBS: &[&str] = &[
    "saw", "took", "found", "carried", "painted", "washed", "opened", "followed", "pushed", "watched", "fixed",
    "moved", "cleaned", "lifted", "dropped", "counted",
];

/// A random flat clause of `len` words with a verb head.
pub fn random_clause<R: Rng>(rng: &mut R, len: usize) -> Clause {
    assert!(len >= 1);
    let head = if len == 1 { 0 } else { rng.gen_range(0..len.min(3)) };
    let forms: Vec<&str> = (0..len)
        .map(|i| {
            if i == head {
                *VERBS.choose(rng).expect("non-empty")
            } else {
                *FILLER.choose(rng).expect("non-empty")
            }
        })
        .collect();
    Clause::flat(&forms, head)
}

/// A document of random template sentences for fuzzing extraction. Each
/// template uses a random pattern, layout and clause lengths, including
/// lengths and verbless clauses that the filters must reject.
pub fn fuzz_document<R: Rng>(rng: &mut R, patterns: &[MarkerPattern], templates: usize, doc_id: &str) -> Result<Document> {
    let mut doc = Document::new(doc_id);
    for _ in 0..templates {
        let p = patterns.choose(rng).expect("non-empty pattern list");
        let clause = |rng: &mut R| {
            let len = rng.gen_range(2..14);
            let c = random_clause(rng, len);
            if rng.gen_bool(0.1) {
                let forms: Vec<String> = c.words.iter().map(|w| w.form.clone()).collect();
                let refs: Vec<&str> = forms.iter().map(String::as_str).collect();
                Clause::verbless(&refs, c.head)
            } else {
                c
            }
        };
        let s1 = clause(rng);
        let s2 = clause(rng);
        let layout = *[Layout::Inline, Layout::Fronted, Layout::Ips].choose(rng).expect("non-empty");
        let comma = rng.gen_bool(0.5);
        doc.sentences.extend(assemble(&s1, &p.marker, &s2, p, layout, comma)?);
    }
    Ok(doc)
}

/// Options for a labeled pair corpus whose label is recoverable from S2.
#[derive(Clone, Debug)]
pub struct CueCorpus {
    pub labels: Vec<String>,
    pub pairs: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Cue realized as an ordering of two words instead of one word.
    pub ordered_cue: bool,
    /// Ordered cues put up to this many filler words between the two cue
    /// words.
    pub max_gap: usize,
    /// Put another class's cue into S1.
    pub distractor: bool,
    /// Probability that a pair's label is replaced by a uniformly random one.
    pub label_noise: f64,
}

impl CueCorpus {
    pub fn new(labels: &[&str], pairs: usize) -> Self {
        CueCorpus {
            labels: labels.iter().map(|s| s.to_string()).collect(),
            pairs,
            min_words: 5,
            max_words: 10,
            ordered_cue: false,
            max_gap: 0,
            distractor: false,
            label_noise: 0.0,
        }
    }
}

pub const CUE_WORDS: &[&str] = &["alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta"];

fn filler_words<R: Rng>(rng: &mut R, n: usize) -> Vec<String> {
    (0..n).map(|_| FILLER.choose(rng).expect("non-empty").to_string()).collect()
}

fn insert_cue<R: Rng>(rng: &mut R, words: &mut Vec<String>, class: usize, spec: &CueCorpus) {
    if !spec.ordered_cue {
        let at = rng.gen_range(0..=words.len());
        words.insert(at, CUE_WORDS[class].to_string());
        return;
    }
    // Class 0: alpha before beta, class 1: beta before alpha, class k: the
    // k-th cue word twice. Classes 0 and 1 have the same unigram counts and
    // differ only in order, which n-grams see only for short gaps.
    let (first, second) = match class {
        0 => (CUE_WORDS[0], CUE_WORDS[1]),
        1 => (CUE_WORDS[1], CUE_WORDS[0]),
        k => (CUE_WORDS[k], CUE_WORDS[k]),
    };
    let gap = rng.gen_range(0..=spec.max_gap);
    let mut cue = vec![first.to_string()];
    cue.extend(filler_words(rng, gap));
    cue.push(second.to_string());
    let at = rng.gen_range(0..=words.len());
    words.splice(at..at, cue);
}

/// Generates `pairs` pairs with classes assigned round-robin then
/// shuffled.
pub fn cue_corpus<R: Rng>(rng: &mut R, spec: &CueCorpus) -> Vec<PairRecord> {
    let k = spec.labels.len();
    assert!(k >= 2 && k <= CUE_WORDS.len(), "between 2 and {} labels", CUE_WORDS.len());
    let mut classes: Vec<usize> = (0..spec.pairs).map(|i| i % k).collect();
    classes.shuffle(rng);
    classes
        .into_iter()
        .map(|c| {
            let n1 = rng.gen_range(spec.min_words..=spec.max_words);
            let n2 = rng.gen_range(spec.min_words..=spec.max_words);
            let mut s1 = filler_words(rng, n1);
            let mut s2 = filler_words(rng, n2);
            insert_cue(rng, &mut s2, c, spec);
            if spec.distractor {
                let other = (c + rng.gen_range(1..k)) % k;
                insert_cue(rng, &mut s1, other, spec);
            }
            let label = if spec.label_noise > 0.0 && rng.gen_bool(spec.label_noise) {
                rng.gen_range(0..k)
            } else {
                c
            };
            PairRecord::new(s1.join(" "), s2.join(" "), spec.labels[label].clone())
        })
        .collect()
}
