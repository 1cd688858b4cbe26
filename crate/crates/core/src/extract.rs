//! Turns pattern matches into filtered (S1, marker, S2) pairs.
//!
//! Pairs are emitted in conceptual order: S1 is the main clause (or the
//! previous sentence), S2 the clause the marker introduces, whatever
//! their order on the surface.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{DepSentence, Document, Token};
use crate::dataset::{sanitize_field, MarkerSet};
use crate::error::{Error, Result};
use crate::patterns::{match_pattern, Order, PatternMatch, PatternRegistry};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// S1, marker and S2 all in one sentence.
    SS,
    /// S1 is the immediately previous sentence.
    IPS,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    pub min_len: usize,
    pub max_len: usize,
    pub max_ratio: f64,
    pub require_main_verb: bool,
    pub markers: BTreeSet<String>,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            min_len: 5,
            max_len: 50,
            max_ratio: 5.0,
            require_main_verb: true,
            markers: MarkerSet::BooksAll.markers(),
        }
    }
}

impl ExtractionConfig {
    pub fn with_markers(markers: BTreeSet<String>) -> Self {
        ExtractionConfig {
            markers,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "length bounds must satisfy 0 < min_len <= max_len, got {}..{}",
                self.min_len, self.max_len
            )));
        }
        if !(self.max_ratio >= 1.0) {
            return Err(Error::Config(format!("max_ratio must be >= 1, got {}", self.max_ratio)));
        }
        Ok(())
    }
}

/// A rendered pair waiting for the length and verb filters.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub s1: String,
    pub s2: String,
    pub marker: String,
    pub mode: Mode,
    pub doc_id: String,
    pub sentence_index: usize,
    pub s1_has_verb: bool,
    pub s2_has_verb: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedPair {
    pub s1: String,
    pub s2: String,
    pub marker: String,
    pub mode: Mode,
    pub doc_id: String,
    pub sentence_index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RejectReason {
    NoGovernor,
    OrderViolation,
    TooShort,
    TooLong,
    RatioExceeded,
    NoMainVerb,
    NoPreviousSentence,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            RejectReason::NoGovernor => "NoGovernor",
            RejectReason::OrderViolation => "OrderViolation",
            RejectReason::TooShort => "TooShort",
            RejectReason::TooLong => "TooLong",
            RejectReason::RatioExceeded => "RatioExceeded",
            RejectReason::NoMainVerb => "NoMainVerb",
            RejectReason::NoPreviousSentence => "NoPreviousSentence",
        };
        f.write_str(name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub doc_id: String,
    pub sentence_index: usize,
    pub marker: String,
    pub marker_token: usize,
    pub reason: RejectReason,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Extraction {
    pub accepted: Vec<ExtractedPair>,
    pub rejected: Vec<Rejection>,
}

impl Extraction {
    fn append(&mut self, mut other: Extraction) {
        self.accepted.append(&mut other.accepted);
        self.rejected.append(&mut other.rejected);
    }
}

fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Length, ratio and main-verb filters.
pub fn filter_pair(candidate: &Candidate, config: &ExtractionConfig) -> std::result::Result<(), RejectReason> {
    let n1 = word_count(&candidate.s1);
    let n2 = word_count(&candidate.s2);
    if n1 < config.min_len || n2 < config.min_len {
        return Err(RejectReason::TooShort);
    }
    if n1 > config.max_len || n2 > config.max_len {
        return Err(RejectReason::TooLong);
    }
    let (short, long) = (n1.min(n2) as f64, n1.max(n2) as f64);
    if long / short > config.max_ratio {
        return Err(RejectReason::RatioExceeded);
    }
    if config.require_main_verb && !(candidate.s1_has_verb && candidate.s2_has_verb) {
        return Err(RejectReason::NoMainVerb);
    }
    Ok(())
}

fn is_punct(form: &str) -> bool {
    !form.is_empty() && form.chars().all(|c| !c.is_alphanumeric())
}

/// Joins token forms with single spaces. Commas right next to a removed
/// marker token are dropped, as are punctuation tokens at either end.
pub fn render_text(tokens: &[&Token], removed: &[usize]) -> Result<String> {
    if tokens.is_empty() {
        return Err(Error::argument("cannot render an empty token list"));
    }
    let kept: Vec<&Token> = tokens
        .iter()
        .copied()
        .filter(|t| {
            !(t.form == ","
                && removed
                    .iter()
                    .any(|&m| t.index + 1 == m || m + 1 == t.index))
        })
        .collect();
    let start = kept.iter().position(|t| !is_punct(&t.form));
    let end = kept.iter().rposition(|t| !is_punct(&t.form));
    let words = match (start, end) {
        (Some(s), Some(e)) => &kept[s..=e],
        _ => &kept[0..0],
    };
    Ok(words
        .iter()
        .map(|t| t.form.as_str())
        .collect::<Vec<_>>()
        .join(" "))
}

fn has_verb(tokens: &[&Token]) -> bool {
    tokens.iter().any(|t| t.is_verbal())
}

/// Whether the sentence holds nothing but the marker, the S2 clause and
/// trailing punctuation.
fn only_marker_and_s2(sentence: &DepSentence, m: &PatternMatch<'_>, s2: &[&Token]) -> bool {
    let tokens = sentence.tokens();
    let final_punct_from = tokens
        .iter()
        .rposition(|t| !is_punct(&t.form))
        .map_or(0, |p| p + 1);
    let s2_set: HashSet<usize> = s2.iter().map(|t| t.index).collect();
    tokens.iter().all(|t| {
        m.marker_span.contains(&t.index) || s2_set.contains(&t.index) || t.index > final_punct_from
    })
}

enum Outcome {
    Candidate(Candidate),
    Rejected(RejectReason),
}

fn build_candidate(doc: &Document, sentence_index: usize, m: &PatternMatch<'_>) -> Result<Outcome> {
    let sentence = &doc.sentences[sentence_index];
    let marker_set: HashSet<usize> = m.marker_span.iter().copied().collect();
    let s2_tokens = sentence.subtree_yield(m.s2_head, &marker_set)?;
    let s2 = render_text(&s2_tokens, &m.marker_span)?;

    let make = |s1: String, s1_has_verb: bool, mode: Mode| Candidate {
        s1,
        s2: s2.clone(),
        marker: m.pattern.marker.clone(),
        mode,
        doc_id: doc.doc_id.clone(),
        sentence_index,
        s1_has_verb,
        s2_has_verb: has_verb(&s2_tokens),
    };

    match m.s1_head {
        Some(s1_head) => {
            let mut excluded = marker_set.clone();
            excluded.insert(m.s2_head);
            let s1_tokens = sentence.subtree_yield(s1_head, &excluded)?;
            if m.pattern.order == Order::S1First {
                let s1_start = s1_tokens.iter().map(|t| t.index).min();
                let s2_start = s2_tokens.iter().map(|t| t.index).min();
                if s2_start < s1_start {
                    return Ok(Outcome::Rejected(RejectReason::OrderViolation));
                }
            }
            let s1 = render_text(&s1_tokens, &m.marker_span)?;
            Ok(Outcome::Candidate(make(s1, has_verb(&s1_tokens), Mode::SS)))
        }
        None => {
            if !m.pattern.allow_ips || !only_marker_and_s2(sentence, m, &s2_tokens) {
                return Ok(Outcome::Rejected(RejectReason::NoGovernor));
            }
            if sentence_index == 0 {
                return Ok(Outcome::Rejected(RejectReason::NoPreviousSentence));
            }
            let previous = &doc.sentences[sentence_index - 1];
            let prev_tokens: Vec<&Token> = previous.tokens().iter().collect();
            Ok(Outcome::Candidate(make(previous.text(), has_verb(&prev_tokens), Mode::IPS)))
        }
    }
}

/// Extracts every pair of one document. Every candidate match ends up
/// either accepted or in the rejection list.
pub fn extract_pairs(doc: &Document, registry: &PatternRegistry, config: &ExtractionConfig) -> Extraction {
    let mut out = Extraction::default();
    for (sentence_index, sentence) in doc.sentences.iter().enumerate() {
        let mut matches: Vec<PatternMatch<'_>> = registry
            .patterns()
            .iter()
            .filter(|p| config.markers.contains(&p.marker))
            .flat_map(|p| match_pattern(sentence, p))
            .collect();
        matches.sort_by_key(|m| m.marker_token);

        for m in &matches {
            let reject = |reason| Rejection {
                doc_id: doc.doc_id.clone(),
                sentence_index,
                marker: m.pattern.marker.clone(),
                marker_token: m.marker_token,
                reason,
            };
            // Indices come from a validated tree, so yields cannot fail.
            let outcome = build_candidate(doc, sentence_index, m).expect("match indices are valid");
            match outcome {
                Outcome::Rejected(reason) => out.rejected.push(reject(reason)),
                Outcome::Candidate(c) => match filter_pair(&c, config) {
                    Ok(()) => out.accepted.push(ExtractedPair {
                        s1: c.s1,
                        s2: c.s2,
                        marker: c.marker,
                        mode: c.mode,
                        doc_id: c.doc_id,
                        sentence_index,
                    }),
                    Err(reason) => out.rejected.push(reject(reason)),
                },
            }
        }
    }
    out
}

/// Extracts from many documents, optionally on `jobs` worker threads.
/// Output order is document order regardless of `jobs`.
pub fn extract_corpus(
    docs: &[Document],
    registry: &PatternRegistry,
    config: &ExtractionConfig,
    jobs: usize,
) -> Result<Extraction> {
    config.validate()?;
    let parts: Vec<Extraction> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| {
            docs.par_iter()
                .map(|d| extract_pairs(d, registry, config))
                .collect()
        })
    } else {
        docs.iter().map(|d| extract_pairs(d, registry, config)).collect()
    };
    let mut out = Extraction::default();
    for part in parts {
        out.append(part);
    }
    Ok(out)
}

/// `s1<TAB>s2<TAB>marker` per line.
pub fn write_pairs_tsv<W: Write>(pairs: &[ExtractedPair], mut w: W) -> Result<()> {
    for p in pairs {
        writeln!(w, "{}\t{}\t{}", sanitize_field(&p.s1), sanitize_field(&p.s2), p.marker)?;
    }
    Ok(())
}

/// `doc_id<TAB>sent_index<TAB>marker<TAB>reason` per line.
pub fn write_rejections_tsv<W: Write>(rejected: &[Rejection], mut w: W) -> Result<()> {
    for r in rejected {
        writeln!(w, "{}\t{}\t{}\t{}", r.doc_id, r.sentence_index, r.marker, r.reason)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(forms: &[&str]) -> Vec<Token> {
        forms
            .iter()
            .enumerate()
            .map(|(i, f)| Token::new(i + 1, *f, "X", 0, "dep"))
            .collect()
    }

    fn render(forms: &[&str], removed: &[usize]) -> Result<String> {
        let t = toks(forms);
        let refs: Vec<&Token> = t.iter().collect();
        render_text(&refs, removed)
    }

    #[test]
    fn render_examples() {
        assert_eq!(render(&["it", "was", "cold", "outside"], &[]).unwrap(), "it was cold outside");
        assert_eq!(render(&[",", "I", "wore", "a", "jacket"], &[]).unwrap(), "I wore a jacket");
        assert_eq!(render(&["Go"], &[]).unwrap(), "Go");
        assert!(render(&[], &[]).is_err());
    }

    #[test]
    fn render_drops_commas_beside_marker() {
        // "He left , however , she stayed" with "however" (token 4) removed.
        let t = toks(&["He", "left", ",", "however", ",", "she", "stayed", "."]);
        let refs: Vec<&Token> = t.iter().filter(|t| t.index != 4).collect();
        assert_eq!(render_text(&refs, &[4]).unwrap(), "He left she stayed");
        // A comma elsewhere stays.
        assert_eq!(render(&["a", ",", "b", "c"], &[]).unwrap(), "a , b c");
    }

    fn candidate(n1: usize, n2: usize) -> Candidate {
        Candidate {
            s1: vec!["w"; n1].join(" "),
            s2: vec!["w"; n2].join(" "),
            marker: "because".into(),
            mode: Mode::SS,
            doc_id: "d".into(),
            sentence_index: 0,
            s1_has_verb: true,
            s2_has_verb: true,
        }
    }

    #[test]
    fn filter_examples() {
        let cfg = ExtractionConfig::default();
        assert_eq!(filter_pair(&candidate(4, 10), &cfg), Err(RejectReason::TooShort));
        assert_eq!(filter_pair(&candidate(10, 51), &cfg), Err(RejectReason::TooLong));
        assert_eq!(filter_pair(&candidate(6, 31), &cfg), Err(RejectReason::RatioExceeded));
        assert_eq!(filter_pair(&candidate(6, 30), &cfg), Ok(()));
        assert_eq!(filter_pair(&candidate(5, 50), &cfg), Err(RejectReason::RatioExceeded));
        assert_eq!(filter_pair(&candidate(10, 50), &cfg), Ok(()));
        let mut no_verb = candidate(6, 6);
        no_verb.s2_has_verb = false;
        assert_eq!(filter_pair(&no_verb, &cfg), Err(RejectReason::NoMainVerb));
        let relaxed = ExtractionConfig {
            require_main_verb: false,
            ..Default::default()
        };
        assert_eq!(filter_pair(&no_verb, &relaxed), Ok(()));
    }

    #[test]
    fn config_validation() {
        assert!(ExtractionConfig::default().validate().is_ok());
        let bad = ExtractionConfig {
            min_len: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ExtractionConfig {
            max_ratio: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn reason_names() {
        assert_eq!(RejectReason::NoPreviousSentence.to_string(), "NoPreviousSentence");
        assert_eq!(RejectReason::RatioExceeded.to_string(), "RatioExceeded");
    }
}
