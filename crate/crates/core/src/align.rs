//! Extraction validation: align extracted pairs to gold pairs by
//! normalized character edit distance and report per-marker precision.

use std::collections::{BTreeMap, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::PairRecord;

pub const DEFAULT_THRESHOLD: f64 = 0.7;

/// Unit-cost character edit distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance divided by the longer length; 0 for two empty strings.
pub fn normalized_levenshtein(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        0.0
    } else {
        levenshtein(a, b) as f64 / longest as f64
    }
}

/// Text normalization applied identically to extracted and gold sides:
/// numeric tokens become a placeholder and, optionally, words outside a
/// fixed vocabulary become an unknown token.
#[derive(Clone, Debug, Default)]
pub struct Preprocessor {
    pub number_placeholder: Option<String>,
    pub vocab: Option<HashSet<String>>,
    pub unknown: String,
}

impl Preprocessor {
    pub fn identity() -> Self {
        Preprocessor::default()
    }

    pub fn with_numbers(placeholder: &str) -> Self {
        Preprocessor {
            number_placeholder: Some(placeholder.to_string()),
            vocab: None,
            unknown: "<unk>".into(),
        }
    }

    /// Keeps the `cap` most frequent words of `texts` (ties broken
    /// lexicographically), counted after number replacement.
    pub fn cap_vocabulary<'a>(mut self, texts: impl IntoIterator<Item = &'a str>, cap: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for w in text.split_whitespace() {
                *counts.entry(self.map_number(w)).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        self.vocab = Some(ranked.into_iter().take(cap).map(|(w, _)| w).collect());
        if self.unknown.is_empty() {
            self.unknown = "<unk>".into();
        }
        self
    }

    fn map_number(&self, word: &str) -> String {
        match &self.number_placeholder {
            Some(ph) if is_number(word) => ph.clone(),
            _ => word.to_string(),
        }
    }

    pub fn apply(&self, text: &str) -> String {
        text.split_whitespace()
            .map(|w| {
                let w = self.map_number(w);
                match &self.vocab {
                    Some(v) if !v.contains(&w) => self.unknown.clone(),
                    _ => w,
                }
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn is_number(word: &str) -> bool {
    word.chars().any(|c| c.is_ascii_digit())
        && word.chars().all(|c| c.is_ascii_digit() || ",.:/-%".contains(c))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub extracted: usize,
    pub gold: usize,
    /// min(d(S1,G1), d(S2,G2)) for the chosen gold pair.
    pub match_distance: f64,
    /// (d(S1,G1) + d(S2,G2)) / 2 for the chosen gold pair.
    pub quality: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub alignments: Vec<Alignment>,
    pub unaligned: Vec<usize>,
}

fn nearest(pair: &PairRecord, gold: &[PairRecord]) -> Option<(usize, f64, f64)> {
    let mut best: Option<(usize, f64, f64)> = None;
    for (g, gp) in gold.iter().enumerate() {
        let d1 = normalized_levenshtein(&pair.s1, &gp.s1);
        let d2 = normalized_levenshtein(&pair.s2, &gp.s2);
        let m = d1.min(d2);
        if best.map_or(true, |(_, bm, _)| m < bm) {
            best = Some((g, m, (d1 + d2) / 2.0));
        }
    }
    best
}

/// Aligns each extracted pair to its nearest gold pair when that distance
/// is strictly below `threshold`. Ties go to the earlier gold pair. Both
/// lists should carry a single marker; see [`align_by_marker`].
pub fn align_pairs(extracted: &[PairRecord], gold: &[PairRecord], threshold: f64) -> AlignmentResult {
    let nearest_all: Vec<Option<(usize, f64, f64)>> =
        extracted.par_iter().map(|p| nearest(p, gold)).collect();
    let mut out = AlignmentResult::default();
    for (e, best) in nearest_all.into_iter().enumerate() {
        match best {
            Some((g, m, q)) if m < threshold => out.alignments.push(Alignment {
                extracted: e,
                gold: g,
                match_distance: m,
                quality: q,
            }),
            _ => out.unaligned.push(e),
        }
    }
    out
}

/// Runs [`align_pairs`] marker by marker after preprocessing both sides.
/// Indices in the result refer to the input slices.
pub fn align_by_marker(
    extracted: &[PairRecord],
    gold: &[PairRecord],
    threshold: f64,
    pre: &Preprocessor,
) -> BTreeMap<String, AlignmentResult> {
    let prep = |p: &PairRecord| PairRecord::new(pre.apply(&p.s1), pre.apply(&p.s2), p.marker.clone());
    let mut by_marker: BTreeMap<String, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, p) in extracted.iter().enumerate() {
        by_marker.entry(p.marker.clone()).or_default().0.push(i);
    }
    for (i, p) in gold.iter().enumerate() {
        if let Some(entry) = by_marker.get_mut(&p.marker) {
            entry.1.push(i);
        }
    }
    by_marker
        .into_iter()
        .map(|(marker, (ex_idx, gold_idx))| {
            let ex: Vec<PairRecord> = ex_idx.iter().map(|&i| prep(&extracted[i])).collect();
            let gd: Vec<PairRecord> = gold_idx.iter().map(|&i| prep(&gold[i])).collect();
            let local = align_pairs(&ex, &gd, threshold);
            let mapped = AlignmentResult {
                alignments: local
                    .alignments
                    .into_iter()
                    .map(|a| Alignment {
                        extracted: ex_idx[a.extracted],
                        gold: gold_idx[a.gold],
                        ..a
                    })
                    .collect(),
                unaligned: local.unaligned.into_iter().map(|i| ex_idx[i]).collect(),
            };
            (marker, mapped)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkerPrecision {
    pub extracted: usize,
    pub aligned: usize,
    /// `None` when no pair was extracted for the marker.
    pub precision: Option<f64>,
}

impl MarkerPrecision {
    fn new(extracted: usize, aligned: usize) -> Self {
        MarkerPrecision {
            extracted,
            aligned,
            precision: (extracted > 0).then(|| aligned as f64 / extracted as f64),
        }
    }

    pub fn unalignable(&self) -> Option<f64> {
        self.precision.map(|p| 1.0 - p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionReport {
    pub per_marker: BTreeMap<String, MarkerPrecision>,
    pub overall: MarkerPrecision,
}

/// Fraction of extracted pairs that found an alignment, per marker.
pub fn extraction_precision(results: &BTreeMap<String, AlignmentResult>) -> PrecisionReport {
    let mut per_marker = BTreeMap::new();
    let (mut total, mut aligned) = (0, 0);
    for (marker, r) in results {
        let n = r.alignments.len() + r.unaligned.len();
        total += n;
        aligned += r.alignments.len();
        per_marker.insert(marker.clone(), MarkerPrecision::new(n, r.alignments.len()));
    }
    PrecisionReport {
        per_marker,
        overall: MarkerPrecision::new(total, aligned),
    }
}

/// Counts of aligned-pair quality in `bins` equal-width bins over [0, 1].
pub fn quality_histogram(results: &BTreeMap<String, AlignmentResult>, bins: usize) -> Vec<usize> {
    let mut hist = vec![0; bins.max(1)];
    for r in results.values() {
        for a in &r.alignments {
            let b = ((a.quality * hist.len() as f64) as usize).min(hist.len() - 1);
            hist[b] += 1;
        }
    }
    hist
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub threshold: f64,
    pub precision: PrecisionReport,
    pub quality_histogram: Vec<usize>,
    pub mean_quality: Option<f64>,
}

pub fn validation_report(results: &BTreeMap<String, AlignmentResult>, threshold: f64) -> ValidationReport {
    let qualities: Vec<f64> = results
        .values()
        .flat_map(|r| r.alignments.iter().map(|a| a.quality))
        .collect();
    ValidationReport {
        threshold,
        precision: extraction_precision(results),
        quality_histogram: quality_histogram(results, 10),
        mean_quality: (!qualities.is_empty()).then(|| qualities.iter().sum::<f64>() / qualities.len() as f64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Textbook recursion, exponential but fine for short strings.
    fn brute(a: &[char], b: &[char]) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        let cost = usize::from(a[0] != b[0]);
        (brute(&a[1..], &b[1..]) + cost)
            .min(brute(&a[1..], b) + 1)
            .min(brute(a, &b[1..]) + 1)
    }

    #[test]
    fn examples() {
        assert_eq!(levenshtein("abc", "abc"), 0);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(brute(&['k', 'i', 't', 't', 'e', 'n'], &"sitting".chars().collect::<Vec<_>>()), 3);
        assert_eq!(normalized_levenshtein("same", "same"), 0.0);
        assert!((normalized_levenshtein("kitten", "sitting") - 3.0 / 7.0).abs() < 1e-15);
        assert_eq!(normalized_levenshtein("", "x"), 1.0);
        assert_eq!(normalized_levenshtein("", ""), 0.0);
        assert_eq!(levenshtein("héllo", "hello"), 1);
    }

    #[test]
    fn alignment_rules() {
        let gold = vec![PairRecord::new("it was cold outside", "i wore a jacket", "because")];
        let r = align_pairs(&gold, &gold, DEFAULT_THRESHOLD);
        assert_eq!(r.alignments[0].match_distance, 0.0);
        assert_eq!(r.alignments[0].quality, 0.0);

        let shared_s2 = vec![PairRecord::new("zzzzzzzzzzzzzzzzzzz", "i wore a jacket", "because")];
        let r = align_pairs(&shared_s2, &gold, DEFAULT_THRESHOLD);
        assert_eq!(r.alignments.len(), 1);
        assert_eq!(r.alignments[0].quality, 0.5);

        let far = vec![PairRecord::new("zzzzzzzzzzzzzzzzzzz", "qqqqqqqqqqqqqqq", "because")];
        let r = align_pairs(&far, &gold, DEFAULT_THRESHOLD);
        assert_eq!(r.unaligned, vec![0]);
        assert!(align_pairs(&gold, &[], DEFAULT_THRESHOLD).alignments.is_empty());
    }

    #[test]
    fn threshold_is_strict() {
        // d = 7/10 exactly on both sides.
        let gold = vec![PairRecord::new("aaaaaaaaaa", "bbbbbbbbbb", "so")];
        let ex = vec![PairRecord::new("xxxxxxxaaa", "yyyyyyybbb", "so")];
        assert!(align_pairs(&ex, &gold, 0.7).alignments.is_empty());
        assert_eq!(align_pairs(&ex, &gold, 0.71).alignments.len(), 1);
    }

    #[test]
    fn precision_per_marker() {
        let mut results = BTreeMap::new();
        results.insert(
            "so".to_string(),
            AlignmentResult {
                alignments: (0..3)
                    .map(|i| Alignment {
                        extracted: i,
                        gold: 0,
                        match_distance: 0.0,
                        quality: 0.1,
                    })
                    .collect(),
                unaligned: vec![3],
            },
        );
        results.insert("but".to_string(), AlignmentResult::default());
        let rep = extraction_precision(&results);
        assert_eq!(rep.per_marker["so"].precision, Some(0.75));
        assert_eq!(rep.per_marker["so"].unalignable(), Some(0.25));
        assert_eq!(rep.per_marker["but"].precision, None);
        assert_eq!(rep.overall.precision, Some(0.75));
        assert_eq!(quality_histogram(&results, 10)[1], 3);
    }

    #[test]
    fn preprocessing() {
        let p = Preprocessor::with_numbers("NUM");
        assert_eq!(p.apply("paid 3,000 dollars in 1989"), "paid NUM dollars in NUM");
        let capped = Preprocessor::with_numbers("NUM").cap_vocabulary(["a a b c", "a b"], 2);
        assert_eq!(capped.apply("a b c 7"), "a b <unk> <unk>");
    }

    #[test]
    fn by_marker_keeps_markers_apart() {
        let gold = vec![
            PairRecord::new("one two three", "four five six", "so"),
            PairRecord::new("one two three", "four five six", "but"),
        ];
        let ex = vec![PairRecord::new("one two three", "four five six", "but")];
        let r = align_by_marker(&ex, &gold, 0.7, &Preprocessor::identity());
        assert_eq!(r["but"].alignments[0].gold, 1);
        assert!(!r.contains_key("so"));
    }

    proptest! {
        #[test]
        fn matches_brute_force(a in "[abc]{0,7}", b in "[abc]{0,7}") {
            let ac: Vec<char> = a.chars().collect();
            let bc: Vec<char> = b.chars().collect();
            prop_assert_eq!(levenshtein(&a, &b), brute(&ac, &bc));
        }

        #[test]
        fn threshold_monotone(s1 in "[ab]{1,8}", s2 in "[ab]{1,8}", g1 in "[ab]{1,8}", g2 in "[ab]{1,8}", t in 0.0f64..1.0, dt in 0.0f64..0.5) {
            let ex = vec![PairRecord::new(s1, s2, "so")];
            let gold = vec![PairRecord::new(g1, g2, "so")];
            let low = align_pairs(&ex, &gold, t).alignments.len();
            let high = align_pairs(&ex, &gold, t + dt).alignments.len();
            prop_assert!(high >= low);
        }
    }
}
