//! Per-marker dependency patterns and the two-edge matcher.
//!
//! A pattern describes how a discourse marker hangs off its clause (the
//! S2 head, via `marker_attach`) and how that clause hangs off the main
//! clause (the S1 head, via `s2_attach`).

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{label_matches, DepSentence};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    /// S1 and S2 may appear in either surface order.
    Any,
    /// S1 material must start before the S2 clause.
    S1First,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerPattern {
    pub marker: String,
    pub s2_attach: String,
    pub marker_attach: String,
    #[serde(default = "default_order")]
    pub order: Order,
    #[serde(default = "default_allow_ips")]
    pub allow_ips: bool,
}

fn default_order() -> Order {
    Order::Any
}

fn default_allow_ips() -> bool {
    true
}

impl MarkerPattern {
    pub fn new(marker: &str, s2_attach: &str, marker_attach: &str, order: Order) -> Self {
        MarkerPattern {
            marker: marker.to_string(),
            s2_attach: s2_attach.to_string(),
            marker_attach: marker_attach.to_string(),
            order,
            allow_ips: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.marker.trim().is_empty() {
            return Err(Error::Config("pattern marker must be non-empty".into()));
        }
        if self.marker != self.marker.to_lowercase() {
            return Err(Error::Config(format!("pattern marker '{}' must be lowercase", self.marker)));
        }
        if self.s2_attach.is_empty() || self.marker_attach.is_empty() {
            return Err(Error::Config(format!(
                "pattern for '{}' has an empty relation label",
                self.marker
            )));
        }
        Ok(())
    }

    /// Relations accepted on the marker edge. Coordinators are drawn with
    /// `mark` but Universal Dependencies attaches them with `cc`.
    pub fn marker_relations(&self) -> Vec<&str> {
        if self.marker_attach == "mark" && self.s2_attach == "conj" {
            vec!["mark", "cc"]
        } else {
            vec![self.marker_attach.as_str()]
        }
    }

    fn accepts_marker_relation(&self, deprel: &str) -> bool {
        self.marker_relations()
            .iter()
            .any(|label| label_matches(deprel, label))
    }
}

/// One marker occurrence with its clause heads.
#[derive(Clone, Debug, PartialEq)]
pub struct PatternMatch<'p> {
    /// The marker word attached to the S2 head.
    pub marker_token: usize,
    /// Every token of the marker, including `marker_token`.
    pub marker_span: Vec<usize>,
    pub s2_head: usize,
    /// `None` marks a candidate whose S1 must come from the previous sentence.
    pub s1_head: Option<usize>,
    pub pattern: &'p MarkerPattern,
}

const BECAUSE_CLASS: &[&str] = &[
    "because", "if", "so", "before", "after", "while", "although", "though", "as",
];
const S1_FIRST: &[&str] = &["so", "then", "also", "still"];

/// The pattern set for the fifteen markers of the full marker set.
pub fn default_patterns() -> PatternRegistry {
    let mut rows = Vec::new();
    let order = |m: &str| {
        if S1_FIRST.contains(&m) {
            Order::S1First
        } else {
            Order::Any
        }
    };
    for &m in BECAUSE_CLASS {
        rows.push(MarkerPattern::new(m, "advcl", "mark", order(m)));
    }
    for m in ["when", "still"] {
        rows.push(MarkerPattern::new(m, "parataxis", "mark", order(m)));
    }
    for m in ["and", "but"] {
        rows.push(MarkerPattern::new(m, "conj", "mark", order(m)));
    }
    for m in ["then", "also"] {
        rows.push(MarkerPattern::new(m, "parataxis", "advmod", order(m)));
    }
    PatternRegistry { patterns: rows }
}

/// Patterns shown for markers outside the fifteen-marker set. Not enabled
/// by default.
pub fn extra_patterns() -> Vec<MarkerPattern> {
    vec![
        MarkerPattern::new("however", "parataxis", "advmod", Order::Any),
        MarkerPattern::new("meanwhile", "parataxis", "advmod", Order::Any),
        MarkerPattern::new("for example", "parataxis", "nmod", Order::Any),
    ]
}

/// An ordered list of pattern rows. A marker may own several rows.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternRegistry {
    patterns: Vec<MarkerPattern>,
}

#[derive(Deserialize)]
struct PatternFile {
    #[serde(default, rename = "pattern")]
    patterns: Vec<MarkerPattern>,
}

impl PatternRegistry {
    pub fn new(patterns: Vec<MarkerPattern>) -> Result<Self> {
        for p in &patterns {
            p.validate()?;
        }
        Ok(PatternRegistry { patterns })
    }

    pub fn patterns(&self) -> &[MarkerPattern] {
        &self.patterns
    }

    /// First row registered for `marker`.
    pub fn lookup(&self, marker: &str) -> Option<&MarkerPattern> {
        self.patterns.iter().find(|p| p.marker == marker)
    }

    pub fn rows<'a>(&'a self, marker: &'a str) -> impl Iterator<Item = &'a MarkerPattern> + 'a {
        self.patterns.iter().filter(move |p| p.marker == marker)
    }

    pub fn markers(&self) -> BTreeSet<String> {
        self.patterns.iter().map(|p| p.marker.clone()).collect()
    }

    pub fn contains(&self, marker: &str) -> bool {
        self.lookup(marker).is_some()
    }

    /// Replaces every row of each marker named in `rows`; markers not yet
    /// registered are appended.
    pub fn apply_overrides(&mut self, rows: Vec<MarkerPattern>) -> Result<()> {
        for r in &rows {
            r.validate()?;
        }
        let overridden: BTreeSet<&str> = rows.iter().map(|r| r.marker.as_str()).collect();
        let mut merged = Vec::new();
        let mut emitted = BTreeSet::new();
        for p in &self.patterns {
            if overridden.contains(p.marker.as_str()) {
                if emitted.insert(p.marker.clone()) {
                    merged.extend(rows.iter().filter(|r| r.marker == p.marker).cloned());
                }
            } else {
                merged.push(p.clone());
            }
        }
        for r in &rows {
            if !emitted.contains(&r.marker) {
                merged.push(r.clone());
            }
        }
        self.patterns = merged;
        Ok(())
    }

    /// Parses `[[pattern]]` tables from TOML.
    pub fn overrides_from_toml(text: &str) -> Result<Vec<MarkerPattern>> {
        let file: PatternFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(file.patterns)
    }

    /// The default registry with overrides read from a TOML file.
    pub fn with_override_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut registry = default_patterns();
        registry.apply_overrides(Self::overrides_from_toml(&text)?)?;
        Ok(registry)
    }
}

/// Finds every occurrence of `pattern.marker` in the sentence whose
/// governor is reached through the marker relation. Occurrences without
/// such a governor are skipped; this is what filters non-discourse uses.
pub fn match_pattern<'p>(sentence: &DepSentence, pattern: &'p MarkerPattern) -> Vec<PatternMatch<'p>> {
    let words: Vec<String> = pattern.marker.split_whitespace().map(str::to_string).collect();
    let Some((head_word, lead)) = words.split_last() else {
        return Vec::new();
    };
    let mut matches = Vec::new();
    for token in sentence.tokens() {
        if token.form.to_lowercase() != *head_word {
            continue;
        }
        // Multiword markers need their leading words immediately before.
        if token.index <= lead.len() {
            continue;
        }
        let start = token.index - lead.len();
        let lead_ok = lead.iter().enumerate().all(|(k, w)| {
            sentence
                .token(start + k)
                .is_some_and(|t| t.form.to_lowercase() == *w)
        });
        if !lead_ok {
            continue;
        }
        if token.head == 0 || !pattern.accepts_marker_relation(&token.deprel) {
            continue;
        }
        let s2_head = token.head;
        let s2 = sentence.token(s2_head).expect("validated head");
        let s1_head = if s2.head != 0 && label_matches(&s2.deprel, &pattern.s2_attach) {
            Some(s2.head)
        } else {
            None
        };
        let marker_span: Vec<usize> = (start..=token.index).collect();
        if s1_head.is_some_and(|h| marker_span.contains(&h)) || marker_span.contains(&s2_head) {
            continue;
        }
        matches.push(PatternMatch {
            marker_token: token.index,
            marker_span,
            s2_head,
            s1_head,
            pattern,
        });
    }
    matches
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_has_fifteen_markers() {
        let reg = default_patterns();
        assert_eq!(reg.patterns().len(), 15);
        assert_eq!(reg.markers().len(), 15);
        assert_eq!(reg, default_patterns());
    }

    #[test]
    fn lookups() {
        let reg = default_patterns();
        let because = reg.lookup("because").unwrap();
        assert_eq!((because.s2_attach.as_str(), because.marker_attach.as_str()), ("advcl", "mark"));
        assert_eq!(because.order, Order::Any);
        let still = reg.lookup("still").unwrap();
        assert_eq!((still.s2_attach.as_str(), still.marker_attach.as_str()), ("parataxis", "mark"));
        assert_eq!(reg.lookup("then").unwrap().order, Order::S1First);
        assert_eq!(reg.lookup("when").unwrap().s2_attach, "parataxis");
        assert_eq!(reg.lookup("and").unwrap().s2_attach, "conj");
        assert_eq!(reg.lookup("also").unwrap().marker_attach, "advmod");
        assert!(reg.patterns().iter().all(|p| p.allow_ips));
        assert!(reg.lookup("however").is_none());
    }

    #[test]
    fn coordinators_accept_cc() {
        let reg = default_patterns();
        assert_eq!(reg.lookup("and").unwrap().marker_relations(), vec!["mark", "cc"]);
        assert_eq!(reg.lookup("because").unwrap().marker_relations(), vec!["mark"]);
    }

    #[test]
    fn overrides_replace_and_append() {
        let text = r#"
            [[pattern]]
            marker = "when"
            s2_attach = "parataxis"
            marker_attach = "mark"

            [[pattern]]
            marker = "when"
            s2_attach = "advcl"
            marker_attach = "mark"

            [[pattern]]
            marker = "however"
            s2_attach = "parataxis"
            marker_attach = "advmod"
            order = "s1_first"
            allow_ips = false
        "#;
        let mut reg = default_patterns();
        reg.apply_overrides(PatternRegistry::overrides_from_toml(text).unwrap()).unwrap();
        assert_eq!(reg.rows("when").count(), 2);
        assert_eq!(reg.lookup("however").unwrap().order, Order::S1First);
        assert!(!reg.lookup("however").unwrap().allow_ips);
        assert_eq!(reg.patterns().len(), 17);
    }

    #[test]
    fn invalid_override_rejected() {
        let bad = vec![MarkerPattern::new("Because", "advcl", "mark", Order::Any)];
        assert!(default_patterns().apply_overrides(bad).is_err());
        let empty = vec![MarkerPattern::new("x", "", "mark", Order::Any)];
        assert!(PatternRegistry::new(empty).is_err());
    }
}
