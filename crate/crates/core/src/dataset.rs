//! Labeled pair collections: marker subsets, splits, balancing,
//! statistics and TSV I/O.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const BOOKS5: &[&str] = &["and", "but", "because", "if", "when"];
const BOOKS8_EXTRA: &[&str] = &["before", "though", "so"];
const BOOKSALL_EXTRA: &[&str] = &["as", "while", "after", "still", "also", "then", "although"];

/// Named marker inventories.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MarkerSet {
    Books5,
    Books8,
    BooksAll,
    Custom(BTreeSet<String>),
}

impl MarkerSet {
    /// Accepts `books5`, `books8`, `books_all` (or `booksall`, `all`), or a
    /// comma-separated list of markers prefixed with `custom:`.
    pub fn from_name(name: &str) -> Result<Self> {
        let lower = name.trim().to_lowercase();
        match lower.as_str() {
            "books5" | "books_5" => Ok(MarkerSet::Books5),
            "books8" | "books_8" => Ok(MarkerSet::Books8),
            "books_all" | "booksall" | "all" => Ok(MarkerSet::BooksAll),
            other => match other.strip_prefix("custom:") {
                Some(list) => {
                    let set: BTreeSet<String> = list
                        .split(',')
                        .map(|m| m.trim().to_string())
                        .filter(|m| !m.is_empty())
                        .collect();
                    if set.is_empty() {
                        return Err(Error::argument("custom marker set is empty"));
                    }
                    Ok(MarkerSet::Custom(set))
                }
                None => Err(Error::argument(format!("unknown marker set '{}'", name))),
            },
        }
    }

    pub fn name(&self) -> String {
        match self {
            MarkerSet::Books5 => "books5".into(),
            MarkerSet::Books8 => "books8".into(),
            MarkerSet::BooksAll => "books_all".into(),
            MarkerSet::Custom(set) => format!("custom:{}", set.iter().cloned().collect::<Vec<_>>().join(",")),
        }
    }

    pub fn markers(&self) -> BTreeSet<String> {
        let words: Vec<&str> = match self {
            MarkerSet::Books5 => BOOKS5.to_vec(),
            MarkerSet::Books8 => [BOOKS5, BOOKS8_EXTRA].concat(),
            MarkerSet::BooksAll => [BOOKS5, BOOKS8_EXTRA, BOOKSALL_EXTRA].concat(),
            MarkerSet::Custom(set) => return set.clone(),
        };
        words.into_iter().map(str::to_string).collect()
    }

    pub fn contains(&self, marker: &str) -> bool {
        self.markers().contains(marker)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// One labeled pair. `doc_id` is an optional fourth TSV column.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairRecord {
    pub s1: String,
    pub s2: String,
    pub marker: String,
    pub doc_id: Option<String>,
}

impl PairRecord {
    pub fn new(s1: impl Into<String>, s2: impl Into<String>, marker: impl Into<String>) -> Self {
        PairRecord {
            s1: s1.into(),
            s2: s2.into(),
            marker: marker.into(),
            doc_id: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairDataset {
    pub pairs: Vec<PairRecord>,
    pub marker_set: MarkerSet,
    pub splits: Option<Vec<Split>>,
}

impl PairDataset {
    /// A dataset whose marker set is exactly the labels present.
    pub fn from_pairs(pairs: Vec<PairRecord>) -> Self {
        let markers = pairs.iter().map(|p| p.marker.clone()).collect();
        PairDataset {
            pairs,
            marker_set: MarkerSet::Custom(markers),
            splits: None,
        }
    }

    pub fn with_marker_set(pairs: Vec<PairRecord>, marker_set: MarkerSet) -> Result<Self> {
        let allowed = marker_set.markers();
        if let Some(p) = pairs.iter().find(|p| !allowed.contains(&p.marker)) {
            return Err(Error::argument(format!(
                "marker '{}' is not in set {}",
                p.marker,
                marker_set.name()
            )));
        }
        Ok(PairDataset {
            pairs,
            marker_set,
            splits: None,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Pairs assigned to `split`, in dataset order.
    pub fn part(&self, split: Split) -> Vec<PairRecord> {
        match &self.splits {
            Some(assign) => self
                .pairs
                .iter()
                .zip(assign)
                .filter(|(_, s)| **s == split)
                .map(|(p, _)| p.clone())
                .collect(),
            None => Vec::new(),
        }
    }

    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let count = |s| self.splits.as_ref().map_or(0, |a| a.iter().filter(|x| **x == s).count());
        (count(Split::Train), count(Split::Valid), count(Split::Test))
    }
}

/// Keeps pairs whose marker belongs to `set`.
pub fn subset_markers(ds: &PairDataset, set: &MarkerSet) -> PairDataset {
    let allowed = set.markers();
    let keep: Vec<bool> = ds.pairs.iter().map(|p| allowed.contains(&p.marker)).collect();
    PairDataset {
        pairs: ds
            .pairs
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(p, _)| p.clone())
            .collect(),
        marker_set: set.clone(),
        splits: ds.splits.as_ref().map(|a| {
            a.iter()
                .zip(&keep)
                .filter(|(_, k)| **k)
                .map(|(s, _)| *s)
                .collect()
        }),
    }
}

pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.9, 0.05, 0.05);

/// Shuffles with a seeded ChaCha generator and cuts the shuffled order
/// into train/valid/test. Valid and test sizes are floored; the remainder
/// goes to train.
pub fn split(ds: &PairDataset, ratios: (f64, f64, f64), seed: u64) -> Result<PairDataset> {
    if ds.is_empty() {
        return Err(Error::argument("cannot split an empty dataset"));
    }
    let (r_train, r_valid, r_test) = ratios;
    if [r_train, r_valid, r_test].iter().any(|r| !(0.0..=1.0).contains(r))
        || (r_train + r_valid + r_test - 1.0).abs() > 1e-9
    {
        return Err(Error::argument(format!(
            "split ratios must be in [0,1] and sum to 1, got {:?}",
            ratios
        )));
    }
    let n = ds.len();
    // The epsilon keeps products such as 0.29 * 100 from flooring to 28.
    let n_valid = (n as f64 * r_valid + 1e-9).floor() as usize;
    let n_test = (n as f64 * r_test + 1e-9).floor() as usize;
    let n_train = n - n_valid - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assign = vec![Split::Train; n];
    for (rank, &i) in order.iter().enumerate() {
        assign[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        };
    }
    Ok(PairDataset {
        pairs: ds.pairs.clone(),
        marker_set: ds.marker_set.clone(),
        splits: Some(assign),
    })
}

/// Assigns splits from `doc_id` prefixes; pairs matching neither list
/// train. Used for section-numbered corpora.
pub fn split_by_prefix(ds: &PairDataset, valid: &[String], test: &[String]) -> Result<PairDataset> {
    let mut assign = Vec::with_capacity(ds.len());
    for (i, p) in ds.pairs.iter().enumerate() {
        let id = p
            .doc_id
            .as_deref()
            .ok_or_else(|| Error::argument(format!("pair {} has no doc_id column", i + 1)))?;
        let s = if valid.iter().any(|v| id.starts_with(v.as_str())) {
            Split::Valid
        } else if test.iter().any(|t| id.starts_with(t.as_str())) {
            Split::Test
        } else {
            Split::Train
        };
        assign.push(s);
    }
    Ok(PairDataset {
        pairs: ds.pairs.clone(),
        marker_set: ds.marker_set.clone(),
        splits: Some(assign),
    })
}

/// Caps every marker at `cap` pairs, choosing survivors by a seeded
/// shuffle. Survivors keep their original order.
pub fn balance(ds: &PairDataset, cap: usize, seed: u64) -> Result<PairDataset> {
    if cap == 0 {
        return Err(Error::argument("balance cap must be at least 1"));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut taken: BTreeMap<&str, usize> = BTreeMap::new();
    let mut keep = vec![false; ds.len()];
    for i in order {
        let c = taken.entry(ds.pairs[i].marker.as_str()).or_default();
        if *c < cap {
            *c += 1;
            keep[i] = true;
        }
    }
    Ok(PairDataset {
        pairs: ds
            .pairs
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(p, _)| p.clone())
            .collect(),
        marker_set: ds.marker_set.clone(),
        splits: ds.splits.as_ref().map(|a| {
            a.iter()
                .zip(&keep)
                .filter(|(_, k)| **k)
                .map(|(s, _)| *s)
                .collect()
        }),
    })
}

/// Drops exact repeats of (s1, s2, marker), keeping the first.
pub fn dedup_pairs(pairs: &[PairRecord]) -> Vec<PairRecord> {
    let mut seen = std::collections::HashSet::new();
    pairs
        .iter()
        .filter(|p| seen.insert((p.s1.clone(), p.s2.clone(), p.marker.clone())))
        .cloned()
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkerCount {
    pub marker: String,
    pub count: usize,
    pub percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkerStats {
    /// Sorted by descending count, then marker.
    pub rows: Vec<MarkerCount>,
    pub total: usize,
}

fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

impl MarkerStats {
    pub fn from_counts<I, S>(counts: I) -> Self
    where
        I: IntoIterator<Item = (S, usize)>,
        S: Into<String>,
    {
        let mut merged: BTreeMap<String, usize> = BTreeMap::new();
        for (m, c) in counts {
            *merged.entry(m.into()).or_default() += c;
        }
        let total: usize = merged.values().sum();
        let mut rows: Vec<MarkerCount> = merged
            .into_iter()
            .map(|(marker, count)| MarkerCount {
                marker,
                count,
                percent: if total == 0 { 0.0 } else { 100.0 * count as f64 / total as f64 },
            })
            .collect();
        rows.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.marker.cmp(&b.marker)));
        MarkerStats { rows, total }
    }

    pub fn get(&self, marker: &str) -> Option<&MarkerCount> {
        self.rows.iter().find(|r| r.marker == marker)
    }
}

impl fmt::Display for MarkerStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.marker.len()).max().unwrap_or(0).max(6);
        for r in &self.rows {
            writeln!(f, "{:<width$}  {:>12}  {:>6.2}", r.marker, thousands(r.count), r.percent)?;
        }
        let total_pct = if self.total == 0 { 0.0 } else { 100.0 };
        writeln!(f, "{:<width$}  {:>12}  {:>6.2}", "Total", thousands(self.total), total_pct)
    }
}

pub fn marker_stats(ds: &PairDataset) -> MarkerStats {
    MarkerStats::from_counts(ds.pairs.iter().map(|p| (p.marker.as_str(), 1)))
}

/// Replaces tabs and line breaks with single spaces.
pub fn sanitize_field(text: &str) -> String {
    if text.contains(['\t', '\n', '\r']) {
        text.replace("\r\n", " ").replace(['\t', '\n', '\r'], " ")
    } else {
        text.to_string()
    }
}

/// Reads `s1<TAB>s2<TAB>marker[<TAB>doc_id]` lines. Empty lines are skipped.
pub fn read_pairs_tsv<R: BufRead>(read: R) -> Result<Vec<PairRecord>> {
    let mut pairs = Vec::new();
    for (i, line) in read.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 && fields.len() != 4 {
            return Err(Error::parse(
                i + 1,
                format!("expected 3 or 4 tab-separated fields, found {}", fields.len()),
            ));
        }
        pairs.push(PairRecord {
            s1: fields[0].to_string(),
            s2: fields[1].to_string(),
            marker: fields[2].to_string(),
            doc_id: fields.get(3).map(|s| s.to_string()),
        });
    }
    Ok(pairs)
}

pub fn write_pairs<W: Write>(pairs: &[PairRecord], mut w: W) -> Result<()> {
    for p in pairs {
        write!(w, "{}\t{}\t{}", sanitize_field(&p.s1), sanitize_field(&p.s2), sanitize_field(&p.marker))?;
        if let Some(doc) = &p.doc_id {
            write!(w, "\t{}", sanitize_field(doc))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn load_pairs(path: &Path) -> Result<Vec<PairRecord>> {
    let file = std::fs::File::open(path)?;
    read_pairs_tsv(std::io::BufReader::new(file))
}

pub fn save_pairs(path: &Path, pairs: &[PairRecord]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_pairs(pairs, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Sidecar describing how a dataset file was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub marker_set: String,
    pub seed: Option<u64>,
    pub ratios: Option<(f64, f64, f64)>,
    pub cap: Option<usize>,
    pub source_checksum: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ds(markers: &[&str]) -> PairDataset {
        PairDataset::from_pairs(
            markers
                .iter()
                .enumerate()
                .map(|(i, m)| PairRecord::new(format!("first {}", i), format!("second {}", i), *m))
                .collect(),
        )
    }

    #[test]
    fn marker_sets() {
        assert_eq!(MarkerSet::Books5.markers().len(), 5);
        assert_eq!(MarkerSet::Books8.markers().len(), 8);
        assert_eq!(MarkerSet::BooksAll.markers().len(), 15);
        assert!(!MarkerSet::Books5.contains("so"));
        assert!(MarkerSet::Books8.contains("so"));
        assert!(MarkerSet::Books5.markers().is_subset(&MarkerSet::Books8.markers()));
        assert!(MarkerSet::Books8.markers().is_subset(&MarkerSet::BooksAll.markers()));
        assert!(MarkerSet::from_name("books9").is_err());
        assert_eq!(MarkerSet::from_name("Books5").unwrap(), MarkerSet::Books5);
        let custom = MarkerSet::from_name("custom:so, then").unwrap();
        assert_eq!(custom.markers().len(), 2);
        assert_eq!(MarkerSet::from_name(&custom.name()).unwrap(), custom);
    }

    #[test]
    fn subset_drops_so_and_partitions() {
        let d = ds(&["so", "and", "so", "because", "then", "when"]);
        let sub = subset_markers(&d, &MarkerSet::Books5);
        assert!(sub.pairs.iter().all(|p| p.marker != "so"));
        let outside = d.pairs.iter().filter(|p| !MarkerSet::Books5.contains(&p.marker)).count();
        assert_eq!(sub.len() + outside, d.len());
        assert_eq!(subset_markers(&d, &MarkerSet::BooksAll).pairs, d.pairs);
    }

    #[test]
    fn split_sizes() {
        let d = ds(&vec!["and"; 100]);
        assert_eq!(split(&d, DEFAULT_RATIOS, 7).unwrap().split_sizes(), (90, 5, 5));
        let d = ds(&vec!["and"; 101]);
        let s = split(&d, DEFAULT_RATIOS, 7).unwrap();
        assert_eq!(s.split_sizes(), (91, 5, 5));
        assert_eq!(s, split(&d, DEFAULT_RATIOS, 7).unwrap());
        assert_ne!(s.splits, split(&d, DEFAULT_RATIOS, 8).unwrap().splits);
        assert!(split(&ds(&[]), DEFAULT_RATIOS, 7).is_err());
        assert!(split(&d, (0.5, 0.2, 0.2), 7).is_err());
    }

    #[test]
    fn split_by_doc_prefix() {
        let mut d = ds(&["and", "but", "so"]);
        for (p, id) in d.pairs.iter_mut().zip(["00-a", "23-b", "05-c"]) {
            p.doc_id = Some(id.into());
        }
        let s = split_by_prefix(&d, &["00".into(), "01".into()], &["23".into(), "24".into()]).unwrap();
        assert_eq!(s.splits.unwrap(), vec![Split::Valid, Split::Test, Split::Train]);
        assert!(split_by_prefix(&ds(&["and"]), &[], &[]).is_err());
    }

    #[test]
    fn balance_caps() {
        let d = ds(&["and", "and", "and", "but", "still", "still"]);
        let b = balance(&d, 2, 3).unwrap();
        let stats = marker_stats(&b);
        assert_eq!(stats.get("and").unwrap().count, 2);
        assert_eq!(stats.get("still").unwrap().count, 2);
        assert_eq!(stats.get("but").unwrap().count, 1);
        assert_eq!(balance(&d, 100, 3).unwrap(), d);
        let one = balance(&d, 1, 3).unwrap();
        assert_eq!(one.len(), 3);
        assert_eq!(balance(&b, 2, 3).unwrap(), b);
        assert!(balance(&d, 0, 3).is_err());
    }

    #[test]
    fn stats_single_class() {
        let s = marker_stats(&ds(&["so", "so"]));
        assert_eq!(s.rows[0].percent, 100.0);
        assert_eq!(s.total, 2);
        assert!(s.to_string().contains("Total"));
    }

    #[test]
    fn thousands_separator() {
        assert_eq!(thousands(4706292), "4,706,292");
        assert_eq!(thousands(999), "999");
        assert_eq!(thousands(1000), "1,000");
    }

    #[test]
    fn tsv_sanitizes_and_reads_doc_column() {
        let mut p = PairRecord::new("a\tb", "c\nd", "so");
        p.doc_id = Some("wsj_01".into());
        let mut buf = Vec::new();
        write_pairs(&[p], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "a b\tc d\tso\twsj_01\n");
        let back = read_pairs_tsv(&buf[..]).unwrap();
        assert_eq!(back[0].doc_id.as_deref(), Some("wsj_01"));
        assert!(read_pairs_tsv("only\ttwo\n".as_bytes()).is_err());
    }

    fn field() -> impl Strategy<Value = String> {
        "[a-zA-Z ,.'\t\n]{1,30}".prop_filter("non-empty after sanitizing", |s| !sanitize_field(s).is_empty())
    }

    proptest! {
        #[test]
        fn tsv_round_trip(rows in proptest::collection::vec((field(), field(), "[a-z]{1,8}"), 0..20)) {
            let pairs: Vec<PairRecord> = rows.iter().map(|(a, b, m)| PairRecord::new(a.clone(), b.clone(), m.clone())).collect();
            let mut buf = Vec::new();
            write_pairs(&pairs, &mut buf).unwrap();
            let back = read_pairs_tsv(&buf[..]).unwrap();
            let expected: Vec<PairRecord> = pairs.iter().map(|p| PairRecord::new(sanitize_field(&p.s1), sanitize_field(&p.s2), p.marker.clone())).collect();
            prop_assert_eq!(back, expected);
        }

        #[test]
        fn split_is_partition(n in 1usize..300, seed in any::<u64>()) {
            let d = ds(&vec!["and"; n]);
            let s = split(&d, DEFAULT_RATIOS, seed).unwrap();
            let (a, b, c) = s.split_sizes();
            prop_assert_eq!(a + b + c, n);
            prop_assert_eq!(b, (n as f64 * 0.05 + 1e-9).floor() as usize);
            prop_assert_eq!(c, b);
        }
    }
}
