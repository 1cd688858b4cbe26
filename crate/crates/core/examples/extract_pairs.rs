//! Extracts marker pairs from a CoNLL-U file (the bundled test corpus by
//! default) and prints pairs and rejections.
//!
//!     cargo run --example extract_pairs [-- corpus.conllu]

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;

use dismark::extract::extract_corpus;
use dismark::{default_patterns, parse_conllu, ExtractionConfig, MarkerSet};

fn main() -> dismark::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/mini.conllu").to_string());
    let docs = parse_conllu(BufReader::new(File::open(&path)?))?;
    let registry = default_patterns();

    for set in [MarkerSet::Books5, MarkerSet::BooksAll] {
        let config = ExtractionConfig::with_markers(set.markers());
        let result = extract_corpus(&docs, &registry, &config, 1)?;
        println!("== {} ({} pairs, {} rejections)", set.name(), result.accepted.len(), result.rejected.len());
        for p in &result.accepted {
            println!("{:<8} {:?}  {} | {}", p.marker, p.mode, p.s1, p.s2);
        }
        let mut reasons: BTreeMap<String, usize> = BTreeMap::new();
        for r in &result.rejected {
            *reasons.entry(r.reason.to_string()).or_default() += 1;
        }
        println!("rejections by reason: {:?}\n", reasons);
    }
    Ok(())
}
