//! Subsetting, balancing and splitting a labeled pair set.
//!
//!     cargo run --example dataset_ops

use dismark::dataset::{balance, marker_stats, split, subset_markers};
use dismark::synth::{cue_corpus, CueCorpus};
use dismark::{MarkerSet, PairDataset, Split};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dismark::Result<()> {
    let spec = CueCorpus::new(&["and", "but", "because", "if", "so", "when", "before"], 2000);
    let mut pairs = cue_corpus(&mut ChaCha8Rng::seed_from_u64(1), &spec);
    // Skew the label distribution the way real corpora are skewed.
    pairs.retain(|p| p.marker == "and" || p.s1.len() % 3 == 0);
    let ds = PairDataset::from_pairs(pairs);
    println!("all pairs\n{}", marker_stats(&ds));

    let five = subset_markers(&ds, &MarkerSet::Books5);
    println!("books5 subset\n{}", marker_stats(&five));

    let balanced = balance(&five, 100, 7)?;
    println!("balanced to 100 per marker\n{}", marker_stats(&balanced));

    let parts = split(&balanced, (0.9, 0.05, 0.05), 7)?;
    let (tr, va, te) = parts.split_sizes();
    println!("train {} valid {} test {}", tr, va, te);
    println!("first test pair: {:?}", parts.part(Split::Test).first());
    Ok(())
}
