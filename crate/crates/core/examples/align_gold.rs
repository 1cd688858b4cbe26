//! Aligns noisy copies of gold pairs back to the gold set and reports
//! per-marker extraction precision.
//!
//!     cargo run --example align_gold

use dismark::align::{align_by_marker, extraction_precision, normalized_levenshtein, Preprocessor, DEFAULT_THRESHOLD};
use dismark::PairRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn corrupt(rng: &mut ChaCha8Rng, text: &str, rate: f64) -> String {
    text.chars()
        .map(|c| if rng.gen_bool(rate) { (b'a' + rng.gen_range(0..26)) as char } else { c })
        .collect()
}

fn main() {
    let gold = vec![
        PairRecord::new("shares fell 3 % in early trading", "investors worried about rates", "because"),
        PairRecord::new("the company reported a loss", "revenue rose 12 %", "but"),
        PairRecord::new("the deal was approved", "the merger closed in March", "so"),
        PairRecord::new("analysts expect more cuts", "demand stays weak", "if"),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut extracted: Vec<PairRecord> = gold
        .iter()
        .map(|g| PairRecord::new(corrupt(&mut rng, &g.s1, 0.1), corrupt(&mut rng, &g.s2, 0.1), g.marker.clone()))
        .collect();
    extracted.push(PairRecord::new("nothing like any gold sentence", "completely unrelated text", "so"));

    println!(
        "distance between a gold S1 and its noisy copy: {:.3}",
        normalized_levenshtein(&gold[0].s1, &extracted[0].s1)
    );
    let results = align_by_marker(&extracted, &gold, DEFAULT_THRESHOLD, &Preprocessor::with_numbers("<num>"));
    for (marker, r) in &results {
        for a in &r.alignments {
            println!("{:<8} extracted {} -> gold {}  distance {:.3}", marker, a.extracted, a.gold, a.match_distance);
        }
        for u in &r.unaligned {
            println!("{:<8} extracted {} has no gold match", marker, u);
        }
    }
    let report = extraction_precision(&results);
    println!("overall precision {:?}", report.overall.precision);
}
