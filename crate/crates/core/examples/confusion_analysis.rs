//! Confusion matrices for a classifier trained on skewed and on balanced
//! data, followed by the frequency residual analysis.
//!
//!     cargo run --release --example confusion_analysis

use dismark::dataset::balance;
use dismark::embed::LogRegConfig;
use dismark::eval::{confusion, frequency_residual_analysis, label_frequencies, order_by_frequency, pair_task_eval, Classifier, Featurizer};
use dismark::synth::{cue_corpus, CueCorpus};
use dismark::PairDataset;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dismark::Result<()> {
    let mut spec = CueCorpus::new(&["and", "but", "because", "if", "so"], 4000);
    spec.label_noise = 0.4;
    let mut pairs = cue_corpus(&mut ChaCha8Rng::seed_from_u64(3), &spec);
    let test = pairs.split_off(3400);
    // Thin everything except "and" and "but" to skew the training labels.
    let mut keep = 0usize;
    pairs.retain(|p| {
        keep += 1;
        p.marker == "and" || p.marker == "but" || keep % 3 == 0
    });
    let balanced = balance(&PairDataset::from_pairs(pairs.clone()), 150, 3)?.pairs;

    let freqs = label_frequencies(&pairs.iter().map(|p| p.marker.as_str()).collect::<Vec<_>>());
    let classes = order_by_frequency(&freqs);
    println!("training frequencies {:?}", freqs);

    let feat = Featurizer::Ngram { orders: vec![1, 2], cap: 50_000, min_freq: 1 };
    let clf = Classifier::LogReg(LogRegConfig::default());
    let gold: Vec<&str> = test.iter().map(|p| p.marker.as_str()).collect();
    let mut matrices = Vec::new();
    for (name, train) in [("unbalanced", &pairs), ("balanced", &balanced)] {
        let r = pair_task_eval(train, &test, &feat, &clf)?;
        let cm = confusion(&gold, &r.predictions.iter().map(String::as_str).collect::<Vec<_>>(), &classes)?;
        println!("\n{} training, accuracy {:.4}", name, r.accuracy);
        cm.write_normalized_csv(std::io::stdout())?;
        matrices.push(cm);
    }
    let ra = frequency_residual_analysis(&matrices[0], &matrices[1], &freqs, false)?;
    println!(
        "\nfrequency fit slope {:.4}, residual fit R^2 {:.4}, F(1,{}) = {:.2}",
        ra.frequency_fit.slope, ra.r_squared, ra.cells - 2, ra.f_statistic
    );
    Ok(())
}
