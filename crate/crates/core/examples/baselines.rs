//! Bag-of-ngrams baselines and a majority classifier on a synthetic pair
//! set where the label is signalled by the order of two cue words.
//!
//!     cargo run --release --example baselines

use dismark::embed::LogRegConfig;
use dismark::eval::{pair_task_eval, Classifier, Featurizer};
use dismark::synth::{cue_corpus, CueCorpus};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dismark::Result<()> {
    let mut spec = CueCorpus::new(&["because", "but", "so"], 3000);
    spec.ordered_cue = true;
    spec.distractor = true;
    spec.max_gap = 3;
    let pairs = cue_corpus(&mut ChaCha8Rng::seed_from_u64(8), &spec);
    let (train, test) = pairs.split_at(2700);

    let logreg = Classifier::LogReg(LogRegConfig::default());
    let majority = pair_task_eval(train, test, &Featurizer::Ngram { orders: vec![1], cap: 10, min_freq: 1 }, &Classifier::Majority)?;
    println!("majority            {:.4}", majority.accuracy);
    for orders in [vec![1], vec![1, 2], vec![1, 2, 3]] {
        let feat = Featurizer::Ngram { orders: orders.clone(), cap: 100_000, min_freq: 1 };
        let r = pair_task_eval(train, test, &feat, &logreg)?;
        println!("ngram orders {:<6} {:.4}", format!("{:?}", orders), r.accuracy);
    }
    Ok(())
}
