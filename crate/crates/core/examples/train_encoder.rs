//! Trains the BiLSTM-max pair classifier on a small synthetic set, prints
//! the epoch log, saves a checkpoint and reloads it.
//!
//!     cargo run --release --example train_encoder

use dismark::encoder::{self, load_checkpoint, save_checkpoint, TrainConfig};
use dismark::synth::{cue_corpus, CueCorpus};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> dismark::Result<()> {
    let pairs = cue_corpus(&mut ChaCha8Rng::seed_from_u64(7), &CueCorpus::new(&["because", "but", "so"], 1200));
    let (train, rest) = pairs.split_at(1000);
    let (valid, test) = rest.split_at(100);

    let cfg = TrainConfig { hidden: 16, max_epochs: 8, seed: 1, ..TrainConfig::default() };
    let model = encoder::train(train, valid, &cfg)?;
    println!("epoch  lr       loss     val_acc");
    for e in &model.log {
        println!("{:<6} {:<8.4} {:<8.4} {:.4}", e.epoch, e.lr, e.train_loss, e.val_acc);
    }
    println!("best epoch {}, test accuracy {:.4}", model.best_epoch, model.accuracy(test)?);

    let dir = std::env::temp_dir().join("dismark-example");
    std::fs::create_dir_all(&dir)?;
    let prefix = dir.join("encoder");
    save_checkpoint(&model, &prefix)?;
    let back = load_checkpoint(&prefix)?;
    let (label, probs) = back.predict(&test[0].s1, &test[0].s2)?;
    println!("reloaded model predicts {} ({:?}) for gold {}", label, probs, test[0].marker);
    Ok(())
}
