use std::collections::BTreeMap;

use dismark::dataset::PairRecord;
use dismark::embed::{EmbeddingTable, LogRegConfig};
use dismark::eval::{
    confusion, frequency_residual_analysis, ols, order_by_frequency, pair_task_eval, residual_analysis_cells,
    Classifier, Featurizer, LOG_DISPLAY_DELTA,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn s(v: &[&str]) -> Vec<String> {
    v.iter().map(|x| x.to_string()).collect()
}

#[test]
fn ols_recovers_an_exact_line() {
    let x: Vec<f64> = (0..50).map(|i| i as f64 * 0.3 - 4.0).collect();
    let y: Vec<f64> = x.iter().map(|v| 2.5 - 1.25 * v).collect();
    let fit = ols(&x, &y).unwrap();
    assert!((fit.intercept - 2.5).abs() < 1e-12 && (fit.slope + 1.25).abs() < 1e-12);
    assert!((fit.r_squared - 1.0).abs() < 1e-12);
    assert!(fit.residuals.iter().all(|r| r.abs() < 1e-12));
}

#[test]
fn independent_noise_explains_almost_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<f64> = (0..5000).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..5000).map(|_| rng.gen_range(-1.0..1.0)).collect();
    assert!(ols(&x, &y).unwrap().r_squared < 0.05);
}

#[test]
fn residual_analysis_detects_a_planted_dependence() {
    // The balanced matrix copies the unbalanced one's deviation from the
    // frequency trend, so the second regression explains it completely.
    let k = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let log_freq: Vec<f64> = (0..k).map(|i| (10.0 * (i + 1) as f64).ln()).collect();
    let unb: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..k).map(|j| 0.02 * log_freq[j] + rng.gen_range(0.0..0.1)).collect())
        .collect();
    let first = residual_analysis_cells(&unb, &unb, &log_freq, false).unwrap();
    let mut bal = vec![vec![0.0; k]; k];
    let mut cell = 0;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                bal[i][j] = 0.3 + 2.0 * first.frequency_fit.residuals[cell];
                cell += 1;
            }
        }
    }
    let ra = residual_analysis_cells(&unb, &bal, &log_freq, false).unwrap();
    assert_eq!(ra.cells, k * (k - 1));
    assert!((ra.r_squared - 1.0).abs() < 1e-9);
    assert!((ra.residual_fit.slope - 2.0).abs() < 1e-9);
    assert_eq!(residual_analysis_cells(&unb, &bal, &log_freq, true).unwrap().cells, k * k);
}

#[test]
fn frequency_analysis_needs_positive_counts() {
    let classes = s(&["a", "b", "c"]);
    let gold = s(&["a", "a", "b", "c", "c", "b"]);
    let pred = s(&["a", "b", "b", "c", "a", "c"]);
    let cm = confusion(&gold, &pred, &classes).unwrap();
    let mut freqs: BTreeMap<String, usize> = [("a", 10), ("b", 100), ("c", 1000)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
    assert!(frequency_residual_analysis(&cm, &cm, &freqs, false).is_ok());
    freqs.insert("b".into(), 0);
    assert!(frequency_residual_analysis(&cm, &cm, &freqs, false).is_err());
}

#[test]
fn confusion_csv_layouts() {
    let classes = s(&["but", "so"]);
    let cm = confusion(&s(&["but", "but", "so"]), &s(&["but", "so", "so"]), &classes).unwrap();
    let mut counts = Vec::new();
    cm.write_counts_csv(&mut counts).unwrap();
    assert_eq!(String::from_utf8(counts).unwrap(), "actual\\predicted,but,so\nbut,1,1\nso,0,1\n");
    let mut norm = Vec::new();
    cm.write_normalized_csv(&mut norm).unwrap();
    assert_eq!(String::from_utf8(norm).unwrap(), "actual\\predicted,but,so\nbut,0.5,0.5\nso,0,1\n");
    let log = cm.log_display(LOG_DISPLAY_DELTA);
    assert_eq!(log[1][0], LOG_DISPLAY_DELTA.ln());
    assert_eq!(log[0][0], (0.5 + LOG_DISPLAY_DELTA).ln());
    assert!(confusion(&s(&["x"]), &s(&["but"]), &classes).is_err());
}

#[test]
fn frequency_order_is_ascending_with_label_ties() {
    let freqs: BTreeMap<String, usize> = [("so", 5), ("and", 50), ("but", 5), ("if", 1)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
    assert_eq!(order_by_frequency(&freqs), s(&["if", "but", "so", "and"]));
}

fn cue_pairs(rng: &mut ChaCha8Rng, n: usize) -> Vec<PairRecord> {
    (0..n)
        .map(|_| {
            let (label, cue) = [("so", "red"), ("but", "blue"), ("if", "green")][rng.gen_range(0..3)];
            PairRecord::new("the cat sat down", format!("then a {} dog ran off", cue), label)
        })
        .collect()
}

#[test]
fn baselines_learn_a_lexical_cue() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let train = cue_pairs(&mut rng, 300);
    let test = cue_pairs(&mut rng, 60);
    let logreg = Classifier::LogReg(LogRegConfig::default());

    let bow = pair_task_eval(&train, &test, &Featurizer::Ngram { orders: vec![1], cap: 1000, min_freq: 1 }, &logreg).unwrap();
    assert_eq!(bow.accuracy, 1.0);

    // Word probabilities in a 360-pair corpus are large, so a larger `a`
    // keeps weights near the range they take on a real corpus.
    let mut table = EmbeddingTable::new(3);
    table.a = 1.0;
    for (w, v) in [("red", [1.0, 0.0, 0.0]), ("blue", [0.0, 1.0, 0.0]), ("green", [0.0, 0.0, 1.0]), ("dog", [0.2, 0.2, 0.2])] {
        table.insert(w, v.to_vec()).unwrap();
    }
    let sif = pair_task_eval(&train, &test, &Featurizer::Sif { table }, &logreg).unwrap();
    assert!(sif.accuracy > 0.9, "{}", sif.accuracy);

    let majority = pair_task_eval(&train, &test, &Featurizer::Ngram { orders: vec![1], cap: 10, min_freq: 1 }, &Classifier::Majority).unwrap();
    assert_eq!(majority.accuracy, majority.majority_accuracy);
    assert!(majority.predictions.iter().all(|p| *p == majority.majority_label));
}
