//! Classification metrics, confusion analysis and a generic pair-task
//! harness.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::PairRecord;
use crate::embed::{self, EmbeddingTable, LogRegConfig, SifEmbedder, SparseVec, Vocabulary};
use crate::encoder::TrainedEncoder;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold count.
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrfReport {
    pub classes: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
}

impl PrfReport {
    pub fn class(&self, label: &str) -> Option<&ClassMetrics> {
        self.classes.iter().find(|c| c.label == label)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall and F1 over the union of gold and
/// predicted labels, with unweighted and support-weighted averages.
pub fn per_class_prf<S: AsRef<str>>(gold: &[S], pred: &[S]) -> Result<PrfReport> {
    if gold.len() != pred.len() {
        return Err(Error::argument(format!(
            "{} gold labels but {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    let labels: BTreeSet<&str> = gold.iter().chain(pred).map(AsRef::as_ref).collect();
    let mut tp: BTreeMap<&str, usize> = BTreeMap::new();
    let mut gold_n: BTreeMap<&str, usize> = BTreeMap::new();
    let mut pred_n: BTreeMap<&str, usize> = BTreeMap::new();
    let mut correct = 0;
    for (g, p) in gold.iter().zip(pred) {
        let (g, p) = (g.as_ref(), p.as_ref());
        *gold_n.entry(g).or_default() += 1;
        *pred_n.entry(p).or_default() += 1;
        if g == p {
            *tp.entry(g).or_default() += 1;
            correct += 1;
        }
    }
    let classes: Vec<ClassMetrics> = labels
        .iter()
        .map(|&l| {
            let t = tp.get(l).copied().unwrap_or(0);
            let support = gold_n.get(l).copied().unwrap_or(0);
            let precision = ratio(t, pred_n.get(l).copied().unwrap_or(0));
            let recall = ratio(t, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                label: l.to_string(),
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let k = classes.len().max(1) as f64;
    let total = gold.len();
    let mean = |f: fn(&ClassMetrics) -> f64| classes.iter().map(f).sum::<f64>() / k;
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        classes.iter().map(|c| f(c) * c.support as f64).sum::<f64>() / total.max(1) as f64
    };
    Ok(PrfReport {
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        weighted_precision: weighted(|c| c.precision),
        weighted_recall: weighted(|c| c.recall),
        weighted_f1: weighted(|c| c.f1),
        accuracy: ratio(correct, total),
        classes,
    })
}

impl fmt::Display for PrfReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self.classes.iter().map(|c| c.label.len()).max().unwrap_or(0).max(12);
        writeln!(f, "{:<w$}  {:>9}  {:>9}  {:>9}  {:>8}", "label", "precision", "recall", "f1", "support")?;
        for c in &self.classes {
            writeln!(
                f,
                "{:<w$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>8}",
                c.label, c.precision, c.recall, c.f1, c.support
            )?;
        }
        writeln!(
            f,
            "{:<w$}  {:>9.4}  {:>9.4}  {:>9.4}",
            "unweighted", self.macro_precision, self.macro_recall, self.macro_f1
        )?;
        writeln!(
            f,
            "{:<w$}  {:>9.4}  {:>9.4}  {:>9.4}",
            "weighted", self.weighted_precision, self.weighted_recall, self.weighted_f1
        )?;
        writeln!(f, "{:<w$}  {:>9.4}", "accuracy", self.accuracy)
    }
}

/// Labels sorted by ascending frequency (least frequent first); ties
/// broken by label.
pub fn order_by_frequency(freqs: &BTreeMap<String, usize>) -> Vec<String> {
    let mut labels: Vec<(&String, &usize)> = freqs.iter().collect();
    labels.sort_by(|a, b| a.1.cmp(b.1).then_with(|| a.0.cmp(b.0)));
    labels.into_iter().map(|(l, _)| l.clone()).collect()
}

pub fn label_frequencies<S: AsRef<str>>(labels: &[S]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for l in labels {
        *m.entry(l.as_ref().to_string()).or_default() += 1;
    }
    m
}

pub const LOG_DISPLAY_DELTA: f64 = 1e-4;

/// Counts with rows = actual class, columns = predicted class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let trace: u64 = (0..self.classes.len()).map(|i| self.counts[i][i]).sum();
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            trace as f64 / total as f64
        }
    }

    /// Each row divided by its sum; empty rows stay zero.
    pub fn normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 })
                    .collect()
            })
            .collect()
    }

    /// `ln(proportion + delta)` of the row-normalized matrix.
    pub fn log_display(&self, delta: f64) -> Vec<Vec<f64>> {
        self.normalized()
            .into_iter()
            .map(|row| row.into_iter().map(|p| (p + delta).ln()).collect())
            .collect()
    }

    fn write_rows<W: Write, T: fmt::Display>(&self, rows: &[Vec<T>], mut w: W) -> Result<()> {
        writeln!(w, "actual\\predicted,{}", self.classes.join(","))?;
        for (label, row) in self.classes.iter().zip(rows) {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            writeln!(w, "{},{}", label, cells.join(","))?;
        }
        Ok(())
    }

    pub fn write_counts_csv<W: Write>(&self, w: W) -> Result<()> {
        self.write_rows(&self.counts, w)
    }

    pub fn write_normalized_csv<W: Write>(&self, w: W) -> Result<()> {
        self.write_rows(&self.normalized(), w)
    }

    pub fn write_log_csv<W: Write>(&self, delta: f64, w: W) -> Result<()> {
        self.write_rows(&self.log_display(delta), w)
    }
}

/// Confusion counts over `classes`, which fixes row and column order.
pub fn confusion<S: AsRef<str>>(gold: &[S], pred: &[S], classes: &[String]) -> Result<ConfusionMatrix> {
    if gold.len() != pred.len() {
        return Err(Error::argument("gold and predicted label counts differ"));
    }
    let index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let k = classes.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (g, p) in gold.iter().zip(pred) {
        let lookup = |l: &str| {
            index
                .get(l)
                .copied()
                .ok_or_else(|| Error::argument(format!("unknown label '{}'", l)))
        };
        counts[lookup(g.as_ref())?][lookup(p.as_ref())?] += 1;
    }
    Ok(ConfusionMatrix {
        classes: classes.to_vec(),
        counts,
    })
}

/// Simple linear regression `y = intercept + slope * x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
    pub residuals: Vec<f64>,
}

pub fn ols(x: &[f64], y: &[f64]) -> Result<OlsFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Analysis("regression needs at least two paired observations".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx <= 1e-300 * n {
        return Err(Error::Analysis("regressor is constant".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - intercept - slope * a).collect();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(OlsFit {
        intercept,
        slope,
        r_squared,
        residuals,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualAnalysis {
    /// Unbalanced cells on log frequency of the predicted class.
    pub frequency_fit: OlsFit,
    /// Balanced cells on the residuals of `frequency_fit`.
    pub residual_fit: OlsFit,
    pub r_squared: f64,
    pub cells: usize,
    /// F(1, cells - 2) for the residual fit.
    pub f_statistic: f64,
}

/// Two-step regression over matrix cells: how much of the balanced
/// model's confusions is explained by what the unbalanced model confuses
/// beyond class frequency.
pub fn residual_analysis_cells(
    unbalanced: &[Vec<f64>],
    balanced: &[Vec<f64>],
    log_freq_predicted: &[f64],
    include_diagonal: bool,
) -> Result<ResidualAnalysis> {
    let k = log_freq_predicted.len();
    let square = |m: &[Vec<f64>]| m.len() == k && m.iter().all(|r| r.len() == k);
    if !square(unbalanced) || !square(balanced) {
        return Err(Error::Analysis("matrices must be square over the same classes".into()));
    }
    let (mut x, mut y_unb, mut y_bal) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..k {
        for j in 0..k {
            if i == j && !include_diagonal {
                continue;
            }
            x.push(log_freq_predicted[j]);
            y_unb.push(unbalanced[i][j]);
            y_bal.push(balanced[i][j]);
        }
    }
    let frequency_fit = ols(&x, &y_unb)?;
    let residual_fit = ols(&frequency_fit.residuals, &y_bal)?;
    let r2 = residual_fit.r_squared;
    let cells = x.len();
    Ok(ResidualAnalysis {
        r_squared: r2,
        cells,
        f_statistic: if r2 < 1.0 { r2 / (1.0 - r2) * (cells as f64 - 2.0) } else { f64::INFINITY },
        frequency_fit,
        residual_fit,
    })
}

/// Residual analysis over row-normalized confusion matrices.
pub fn frequency_residual_analysis(
    unbalanced: &ConfusionMatrix,
    balanced: &ConfusionMatrix,
    class_freqs: &BTreeMap<String, usize>,
    include_diagonal: bool,
) -> Result<ResidualAnalysis> {
    if unbalanced.classes != balanced.classes {
        return Err(Error::Analysis("confusion matrices cover different classes".into()));
    }
    let log_freq = unbalanced
        .classes
        .iter()
        .map(|c| match class_freqs.get(c) {
            Some(&f) if f > 0 => Ok((f as f64).ln()),
            _ => Err(Error::Analysis(format!("class '{}' needs a positive frequency", c))),
        })
        .collect::<Result<Vec<f64>>>()?;
    residual_analysis_cells(&unbalanced.normalized(), &balanced.normalized(), &log_freq, include_diagonal)
}

/// How pair texts become feature vectors.
pub enum Featurizer {
    Ngram { orders: Vec<usize>, cap: usize, min_freq: usize },
    Sif { table: EmbeddingTable },
    Encoder(Box<TrainedEncoder>),
}

impl Featurizer {
    pub fn name(&self) -> &'static str {
        match self {
            Featurizer::Ngram { .. } => "ngram",
            Featurizer::Sif { .. } => "sif",
            Featurizer::Encoder(_) => "encoder",
        }
    }
}

pub enum Classifier {
    LogReg(LogRegConfig),
    Majority,
}

enum Fitted {
    Ngram(Vocabulary),
    Sif(SifEmbedder),
    Encoder,
}

fn fit_featurizer(f: &Featurizer, train: &[PairRecord]) -> Fitted {
    let texts = || train.iter().flat_map(|p| [p.s1.as_str(), p.s2.as_str()]);
    match f {
        Featurizer::Ngram { orders, cap, min_freq } => Fitted::Ngram(Vocabulary::build(texts(), orders, *cap, *min_freq)),
        Featurizer::Sif { table } => {
            let mut table = table.clone();
            table.estimate_probabilities(texts());
            Fitted::Sif(SifEmbedder::fit(table, texts()))
        }
        Featurizer::Encoder(_) => Fitted::Encoder,
    }
}

fn featurize(f: &Featurizer, fitted: &Fitted, p: &PairRecord) -> Result<SparseVec> {
    Ok(match (f, fitted) {
        (_, Fitted::Ngram(v)) => embed::pair_ngram_features(&p.s1, &p.s2, v),
        (_, Fitted::Sif(s)) => s.pair_features(&p.s1, &p.s2),
        (Featurizer::Encoder(enc), Fitted::Encoder) => {
            SparseVec::dense(enc.pair_vector(&p.s1, &p.s2)?.as_slice().expect("contiguous"))
        }
        _ => unreachable!("featurizer and fitted state always agree"),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub featurizer: String,
    pub accuracy: f64,
    pub majority_label: String,
    /// Accuracy of always predicting the training majority label.
    pub majority_accuracy: f64,
    /// Test examples whose label never occurs in training.
    pub unseen_test_labels: usize,
    pub metrics: PrfReport,
    pub predictions: Vec<String>,
}

impl fmt::Display for TaskReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "featurizer        {}", self.featurizer)?;
        writeln!(f, "accuracy          {:.4}", self.accuracy)?;
        writeln!(f, "majority baseline {:.4} ({})", self.majority_accuracy, self.majority_label)?;
        writeln!(f, "unseen labels     {}", self.unseen_test_labels)?;
        write!(f, "{}", self.metrics)
    }
}

/// Fits the featurizer and classifier on `train` and scores `test`.
pub fn pair_task_eval(
    train: &[PairRecord],
    test: &[PairRecord],
    featurizer: &Featurizer,
    classifier: &Classifier,
) -> Result<TaskReport> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::argument("train and test sets must be non-empty"));
    }
    let freqs = label_frequencies(&train.iter().map(|p| p.marker.as_str()).collect::<Vec<_>>());
    let majority_label = freqs
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(l, _)| l.clone())
        .expect("non-empty train");

    let predictions: Vec<String> = match classifier {
        Classifier::Majority => vec![majority_label.clone(); test.len()],
        Classifier::LogReg(cfg) => {
            let fitted = fit_featurizer(featurizer, train);
            let xs = train
                .iter()
                .map(|p| featurize(featurizer, &fitted, p))
                .collect::<Result<Vec<_>>>()?;
            let ys: Vec<String> = train.iter().map(|p| p.marker.clone()).collect();
            let fit = embed::train_logreg(&xs, &ys, cfg)?;
            test.iter()
                .map(|p| {
                    let x = featurize(featurizer, &fitted, p)?;
                    Ok(embed::predict(&fit.model, &x)?.0.to_string())
                })
                .collect::<Result<_>>()?
        }
    };
    let gold: Vec<&str> = test.iter().map(|p| p.marker.as_str()).collect();
    let pred: Vec<&str> = predictions.iter().map(String::as_str).collect();
    let metrics = per_class_prf(&gold, &pred)?;
    Ok(TaskReport {
        featurizer: featurizer.name().to_string(),
        accuracy: metrics.accuracy,
        majority_accuracy: ratio(gold.iter().filter(|g| **g == majority_label).count(), gold.len()),
        majority_label,
        unseen_test_labels: gold.iter().filter(|g| !freqs.contains_key(**g)).count(),
        metrics,
        predictions,
    })
}
