//! Baseline featurizers and a multinomial logistic regression.
//!
//! Two featurizers: bags of word n-grams, and frequency-weighted averages
//! of word vectors with the common component removed.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A sparse vector with strictly increasing indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseVec {
    pub dim: usize,
    pub entries: Vec<(usize, f64)>,
}

impl SparseVec {
    pub fn zeros(dim: usize) -> Self {
        SparseVec { dim, entries: Vec::new() }
    }

    pub fn dense(values: &[f64]) -> Self {
        SparseVec {
            dim: values.len(),
            entries: values.iter().copied().enumerate().collect(),
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |e| e.0)
            .map_or(0.0, |p| self.entries[p].1)
    }

    /// Appends `other` after this vector's dimensions.
    pub fn concat(&self, other: &SparseVec) -> SparseVec {
        let mut entries = self.entries.clone();
        entries.extend(other.entries.iter().map(|&(i, v)| (i + self.dim, v)));
        SparseVec {
            dim: self.dim + other.dim,
            entries,
        }
    }

    fn from_counts(dim: usize, counts: HashMap<usize, f64>) -> Self {
        let mut entries: Vec<(usize, f64)> = counts.into_iter().collect();
        entries.sort_by_key(|e| e.0);
        SparseVec { dim, entries }
    }
}

/// Every contiguous `n`-token window, joined with single spaces.
pub fn ngrams(tokens: &[&str], n: usize) -> Vec<String> {
    if n == 0 || tokens.len() < n {
        return Vec::new();
    }
    tokens.windows(n).map(|w| w.join(" ")).collect()
}

pub const DEFAULT_VOCAB_CAP: usize = 100_000;

/// N-gram inventory with dense ids ordered by descending frequency, ties
/// broken lexicographically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub orders: Vec<usize>,
    items: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn build<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        orders: &[usize],
        cap: usize,
        min_freq: usize,
    ) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            let tokens: Vec<&str> = text.split_whitespace().collect();
            for &n in orders {
                for g in ngrams(&tokens, n) {
                    *counts.entry(g).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(cap);
        Self::from_items(orders.to_vec(), ranked.into_iter().map(|(g, _)| g).collect())
    }

    pub fn from_items(orders: Vec<usize>, items: Vec<String>) -> Self {
        let index = items.iter().enumerate().map(|(i, g)| (g.clone(), i)).collect();
        Vocabulary { orders, items, index }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn id(&self, item: &str) -> Option<usize> {
        self.index.get(item).copied()
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }
}

/// Counts of in-vocabulary n-grams over whitespace tokens.
pub fn featurize_ngrams(text: &str, vocab: &Vocabulary) -> SparseVec {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let mut counts: HashMap<usize, f64> = HashMap::new();
    for &n in &vocab.orders {
        for g in ngrams(&tokens, n) {
            if let Some(id) = vocab.id(&g) {
                *counts.entry(id).or_default() += 1.0;
            }
        }
    }
    SparseVec::from_counts(vocab.len(), counts)
}

/// S1 features followed by S2 features.
pub fn pair_ngram_features(s1: &str, s2: &str, vocab: &Vocabulary) -> SparseVec {
    featurize_ngrams(s1, vocab).concat(&featurize_ngrams(s2, vocab))
}

pub const DEFAULT_SIF_A: f64 = 1e-3;
pub const PROBABILITY_FLOOR: f64 = 1e-9;

/// Word vectors plus unigram probabilities for frequency weighting.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    probs: HashMap<String, f64>,
    pub a: f64,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            vectors: HashMap::new(),
            probs: HashMap::new(),
            a: DEFAULT_SIF_A,
        }
    }

    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Config(format!(
                "vector of dimension {} in a table of dimension {}",
                vector.len(),
                self.dim
            )));
        }
        self.vectors.insert(word.into(), vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vector(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// Reads `word v1 ... vd` lines, with an optional `<count> <dim>`
    /// header line.
    pub fn read_text<R: BufRead>(read: R) -> Result<Self> {
        let mut table: Option<EmbeddingTable> = None;
        for (i, line) in read.lines().enumerate() {
            let line = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
                table = Some(EmbeddingTable::new(fields[1].parse().unwrap()));
                continue;
            }
            let values: Vec<f64> = fields[1..]
                .iter()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(i + 1, format!("bad vector component: {}", e)))?;
            let t = table.get_or_insert_with(|| EmbeddingTable::new(values.len()));
            t.insert(fields[0], values)
                .map_err(|e| Error::parse(i + 1, e.to_string()))?;
        }
        table.ok_or_else(|| Error::Config("embedding table is empty".into()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_text(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Unigram probabilities from whitespace tokens of `texts`.
    pub fn estimate_probabilities<'a>(&mut self, texts: impl IntoIterator<Item = &'a str>) {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut total = 0usize;
        for text in texts {
            for w in text.split_whitespace() {
                *counts.entry(w.to_string()).or_default() += 1;
                total += 1;
            }
        }
        self.probs = counts
            .into_iter()
            .map(|(w, c)| (w, c as f64 / total as f64))
            .collect();
    }

    pub fn probability(&self, word: &str) -> f64 {
        self.probs.get(word).copied().unwrap_or(PROBABILITY_FLOOR)
    }

    fn weight(&self, word: &str) -> f64 {
        self.a / (self.a + self.probability(word))
    }

    /// Frequency-weighted average of in-table word vectors; words missing
    /// from the table are skipped and an all-missing text maps to zero.
    pub fn weighted_average(&self, text: &str) -> Vec<f64> {
        let mut sum = vec![0.0; self.dim];
        let mut n = 0usize;
        for w in text.split_whitespace() {
            if let Some(v) = self.vectors.get(w) {
                let weight = self.weight(w);
                for (s, x) in sum.iter_mut().zip(v) {
                    *s += weight * x;
                }
                n += 1;
            }
        }
        if n > 0 {
            for s in &mut sum {
                *s /= n as f64;
            }
        }
        sum
    }
}

pub const POWER_TOLERANCE: f64 = 1e-9;
pub const POWER_MAX_ITERS: usize = 1000;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Leading eigenvector of the scatter matrix of the centered rows, by
/// power iteration. `None` when the rows have no variance.
pub fn first_principal_direction(rows: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = rows.len();
    let d = rows.first()?.len();
    if n == 0 || d == 0 {
        return None;
    }
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x / n as f64;
        }
    }
    let mut scatter = vec![0.0; d * d];
    for r in rows {
        let c: Vec<f64> = r.iter().zip(&mean).map(|(x, m)| x - m).collect();
        for i in 0..d {
            for j in 0..d {
                scatter[i * d + j] += c[i] * c[j];
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut u: Vec<f64> = (0..d).map(|_| rng.gen_range(0.5..1.5)).collect();
    let n0 = norm(&u);
    u.iter_mut().for_each(|x| *x /= n0);
    for _ in 0..POWER_MAX_ITERS {
        let mut w: Vec<f64> = (0..d).map(|i| dot(&scatter[i * d..(i + 1) * d], &u)).collect();
        let nw = norm(&w);
        if nw < 1e-300 {
            return None;
        }
        w.iter_mut().for_each(|x| *x /= nw);
        if dot(&w, &u) < 0.0 {
            w.iter_mut().for_each(|x| *x = -*x);
        }
        let delta = norm(&w.iter().zip(&u).map(|(a, b)| a - b).collect::<Vec<_>>());
        u = w;
        if delta < POWER_TOLERANCE {
            break;
        }
    }
    Some(u)
}

/// Subtracts the projection onto `direction` (a unit vector).
pub fn remove_component(v: &[f64], direction: &[f64]) -> Vec<f64> {
    let p = dot(v, direction);
    v.iter().zip(direction).map(|(x, u)| x - p * u).collect()
}

/// A fitted frequency-weighted embedder: the table plus the common
/// direction estimated on a reference corpus.
#[derive(Clone, Debug)]
pub struct SifEmbedder {
    pub table: EmbeddingTable,
    pub common: Option<Vec<f64>>,
}

impl SifEmbedder {
    pub fn fit<'a>(table: EmbeddingTable, texts: impl IntoIterator<Item = &'a str>) -> Self {
        let raw: Vec<Vec<f64>> = texts.into_iter().map(|t| table.weighted_average(t)).collect();
        let common = first_principal_direction(&raw);
        SifEmbedder { table, common }
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        let v = self.table.weighted_average(text);
        match &self.common {
            Some(u) => remove_component(&v, u),
            None => v,
        }
    }

    pub fn pair_features(&self, s1: &str, s2: &str) -> SparseVec {
        SparseVec::dense(&[self.embed(s1), self.embed(s2)].concat())
    }
}

/// Embeds a whole corpus with common-component removal fitted on it.
pub fn sif_embed(texts: &[&str], table: &EmbeddingTable) -> Vec<Vec<f64>> {
    let embedder = SifEmbedder::fit(table.clone(), texts.iter().copied());
    texts.iter().map(|t| embedder.embed(t)).collect()
}

/// Linear softmax classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub labels: Vec<String>,
    pub dim: usize,
    /// Row-major `labels.len() x dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegConfig {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
    /// `None` trains on the full batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            lr: 0.5,
            epochs: 30,
            l2: 1e-4,
            batch_size: Some(32),
            seed: 0,
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl LinearModel {
    pub fn zeros(labels: Vec<String>, dim: usize) -> Self {
        let k = labels.len();
        LinearModel {
            labels,
            dim,
            weights: vec![0.0; k * dim],
            bias: vec![0.0; k],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn logits(&self, x: &SparseVec) -> Result<Vec<f64>> {
        if x.dim != self.dim {
            return Err(Error::argument(format!(
                "feature dimension {} does not match model dimension {}",
                x.dim, self.dim
            )));
        }
        Ok((0..self.n_classes())
            .map(|k| {
                let row = &self.weights[k * self.dim..(k + 1) * self.dim];
                self.bias[k] + x.entries.iter().map(|&(i, v)| row[i] * v).sum::<f64>()
            })
            .collect())
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Mean cross-entropy plus `l2/2 * |W|^2`, and its gradient.
    pub fn loss_and_grad(&self, xs: &[&SparseVec], ys: &[usize], l2: f64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let n = xs.len().max(1) as f64;
        let mut grad_w: Vec<f64> = self.weights.iter().map(|w| l2 * w).collect();
        let mut grad_b = vec![0.0; self.n_classes()];
        let mut loss = 0.5 * l2 * self.weights.iter().map(|w| w * w).sum::<f64>();
        for (x, &y) in xs.iter().zip(ys) {
            let p = softmax(&self.logits(x)?);
            loss -= p[y].ln() / n;
            for (k, pk) in p.iter().enumerate() {
                let err = (pk - if k == y { 1.0 } else { 0.0 }) / n;
                grad_b[k] += err;
                let row = &mut grad_w[k * self.dim..(k + 1) * self.dim];
                for &(i, v) in &x.entries {
                    row[i] += err * v;
                }
            }
        }
        Ok((loss, grad_w, grad_b))
    }
}

/// Trained model plus the full-data objective after each epoch.
#[derive(Clone, Debug)]
pub struct LogRegFit {
    pub model: LinearModel,
    pub losses: Vec<f64>,
}

/// Minimizes L2-penalized multinomial cross-entropy by (mini-batch)
/// gradient descent from zero weights. Labels are sorted to fix class ids.
pub fn train_logreg(features: &[SparseVec], labels: &[String], cfg: &LogRegConfig) -> Result<LogRegFit> {
    if features.len() != labels.len() {
        return Err(Error::argument("features and labels differ in length"));
    }
    let classes: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(Error::argument("logistic regression needs at least two classes"));
    }
    let dim = features[0].dim;
    for (i, f) in features.iter().enumerate() {
        if f.dim != dim {
            return Err(Error::argument(format!("example {} has dimension {}, expected {}", i, f.dim, dim)));
        }
        if f.entries.iter().any(|(_, v)| !v.is_finite()) {
            return Err(Error::argument(format!("example {} has a non-finite feature", i)));
        }
    }
    let mut model = LinearModel::zeros(classes, dim);
    let ys: Vec<usize> = labels.iter().map(|l| model.label_index(l).unwrap()).collect();
    let all: Vec<&SparseVec> = features.iter().collect();
    let batch = cfg.batch_size.unwrap_or(features.len()).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        if cfg.batch_size.is_some() {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            let xs: Vec<&SparseVec> = chunk.iter().map(|&i| &features[i]).collect();
            let yb: Vec<usize> = chunk.iter().map(|&i| ys[i]).collect();
            let (_, gw, gb) = model.loss_and_grad(&xs, &yb, cfg.l2)?;
            for (w, g) in model.weights.iter_mut().zip(&gw) {
                *w -= cfg.lr * g;
            }
            for (b, g) in model.bias.iter_mut().zip(&gb) {
                *b -= cfg.lr * g;
            }
        }
        let (loss, _, _) = model.loss_and_grad(&all, &ys, cfg.l2)?;
        if !loss.is_finite() {
            return Err(Error::Numeric("logistic regression diverged".into()));
        }
        losses.push(loss);
    }
    Ok(LogRegFit { model, losses })
}

/// Most probable label and the full distribution.
pub fn predict<'m>(model: &'m LinearModel, x: &SparseVec) -> Result<(&'m str, Vec<f64>)> {
    let p = softmax(&model.logits(x)?);
    Ok((&model.labels[argmax(&p)], p))
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    labels: Vec<String>,
    dim: usize,
    vocabulary: Option<Vocabulary>,
}

/// Writes `<prefix>.json` (labels, dims, optional vocabulary) and
/// `<prefix>.bin` (weights then bias as little-endian f64).
pub fn save_model(model: &LinearModel, vocab: Option<&Vocabulary>, prefix: &Path) -> Result<()> {
    let header = ModelHeader {
        labels: model.labels.clone(),
        dim: model.dim,
        vocabulary: vocab.cloned(),
    };
    std::fs::write(prefix.with_extension("json"), serde_json::to_vec_pretty(&header)?)?;
    let mut blob = std::io::BufWriter::new(std::fs::File::create(prefix.with_extension("bin"))?);
    for v in model.weights.iter().chain(&model.bias) {
        blob.write_all(&v.to_le_bytes())?;
    }
    blob.flush()?;
    Ok(())
}

pub fn load_model(prefix: &Path) -> Result<(LinearModel, Option<Vocabulary>)> {
    let header: ModelHeader = serde_json::from_slice(&std::fs::read(prefix.with_extension("json"))?)?;
    let blob = std::fs::read(prefix.with_extension("bin"))?;
    let values = crate::encoder::decode_f64s(&blob)?;
    let k = header.labels.len();
    if values.len() != k * header.dim + k {
        return Err(Error::Config("model blob size does not match header".into()));
    }
    let vocab = header
        .vocabulary
        .map(|v| Vocabulary::from_items(v.orders.clone(), v.items().to_vec()));
    let model = LinearModel {
        labels: header.labels,
        dim: header.dim,
        weights: values[..k * header.dim].to_vec(),
        bias: values[k * header.dim..].to_vec(),
    };
    Ok((model, vocab))
}
