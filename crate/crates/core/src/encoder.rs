//! Bidirectional LSTM sentence encoder with max pooling over time, and a
//! pair classifier over `[s1, s2, (s1+s2)/2, s1-s2, s1*s2]`.
//!
//! Everything is written out by hand in `f64`: the forward pass, the
//! reverse pass through the classifier, the pooling and both recurrent
//! directions, and a finite-difference checker for the whole stack.
//!
//! Gates follow the usual layout `[input, forget, candidate, output]`
//! stacked along the rows of every `4h`-row tensor.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::PairRecord;
use crate::embed::{argmax, softmax, EmbeddingTable};
use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";

/// Word-to-id map; id 0 is reserved for unknown words.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderVocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl EncoderVocab {
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<&str> = texts.into_iter().flat_map(str::split_whitespace).collect();
        let mut all = vec![UNK.to_string()];
        all.extend(words.into_iter().filter(|w| *w != UNK).map(str::to_string));
        Self::from_words(all)
    }

    pub fn from_words(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        EncoderVocab { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn ids(&self, text: &str) -> Vec<usize> {
        text.split_whitespace()
            .map(|w| self.index.get(w).copied().unwrap_or(0))
            .collect()
    }

    /// SHA-256 over the newline-joined word list.
    pub fn hash(&self) -> String {
        crate::dataset::sha256_hex(self.words.join("\n").as_bytes())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Weights of one recurrent direction.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    /// `4h x e`
    pub w_x: Array2<f64>,
    /// `4h x h`
    pub w_h: Array2<f64>,
    /// `4h`
    pub b: Array1<f64>,
}

impl LstmParams {
    fn zeros(embed: usize, hidden: usize) -> Self {
        LstmParams {
            w_x: Array2::zeros((4 * hidden, embed)),
            w_h: Array2::zeros((4 * hidden, hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }

    fn random(embed: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut p = LstmParams::zeros(embed, hidden);
        p.w_x.mapv_inplace(|_| rng.gen_range(-bound..bound));
        p.w_h.mapv_inplace(|_| rng.gen_range(-bound..bound));
        p.b.mapv_inplace(|_| rng.gen_range(-bound..bound));
        p.b.slice_mut(s![hidden..2 * hidden]).fill(1.0);
        p
    }

    pub fn hidden(&self) -> usize {
        self.w_h.ncols()
    }
}

/// Per-timestep activations kept for the reverse pass.
struct LstmTrace {
    /// `T x 4h` post-activation gates.
    gates: Array2<f64>,
    /// `T x h`
    cells: Array2<f64>,
    tanh_cells: Array2<f64>,
    hidden: Array2<f64>,
}

fn lstm_forward(p: &LstmParams, xs: &Array2<f64>) -> LstmTrace {
    let h = p.hidden();
    let t_len = xs.nrows();
    let mut pre = xs.dot(&p.w_x.t());
    let mut cells = Array2::zeros((t_len, h));
    let mut tanh_cells = Array2::zeros((t_len, h));
    let mut hidden = Array2::zeros((t_len, h));
    for t in 0..t_len {
        let mut z = pre.row_mut(t);
        z += &p.b;
        if t > 0 {
            z += &p.w_h.dot(&hidden.row(t - 1));
        }
        for k in 0..h {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[h + k]);
            let g = z[2 * h + k].tanh();
            let o = sigmoid(z[3 * h + k]);
            let c_prev = if t > 0 { cells[[t - 1, k]] } else { 0.0 };
            let c = f * c_prev + i * g;
            let tc = c.tanh();
            z[k] = i;
            z[h + k] = f;
            z[2 * h + k] = g;
            z[3 * h + k] = o;
            cells[[t, k]] = c;
            tanh_cells[[t, k]] = tc;
            hidden[[t, k]] = o * tc;
        }
    }
    LstmTrace {
        gates: pre,
        cells,
        tanh_cells,
        hidden,
    }
}

/// Backpropagates `d_hidden` (`T x h`, loss gradient w.r.t. each emitted
/// state) through time. Accumulates into `grad` and returns the gradient
/// w.r.t. the inputs (`T x e`).
fn lstm_backward(
    p: &LstmParams,
    xs: &Array2<f64>,
    trace: &LstmTrace,
    d_hidden: &Array2<f64>,
    grad: &mut LstmParams,
) -> Array2<f64> {
    let h = p.hidden();
    let t_len = xs.nrows();
    let mut dz = Array2::<f64>::zeros((t_len, 4 * h));
    let mut dh_next = Array1::<f64>::zeros(h);
    let mut dc_next = Array1::<f64>::zeros(h);
    for t in (0..t_len).rev() {
        let gates = trace.gates.row(t);
        for k in 0..h {
            let (i, f, g, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
            let tc = trace.tanh_cells[[t, k]];
            let c_prev = if t > 0 { trace.cells[[t - 1, k]] } else { 0.0 };
            let dh = d_hidden[[t, k]] + dh_next[k];
            let d_o = dh * tc;
            let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
            dz[[t, k]] = dc * g * i * (1.0 - i);
            dz[[t, h + k]] = dc * c_prev * f * (1.0 - f);
            dz[[t, 2 * h + k]] = dc * i * (1.0 - g * g);
            dz[[t, 3 * h + k]] = d_o * o * (1.0 - o);
            dc_next[k] = dc * f;
        }
        dh_next = p.w_h.t().dot(&dz.row(t));
    }
    general_mat_mul(1.0, &dz.t(), xs, 1.0, &mut grad.w_x);
    if t_len > 1 {
        let dz_tail = dz.slice(s![1.., ..]);
        let h_head = trace.hidden.slice(s![..t_len - 1, ..]);
        general_mat_mul(1.0, &dz_tail.t(), &h_head, 1.0, &mut grad.w_h);
    }
    grad.b += &dz.sum_axis(Axis(0));
    dz.dot(&p.w_x)
}

/// All trainable tensors; also used as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    /// `|V| x e`
    pub embeddings: Array2<f64>,
    pub train_embeddings: bool,
    pub forward: LstmParams,
    pub backward: LstmParams,
    /// `p x 10h`
    pub proj_w: Array2<f64>,
    pub proj_b: Array1<f64>,
    /// `K x p`
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub proj: usize,
    pub classes: usize,
}

fn uniform(shape: (usize, usize), bound: f64, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.gen_range(-bound..bound))
}

impl EncoderParams {
    pub fn zeros(d: Dims) -> Self {
        EncoderParams {
            embeddings: Array2::zeros((d.vocab, d.embed)),
            train_embeddings: false,
            forward: LstmParams::zeros(d.embed, d.hidden),
            backward: LstmParams::zeros(d.embed, d.hidden),
            proj_w: Array2::zeros((d.proj, 10 * d.hidden)),
            proj_b: Array1::zeros(d.proj),
            out_w: Array2::zeros((d.classes, d.proj)),
            out_b: Array1::zeros(d.classes),
        }
    }

    /// Seeded initialization: embeddings uniform in [-1, 1), recurrent
    /// weights in +-1/sqrt(h) with forget bias 1, affine layers in
    /// +-1/sqrt(fan_in).
    pub fn random(d: Dims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embeddings = uniform((d.vocab, d.embed), 1.0, &mut rng);
        let forward = LstmParams::random(d.embed, d.hidden, &mut rng);
        let backward = LstmParams::random(d.embed, d.hidden, &mut rng);
        let pb = 1.0 / ((10 * d.hidden) as f64).sqrt();
        let proj_w = uniform((d.proj, 10 * d.hidden), pb, &mut rng);
        let proj_b = Array1::from_shape_simple_fn(d.proj, || rng.gen_range(-pb..pb));
        let ob = 1.0 / (d.proj as f64).sqrt();
        let out_w = uniform((d.classes, d.proj), ob, &mut rng);
        let out_b = Array1::from_shape_simple_fn(d.classes, || rng.gen_range(-ob..ob));
        EncoderParams {
            embeddings,
            train_embeddings: false,
            forward,
            backward,
            proj_w,
            proj_b,
            out_w,
            out_b,
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            vocab: self.embeddings.nrows(),
            embed: self.embeddings.ncols(),
            hidden: self.forward.hidden(),
            proj: self.proj_w.nrows(),
            classes: self.out_w.nrows(),
        }
    }

    fn zeros_like(&self) -> Self {
        let mut z = EncoderParams::zeros(self.dims());
        z.train_embeddings = self.train_embeddings;
        z
    }

    fn tensors(&self, with_embeddings: bool) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        if with_embeddings {
            out.push(self.embeddings.as_slice().unwrap());
        }
        for l in [&self.forward, &self.backward] {
            out.push(l.w_x.as_slice().unwrap());
            out.push(l.w_h.as_slice().unwrap());
            out.push(l.b.as_slice().unwrap());
        }
        out.push(self.proj_w.as_slice().unwrap());
        out.push(self.proj_b.as_slice().unwrap());
        out.push(self.out_w.as_slice().unwrap());
        out.push(self.out_b.as_slice().unwrap());
        out
    }

    fn tensors_mut(&mut self, with_embeddings: bool) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        if with_embeddings {
            out.push(self.embeddings.as_slice_mut().unwrap());
        }
        for l in [&mut self.forward, &mut self.backward] {
            out.push(l.w_x.as_slice_mut().unwrap());
            out.push(l.w_h.as_slice_mut().unwrap());
            out.push(l.b.as_slice_mut().unwrap());
        }
        out.push(self.proj_w.as_slice_mut().unwrap());
        out.push(self.proj_b.as_slice_mut().unwrap());
        out.push(self.out_w.as_slice_mut().unwrap());
        out.push(self.out_b.as_slice_mut().unwrap());
        out
    }

    /// Trainable tensors as flat slices, in a fixed order. Frozen
    /// embeddings are left out.
    pub fn slices(&self) -> Vec<&[f64]> {
        self.tensors(self.train_embeddings)
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let with = self.train_embeddings;
        self.tensors_mut(with)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors(true).iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Euclidean norm over the trainable tensors.
    pub fn norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn embed_tokens(&self, ids: &[usize]) -> Array2<f64> {
        let mut xs = Array2::zeros((ids.len(), self.embeddings.ncols()));
        for (t, &id) in ids.iter().enumerate() {
            xs.row_mut(t).assign(&self.embeddings.row(id));
        }
        xs
    }
}

struct EncodeTrace {
    ids: Vec<usize>,
    xs: Array2<f64>,
    /// Reversed inputs for the backward direction.
    xs_rev: Array2<f64>,
    fwd: LstmTrace,
    bwd: LstmTrace,
    /// Timestep that supplied each pooled coordinate.
    argmax: Vec<usize>,
    pooled: Array1<f64>,
}

fn encode_traced(ids: &[usize], params: &EncoderParams) -> Result<EncodeTrace> {
    if ids.is_empty() {
        return Err(Error::argument("cannot encode an empty token list"));
    }
    if let Some(&bad) = ids.iter().find(|&&i| i >= params.embeddings.nrows()) {
        return Err(Error::argument(format!("token id {} outside the embedding table", bad)));
    }
    let h = params.forward.hidden();
    let t_len = ids.len();
    let xs = params.embed_tokens(ids);
    let mut xs_rev = xs.clone();
    xs_rev.invert_axis(Axis(0));
    let fwd = lstm_forward(&params.forward, &xs);
    let bwd = lstm_forward(&params.backward, &xs_rev);

    let mut pooled = Array1::from_elem(2 * h, f64::NEG_INFINITY);
    let mut arg = vec![0; 2 * h];
    for t in 0..t_len {
        for j in 0..2 * h {
            let v = if j < h {
                fwd.hidden[[t, j]]
            } else {
                bwd.hidden[[t_len - 1 - t, j - h]]
            };
            // Strict comparison keeps the earliest timestep on ties.
            if v > pooled[j] {
                pooled[j] = v;
                arg[j] = t;
            }
        }
    }
    Ok(EncodeTrace {
        ids: ids.to_vec(),
        xs,
        xs_rev,
        fwd,
        bwd,
        argmax: arg,
        pooled,
    })
}

/// Per-timestep states `[fwd_t; bwd_t]` as a `T x 2h` matrix.
pub fn timestep_states(ids: &[usize], params: &EncoderParams) -> Result<Array2<f64>> {
    let tr = encode_traced(ids, params)?;
    let h = params.forward.hidden();
    let t_len = ids.len();
    let mut out = Array2::zeros((t_len, 2 * h));
    for t in 0..t_len {
        out.slice_mut(s![t, ..h]).assign(&tr.fwd.hidden.row(t));
        out.slice_mut(s![t, h..]).assign(&tr.bwd.hidden.row(t_len - 1 - t));
    }
    Ok(out)
}

/// Sentence vector: elementwise maximum over time of the concatenated
/// forward and backward states.
pub fn encode(ids: &[usize], params: &EncoderParams) -> Result<Array1<f64>> {
    Ok(encode_traced(ids, params)?.pooled)
}

fn encode_backward(tr: &EncodeTrace, d_pooled: ArrayView1<f64>, params: &EncoderParams, grad: &mut EncoderParams) {
    let h = params.forward.hidden();
    let t_len = tr.ids.len();
    let mut d_fwd = Array2::zeros((t_len, h));
    let mut d_bwd = Array2::zeros((t_len, h));
    for j in 0..2 * h {
        let t = tr.argmax[j];
        if j < h {
            d_fwd[[t, j]] += d_pooled[j];
        } else {
            d_bwd[[t_len - 1 - t, j - h]] += d_pooled[j];
        }
    }
    let dx_f = lstm_backward(&params.forward, &tr.xs, &tr.fwd, &d_fwd, &mut grad.forward);
    let dx_b = lstm_backward(&params.backward, &tr.xs_rev, &tr.bwd, &d_bwd, &mut grad.backward);
    if params.train_embeddings {
        for (t, &id) in tr.ids.iter().enumerate() {
            let mut row = grad.embeddings.row_mut(id);
            row += &dx_f.row(t);
            row += &dx_b.row(t_len - 1 - t);
        }
    }
}

/// The five-way pair representation.
#[derive(Clone, Debug, PartialEq)]
pub struct PairFeatures {
    pub s1: Array1<f64>,
    pub s2: Array1<f64>,
    pub s_avg: Array1<f64>,
    pub s_sub: Array1<f64>,
    pub s_mul: Array1<f64>,
}

impl PairFeatures {
    /// `[s1, s2, s_avg, s_sub, s_mul]`
    pub fn concat(&self) -> Array1<f64> {
        ndarray::concatenate(
            Axis(0),
            &[self.s1.view(), self.s2.view(), self.s_avg.view(), self.s_sub.view(), self.s_mul.view()],
        )
        .expect("equal-length blocks")
    }
}

pub fn pair_features(s1: &Array1<f64>, s2: &Array1<f64>) -> Result<PairFeatures> {
    if s1.len() != s2.len() {
        return Err(Error::argument(format!(
            "sentence vectors differ in length: {} vs {}",
            s1.len(),
            s2.len()
        )));
    }
    Ok(PairFeatures {
        s1: s1.clone(),
        s2: s2.clone(),
        s_avg: (s1 + s2) * 0.5,
        s_sub: s1 - s2,
        s_mul: s1 * s2,
    })
}

/// Output logits for a pair vector: projection then output layer.
fn classify_logits(features: &Array1<f64>, params: &EncoderParams) -> Result<(Array1<f64>, Array1<f64>)> {
    if features.len() != params.proj_w.ncols() {
        return Err(Error::argument(format!(
            "pair vector has length {}, projection expects {}",
            features.len(),
            params.proj_w.ncols()
        )));
    }
    let z = params.proj_w.dot(features) + &params.proj_b;
    let logits = params.out_w.dot(&z) + &params.out_b;
    Ok((z, logits))
}

/// Class distribution for a concatenated pair vector.
pub fn classify(features: &Array1<f64>, params: &EncoderParams) -> Result<Vec<f64>> {
    let (_, logits) = classify_logits(features, params)?;
    Ok(softmax(logits.as_slice().unwrap()))
}

/// A training example in id space.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub s1: Vec<usize>,
    pub s2: Vec<usize>,
    pub label: usize,
}

/// Class distribution for one example.
pub fn predict_example(ex: &Example, params: &EncoderParams) -> Result<Vec<f64>> {
    let s1 = encode(&ex.s1, params)?;
    let s2 = encode(&ex.s2, params)?;
    classify(&pair_features(&s1, &s2)?.concat(), params)
}

/// Mean cross-entropy over the batch and its gradient, in a structure
/// shaped like the parameters. Gradients are accumulated in example
/// order.
pub fn loss_and_gradients(batch: &[Example], params: &EncoderParams) -> Result<(f64, EncoderParams)> {
    if batch.is_empty() {
        return Err(Error::argument("empty batch"));
    }
    let n = batch.len() as f64;
    let h = params.forward.hidden();
    let mut grad = params.zeros_like();
    let mut loss = 0.0;
    for (idx, ex) in batch.iter().enumerate() {
        if ex.label >= params.out_w.nrows() {
            return Err(Error::argument(format!("example {} has label {} out of range", idx, ex.label)));
        }
        let t1 = encode_traced(&ex.s1, params)?;
        let t2 = encode_traced(&ex.s2, params)?;
        let pf = pair_features(&t1.pooled, &t2.pooled)?;
        let big_s = pf.concat();
        let (z, logits) = classify_logits(&big_s, params)?;
        let probs = softmax(logits.as_slice().unwrap());
        let ce = -probs[ex.label].ln();
        if !ce.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at example {}", idx)));
        }
        loss += ce / n;

        let mut d_logits = Array1::from(probs);
        d_logits[ex.label] -= 1.0;
        d_logits /= n;
        grad.out_b += &d_logits;
        general_mat_mul(
            1.0,
            &d_logits.view().insert_axis(Axis(1)),
            &z.view().insert_axis(Axis(0)),
            1.0,
            &mut grad.out_w,
        );
        let d_z = params.out_w.t().dot(&d_logits);
        grad.proj_b += &d_z;
        general_mat_mul(
            1.0,
            &d_z.view().insert_axis(Axis(1)),
            &big_s.view().insert_axis(Axis(0)),
            1.0,
            &mut grad.proj_w,
        );
        let d_s = params.proj_w.t().dot(&d_z);
        let block = |k: usize| d_s.slice(s![k * 2 * h..(k + 1) * 2 * h]);
        let (d1, d2, d_avg, d_sub, d_mul) = (block(0), block(1), block(2), block(3), block(4));
        let ds1 = &d1 + &(&d_avg * 0.5) + d_sub + &(&d_mul * &pf.s2);
        let ds2 = &d2 + &(&d_avg * 0.5) - d_sub + &(&d_mul * &pf.s1);
        encode_backward(&t1, ds1.view(), params, &mut grad);
        encode_backward(&t2, ds2.view(), params, &mut grad);
    }
    Ok((loss, grad))
}

/// Mean loss only.
fn example_logits(ex: &Example, params: &EncoderParams) -> Result<Array1<f64>> {
    let s1 = encode(&ex.s1, params)?;
    let s2 = encode(&ex.s2, params)?;
    Ok(classify_logits(&pair_features(&s1, &s2)?.concat(), params)?.1)
}

/// `batch_loss(plus) - batch_loss(minus)` without forming either loss.
/// Logits are subtracted first and the log-sum-exp difference is taken
/// through `ln_1p`/`exp_m1`, so nearby parameter settings do not lose the
/// difference to rounding of two values near `ln K`.
pub fn loss_difference(batch: &[Example], plus: &EncoderParams, minus: &EncoderParams) -> Result<f64> {
    let mut total = 0.0;
    for ex in batch {
        let zp = example_logits(ex, plus)?;
        let zm = example_logits(ex, minus)?;
        let d = &zp - &zm;
        let pm = softmax(zm.as_slice().expect("contiguous"));
        let s: f64 = pm.iter().zip(d.iter()).map(|(p, d)| p * d.exp_m1()).sum();
        total += s.ln_1p() - d[ex.label];
    }
    Ok(total / batch.len() as f64)
}

pub fn batch_loss(batch: &[Example], params: &EncoderParams) -> Result<f64> {
    let mut loss = 0.0;
    for ex in batch {
        let p = predict_example(ex, params)?;
        loss -= p[ex.label].ln();
    }
    Ok(loss / batch.len() as f64)
}

/// Rescales the gradient to `max_norm` when its norm exceeds it. Returns
/// the norm before clipping.
pub fn clip_gradients(grad: &mut EncoderParams, max_norm: f64) -> f64 {
    let norm = grad.norm();
    if norm > max_norm {
        let scale = max_norm / norm;
        for s in grad.slices_mut() {
            s.iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// (tensor, offset, analytic, numeric) at the worst coordinate.
    pub worst: (usize, usize, f64, f64),
}

pub const GRAD_CHECK_EPSILON: f64 = 1e-5;

/// Compares analytic gradients with central differences. Checks every
/// trainable coordinate, or a seeded sample of `max_coords` of them when
/// there are more.
pub fn grad_check(
    params: &EncoderParams,
    batch: &[Example],
    epsilon: f64,
    max_coords: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport> {
    let (_, grad) = loss_and_gradients(batch, params)?;
    let analytic: Vec<Vec<f64>> = grad.slices().iter().map(|s| s.to_vec()).collect();
    let mut coords: Vec<(usize, usize)> = analytic
        .iter()
        .enumerate()
        .flat_map(|(t, s)| (0..s.len()).map(move |i| (t, i)))
        .collect();
    if let Some(m) = max_coords {
        if coords.len() > m {
            coords.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            coords.truncate(m);
            coords.sort_unstable();
        }
    }
    let mut plus = params.clone();
    let mut minus = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: coords.len(),
        worst: (0, 0, 0.0, 0.0),
    };
    for &(t, i) in &coords {
        let original = params.slices()[t][i];
        plus.slices_mut()[t][i] = original + epsilon;
        minus.slices_mut()[t][i] = original - epsilon;
        let numeric = loss_difference(batch, &plus, &minus)? / (2.0 * epsilon);
        plus.slices_mut()[t][i] = original;
        minus.slices_mut()[t][i] = original;
        let a = analytic[t][i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = (t, i, a, numeric);
        }
    }
    Ok(report)
}

/// A random problem for [`grad_check`]: every parameter (embeddings
/// included, and trainable) uniform in [-1, 1), and `batch` examples whose
/// sentences have 1..=`max_len` random word ids.
pub fn gradcheck_problem(dims: Dims, batch: usize, max_len: usize, seed: u64) -> (EncoderParams, Vec<Example>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = EncoderParams::zeros(dims);
    params.train_embeddings = true;
    for s in params.slices_mut() {
        for v in s.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    let sentence = |rng: &mut ChaCha8Rng| -> Vec<usize> {
        let len = rng.gen_range(1..=max_len);
        (0..len).map(|_| rng.gen_range(0..dims.vocab)).collect()
    };
    let examples = (0..batch)
        .map(|_| Example {
            s1: sentence(&mut rng),
            s2: sentence(&mut rng),
            label: rng.gen_range(0..dims.classes),
        })
        .collect();
    (params, examples)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub anneal_factor: f64,
    pub grad_clip_norm: f64,
    pub max_epochs: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    /// Defaults to `2 * hidden`.
    pub proj_dim: Option<usize>,
    pub batch_size: usize,
    pub seed: u64,
    pub patience: usize,
    pub train_embeddings: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 0.1,
            anneal_factor: 5.0,
            grad_clip_norm: 5.0,
            max_epochs: 20,
            hidden: 64,
            embed_dim: 32,
            proj_dim: None,
            batch_size: 32,
            seed: 0,
            patience: 3,
            train_embeddings: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.initial_lr > 0.0
            && self.anneal_factor > 0.0
            && self.grad_clip_norm > 0.0
            && self.max_epochs > 0
            && self.hidden > 0
            && self.embed_dim > 0
            && self.proj_dim.map_or(true, |p| p > 0)
            && self.batch_size > 0
            && self.patience > 0;
        if positive {
            Ok(())
        } else {
            Err(Error::Config("training settings must all be positive".into()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub val_acc: f64,
}

pub fn write_epoch_log<W: Write>(log: &[EpochLog], mut w: W) -> Result<()> {
    writeln!(w, "epoch,lr,train_loss,val_acc")?;
    for e in log {
        writeln!(w, "{},{},{},{}", e.epoch, e.lr, e.train_loss, e.val_acc)?;
    }
    Ok(())
}

/// A trained encoder with the vocabulary and label list it was fit on.
#[derive(Clone, Debug)]
pub struct TrainedEncoder {
    pub params: EncoderParams,
    pub vocab: EncoderVocab,
    pub labels: Vec<String>,
    pub config: TrainConfig,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

impl TrainedEncoder {
    pub fn sentence_vector(&self, text: &str) -> Result<Array1<f64>> {
        encode(&self.vocab.ids(text), &self.params)
    }

    pub fn pair_vector(&self, s1: &str, s2: &str) -> Result<Array1<f64>> {
        Ok(pair_features(&self.sentence_vector(s1)?, &self.sentence_vector(s2)?)?.concat())
    }

    pub fn predict(&self, s1: &str, s2: &str) -> Result<(&str, Vec<f64>)> {
        let p = classify(&self.pair_vector(s1, s2)?, &self.params)?;
        Ok((&self.labels[argmax(&p)], p))
    }

    pub fn accuracy(&self, pairs: &[PairRecord]) -> Result<f64> {
        let mut correct = 0;
        for p in pairs {
            if self.predict(&p.s1, &p.s2)?.0 == p.marker {
                correct += 1;
            }
        }
        Ok(correct as f64 / pairs.len().max(1) as f64)
    }
}

fn to_examples(pairs: &[PairRecord], vocab: &EncoderVocab, labels: &[String]) -> Result<Vec<Example>> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (s1, s2) = (vocab.ids(&p.s1), vocab.ids(&p.s2));
            if s1.is_empty() || s2.is_empty() {
                return Err(Error::argument(format!("pair {} has an empty sentence", i + 1)));
            }
            // Labels unseen in training map past the last class and always
            // count as errors.
            let label = labels.iter().position(|l| *l == p.marker).unwrap_or(labels.len());
            Ok(Example { s1, s2, label })
        })
        .collect()
}

fn accuracy(examples: &[Example], params: &EncoderParams) -> Result<f64> {
    let mut correct = 0;
    for ex in examples {
        if argmax(&predict_example(ex, params)?) == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Mini-batch SGD with global-norm clipping. The learning rate is divided
/// by `anneal_factor` whenever validation accuracy drops below the
/// previous epoch's; training stops after `patience` epochs without a new
/// best, and the best-validation parameters are returned.
pub fn train(train_pairs: &[PairRecord], valid_pairs: &[PairRecord], cfg: &TrainConfig) -> Result<TrainedEncoder> {
    train_with_embeddings(train_pairs, valid_pairs, cfg, None)
}

/// Like [`train`], but rows of the embedding matrix for words found in
/// `table` start from the table's vectors instead of random values.
pub fn train_with_embeddings(
    train_pairs: &[PairRecord],
    valid_pairs: &[PairRecord],
    cfg: &TrainConfig,
    table: Option<&EmbeddingTable>,
) -> Result<TrainedEncoder> {
    cfg.validate()?;
    if let Some(t) = table {
        if t.dim() != cfg.embed_dim {
            return Err(Error::Config(format!(
                "embedding table has dimension {}, embed_dim is {}",
                t.dim(),
                cfg.embed_dim
            )));
        }
    }
    if train_pairs.is_empty() || valid_pairs.is_empty() {
        return Err(Error::argument("training and validation sets must be non-empty"));
    }
    let labels: Vec<String> = train_pairs
        .iter()
        .map(|p| p.marker.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let vocab = EncoderVocab::build(train_pairs.iter().flat_map(|p| [p.s1.as_str(), p.s2.as_str()]));
    let train_ex = to_examples(train_pairs, &vocab, &labels)?;
    let valid_ex = to_examples(valid_pairs, &vocab, &labels)?;

    let dims = Dims {
        vocab: vocab.len(),
        embed: cfg.embed_dim,
        hidden: cfg.hidden,
        proj: cfg.proj_dim.unwrap_or(2 * cfg.hidden),
        classes: labels.len(),
    };
    let mut params = EncoderParams::random(dims, cfg.seed);
    params.train_embeddings = cfg.train_embeddings;
    if let Some(t) = table {
        for (row, word) in vocab.words().iter().enumerate() {
            if let Some(v) = t.vector(word) {
                params.embeddings.row_mut(row).assign(&ArrayView1::from(v));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_ex.len()).collect();

    let mut lr = cfg.initial_lr;
    let mut log = Vec::new();
    let mut best = (f64::NEG_INFINITY, params.clone(), 0usize);
    let mut previous_acc: Option<f64> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Example> = chunk.iter().map(|&i| train_ex[i].clone()).collect();
            let (loss, mut grad) = loss_and_gradients(&batch, &params).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("epoch {}, batch {}: {}", epoch, b, m)),
                other => other,
            })?;
            clip_gradients(&mut grad, cfg.grad_clip_norm);
            for (p, g) in params.slices_mut().into_iter().zip(grad.slices()) {
                for (pv, gv) in p.iter_mut().zip(g) {
                    *pv -= lr * gv;
                }
            }
            if !params.is_finite() {
                return Err(Error::Numeric(format!("parameters diverged at epoch {}, batch {}", epoch, b)));
            }
            loss_sum += loss;
            batches += 1;
        }
        let val_acc = accuracy(&valid_ex, &params)?;
        log.push(EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / batches as f64,
            val_acc,
        });
        log::info!("epoch {} lr {} loss {:.5} val_acc {:.4}", epoch, lr, loss_sum / batches as f64, val_acc);

        if previous_acc.is_some_and(|prev| val_acc < prev) {
            lr /= cfg.anneal_factor;
        }
        previous_acc = Some(val_acc);
        if val_acc > best.0 {
            best = (val_acc, params.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainedEncoder {
        params: best.1,
        vocab,
        labels,
        config: cfg.clone(),
        log,
        best_epoch: best.2,
    })
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    dims: Dims,
    vocab_hash: String,
    vocab: Vec<String>,
    labels: Vec<String>,
    config: TrainConfig,
    best_epoch: usize,
}

pub(crate) fn decode_f64s(blob: &[u8]) -> Result<Vec<f64>> {
    if blob.len() % 8 != 0 {
        return Err(Error::Config("weight blob length is not a multiple of 8".into()));
    }
    Ok(blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Writes `<prefix>.json` and `<prefix>.bin` (every tensor, little-endian
/// f64, embeddings first).
pub fn save_checkpoint(model: &TrainedEncoder, prefix: &Path) -> Result<()> {
    let header = CheckpointHeader {
        dims: model.params.dims(),
        vocab_hash: model.vocab.hash(),
        vocab: model.vocab.words().to_vec(),
        labels: model.labels.clone(),
        config: model.config.clone(),
        best_epoch: model.best_epoch,
    };
    std::fs::write(prefix.with_extension("json"), serde_json::to_vec_pretty(&header)?)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(prefix.with_extension("bin"))?);
    for s in model.params.tensors(true) {
        for v in s {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(prefix: &Path) -> Result<TrainedEncoder> {
    let header: CheckpointHeader = serde_json::from_slice(&std::fs::read(prefix.with_extension("json"))?)?;
    let vocab = EncoderVocab::from_words(header.vocab);
    if vocab.hash() != header.vocab_hash {
        return Err(Error::Config("checkpoint vocabulary hash mismatch".into()));
    }
    let values = decode_f64s(&std::fs::read(prefix.with_extension("bin"))?)?;
    let mut params = EncoderParams::zeros(header.dims);
    {
        let slices = params.tensors_mut(true);
        let total: usize = slices.iter().map(|s| s.len()).sum();
        if total != values.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} values, dims need {}",
                values.len(),
                total
            )));
        }
        let mut offset = 0;
        for s in slices {
            s.copy_from_slice(&values[offset..offset + s.len()]);
            offset += s.len();
        }
    }
    params.train_embeddings = header.config.train_embeddings;
    Ok(TrainedEncoder {
        params,
        vocab,
        labels: header.labels,
        config: header.config,
        log: Vec::new(),
        best_epoch: header.best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(h: usize) -> Dims {
        Dims {
            vocab: 6,
            embed: 3,
            hidden: h,
            proj: 2 * h,
            classes: 3,
        }
    }

    #[test]
    fn single_timestep_is_its_state() {
        let p = EncoderParams::random(dims(2), 3);
        let states = timestep_states(&[4], &p).unwrap();
        assert_eq!(encode(&[4], &p).unwrap(), states.row(0).to_owned());
    }

    #[test]
    fn pooled_coordinates_come_from_some_timestep() {
        let p = EncoderParams::random(dims(4), 5);
        let ids = [1, 2, 3, 2, 5];
        let pooled = encode(&ids, &p).unwrap();
        let states = timestep_states(&ids, &p).unwrap();
        for j in 0..pooled.len() {
            assert!(states.column(j).iter().any(|v| *v == pooled[j]));
            assert!(states.column(j).iter().all(|v| *v <= pooled[j]));
        }
    }

    #[test]
    fn empty_and_out_of_range_inputs() {
        let p = EncoderParams::random(dims(2), 1);
        assert!(encode(&[], &p).is_err());
        assert!(encode(&[6], &p).is_err());
        assert!(loss_and_gradients(&[], &p).is_err());
    }

    #[test]
    fn pair_feature_identities() {
        let v = Array1::from(vec![1.0, -2.0, 3.0]);
        let w = Array1::from(vec![0.5, 4.0, -1.0]);
        let same = pair_features(&v, &v).unwrap();
        assert_eq!(same.s_sub, Array1::<f64>::zeros(3));
        assert_eq!(same.s_avg, v);
        assert_eq!(same.s_mul, &v * &v);
        let a = pair_features(&v, &w).unwrap();
        let b = pair_features(&w, &v).unwrap();
        assert_eq!(a.s_sub, -&b.s_sub);
        assert_eq!(a.s_avg, b.s_avg);
        assert_eq!(a.s_mul, b.s_mul);
        assert_eq!(a.concat().len(), 15);
        assert!(pair_features(&v, &Array1::zeros(2)).is_err());
    }

    #[test]
    fn zero_classifier_is_uniform() {
        let p = EncoderParams::zeros(dims(2));
        let probs = classify(&Array1::from_elem(20, 0.7), &p).unwrap();
        for q in &probs {
            assert!((q - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(classify(&Array1::zeros(19), &p).is_err());
    }

    #[test]
    fn uniform_output_loss_is_ln_k() {
        let mut p = EncoderParams::random(dims(2), 9);
        p.out_w.fill(0.0);
        p.out_b.fill(0.0);
        let ex = Example { s1: vec![1, 2], s2: vec![3], label: 1 };
        let (loss, _) = loss_and_gradients(&[ex], &p).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn clip_rescales_to_limit() {
        let mut g = EncoderParams::zeros(dims(2));
        g.out_b[0] = 30.0;
        g.out_b[1] = 40.0;
        let before = clip_gradients(&mut g, 5.0);
        assert!((before - 50.0).abs() < 1e-12);
        assert!((g.norm() - 5.0).abs() < 1e-12);
        let mut small = EncoderParams::zeros(dims(2));
        small.out_b[0] = 1.0;
        clip_gradients(&mut small, 5.0);
        assert_eq!(small.out_b[0], 1.0);
    }

    #[test]
    fn vocab_reserves_unknown() {
        let v = EncoderVocab::build(["b a", "c"]);
        assert_eq!(v.words(), &[UNK, "a", "b", "c"]);
        assert_eq!(v.ids("a zz c"), vec![1, 0, 3]);
    }

    #[test]
    fn train_config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
