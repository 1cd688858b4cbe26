use dismark::dataset::PairRecord;
use dismark::encoder::{
    self, encode, gradcheck_problem, load_checkpoint, loss_and_gradients, save_checkpoint, timestep_states, Dims,
    EncoderParams, LstmParams, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One direction, one scalar at a time, gates in i, f, g, o order.
fn scalar_lstm(p: &LstmParams, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let h = p.w_h.ncols();
    let e = p.w_x.ncols();
    let (mut hs, mut cs) = (vec![0.0; h], vec![0.0; h]);
    let mut out = Vec::new();
    for x in xs {
        let mut z = vec![0.0; 4 * h];
        for r in 0..4 * h {
            let mut acc = p.b[r];
            for c in 0..e {
                acc += p.w_x[[r, c]] * x[c];
            }
            for c in 0..h {
                acc += p.w_h[[r, c]] * hs[c];
            }
            z[r] = acc;
        }
        let mut new_h = vec![0.0; h];
        for k in 0..h {
            let c = sig(z[h + k]) * cs[k] + sig(z[k]) * z[2 * h + k].tanh();
            cs[k] = c;
            new_h[k] = sig(z[3 * h + k]) * c.tanh();
        }
        hs = new_h.clone();
        out.push(new_h);
    }
    out
}

fn scalar_encode(ids: &[usize], p: &EncoderParams) -> (Vec<Vec<f64>>, Vec<f64>) {
    let xs: Vec<Vec<f64>> = ids.iter().map(|&i| p.embeddings.row(i).to_vec()).collect();
    let fwd = scalar_lstm(&p.forward, &xs);
    let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
    let mut bwd = scalar_lstm(&p.backward, &rev);
    bwd.reverse();
    let states: Vec<Vec<f64>> = fwd.iter().zip(&bwd).map(|(f, b)| [f.clone(), b.clone()].concat()).collect();
    let pooled = (0..states[0].len())
        .map(|j| states.iter().map(|s| s[j]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    (states, pooled)
}

fn dims(hidden: usize) -> Dims {
    Dims { vocab: 9, embed: 4, hidden, proj: 2 * hidden, classes: 3 }
}

#[test]
fn encoder_matches_scalar_lstm() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..10 {
        let (params, _) = gradcheck_problem(dims(1 + seed as usize % 5), 1, 1, seed);
        let len = rng.gen_range(1..12);
        let ids: Vec<usize> = (0..len).map(|_| rng.gen_range(0..9)).collect();
        let (states, pooled) = scalar_encode(&ids, &params);
        let got_states = timestep_states(&ids, &params).unwrap();
        for (t, row) in states.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((got_states[[t, j]] - v).abs() < 1e-12, "state ({}, {})", t, j);
            }
        }
        let got = encode(&ids, &params).unwrap();
        for (a, b) in got.iter().zip(&pooled) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn pooled_vector_dominates_every_timestep() {
    let (params, batch) = gradcheck_problem(dims(6), 20, 15, 2);
    for ex in &batch {
        let states = timestep_states(&ex.s1, &params).unwrap();
        let pooled = encode(&ex.s1, &params).unwrap();
        for j in 0..pooled.len() {
            let column = states.column(j);
            assert!(column.iter().all(|v| *v <= pooled[j]));
            assert!(column.iter().any(|v| *v == pooled[j]));
        }
    }
}

#[test]
fn batch_loss_is_the_mean_of_single_losses() {
    let (params, batch) = gradcheck_problem(dims(3), 6, 6, 3);
    let (loss, grad) = loss_and_gradients(&batch, &params).unwrap();
    let mut mean_loss = 0.0;
    let mut mean_grad: Vec<Vec<f64>> = grad.slices().iter().map(|s| vec![0.0; s.len()]).collect();
    for ex in &batch {
        let (l, g) = loss_and_gradients(std::slice::from_ref(ex), &params).unwrap();
        mean_loss += l / batch.len() as f64;
        for (acc, s) in mean_grad.iter_mut().zip(g.slices()) {
            for (a, v) in acc.iter_mut().zip(s) {
                *a += v / batch.len() as f64;
            }
        }
    }
    assert!((loss - mean_loss).abs() < 1e-12);
    for (acc, s) in mean_grad.iter().zip(grad.slices()) {
        for (a, v) in acc.iter().zip(s) {
            assert!((a - v).abs() < 1e-12 * (1.0 + v.abs()));
        }
    }
}

#[test]
fn gradients_pass_a_finite_difference_check() {
    for hidden in [2, 4] {
        for seed in 0..5 {
            let (params, batch) = gradcheck_problem(dims(hidden), 3, 5, seed);
            let full = encoder::grad_check(&params, &batch, encoder::GRAD_CHECK_EPSILON, None, 0).unwrap();
            let half = encoder::grad_check(&params, &batch, encoder::GRAD_CHECK_EPSILON / 2.0, None, 0).unwrap();
            assert!(full.max_rel_error < 1e-4, "h={} seed {}: {:?}", hidden, seed, full);
            assert!(half.max_rel_error < 1e-4, "h={} seed {} at eps/2: {:?}", hidden, seed, half);
        }
    }
}

#[test]
fn frozen_embeddings_get_no_gradient() {
    let (mut params, batch) = gradcheck_problem(dims(2), 3, 4, 4);
    params.train_embeddings = false;
    let (_, grad) = loss_and_gradients(&batch, &params).unwrap();
    assert!(grad.embeddings.iter().all(|v| *v == 0.0));
}

fn cue_pairs(n: usize, seed: u64) -> Vec<PairRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let label = ["x", "y"][rng.gen_range(0..2)];
            let cue = if label == "x" { "red" } else { "blue" };
            PairRecord::new("the cat sat", format!("a {} dog ran", cue), label)
        })
        .collect()
}

#[test]
fn checkpoint_round_trip_reproduces_predictions() {
    let train = cue_pairs(60, 1);
    let valid = cue_pairs(20, 2);
    let cfg = TrainConfig { hidden: 4, embed_dim: 3, max_epochs: 2, ..TrainConfig::default() };
    let model = encoder::train(&train, &valid, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("enc");
    save_checkpoint(&model, &prefix).unwrap();
    let back = load_checkpoint(&prefix).unwrap();
    assert_eq!(back.labels, model.labels);
    assert_eq!(back.vocab.words(), model.vocab.words());
    for p in &valid {
        assert_eq!(back.predict(&p.s1, &p.s2).unwrap(), model.predict(&p.s1, &p.s2).unwrap());
    }
}

#[test]
fn training_is_seeded() {
    let train = cue_pairs(60, 3);
    let valid = cue_pairs(20, 4);
    let cfg = TrainConfig { hidden: 4, embed_dim: 3, max_epochs: 2, seed: 9, ..TrainConfig::default() };
    let a = encoder::train(&train, &valid, &cfg).unwrap();
    let b = encoder::train(&train, &valid, &cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.log, b.log);
}

#[test]
fn bad_configs_are_rejected() {
    let pairs = cue_pairs(10, 5);
    let cfg = TrainConfig { hidden: 0, ..TrainConfig::default() };
    assert!(encoder::train(&pairs, &pairs, &cfg).is_err());
    assert!(encoder::train(&pairs, &[], &TrainConfig::default()).is_err());
}
