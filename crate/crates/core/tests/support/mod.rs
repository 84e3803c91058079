//! Independent reference implementations shared by the oracle tests and the
//! acceptance suite.
#![allow(dead_code)]

use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use streamsift::index::{SearchQuery, B, K1};
use streamsift::ingest::Sentiment;
use streamsift::sentiment_model::{
    backward, forward, Gate, LstmHyperparams, LstmModel, LstmParams,
};
use streamsift::textprep::{tokenize, EncodedSequence};

pub fn hyper(v: usize, d: usize, h: usize, l: usize, seed: u64) -> LstmHyperparams {
    LstmHyperparams {
        vocab_size: v,
        embed_dim: d,
        hidden_dim: h,
        seq_len: l,
        seed,
        ..LstmHyperparams::default()
    }
}

/// Every parameter drawn uniformly from [-scale, scale], padding row zero.
pub fn random_model(hy: &LstmHyperparams, scale: f64, rng: &mut ChaCha8Rng) -> LstmModel<f64> {
    let mut m = LstmModel::<f64>::init(hy).unwrap();
    for t in m.params.tensors_mut() {
        for x in t.iter_mut() {
            *x = rng.gen_range(-scale..scale);
        }
    }
    m.params.embedding.row_mut(0).fill(0.0);
    m
}

pub fn random_seq(hy: &LstmHyperparams, rng: &mut ChaCha8Rng) -> EncodedSequence {
    let n = rng.gen_range(0..=hy.seq_len);
    let mut ids: Vec<u32> = (0..n)
        .map(|_| rng.gen_range(1..hy.vocab_size as u32))
        .collect();
    ids.resize(hy.seq_len, 0);
    EncodedSequence {
        ids,
        true_length: n,
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// The cell equations written out one scalar at a time.
pub fn scalar_forward(m: &LstmModel<f64>, seq: &EncodedSequence) -> f64 {
    let p = &m.params;
    let (d, h) = (m.hyper.embed_dim, m.hyper.hidden_dim);
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    for t in 0..seq.true_length {
        let x = p.embedding.row(seq.ids[t] as usize);
        let mut h_next = vec![0.0; h];
        let mut c_next = vec![0.0; h];
        for j in 0..h {
            let pre = |g: Gate| {
                let mut s = p.b(g, j);
                for k in 0..d {
                    s += x[k] * p.w(g, k, j);
                }
                for i in 0..h {
                    s += h_prev[i] * p.u(g, i, j);
                }
                s
            };
            let i_t = sigmoid(pre(Gate::Input));
            let f_t = sigmoid(pre(Gate::Forget));
            let o_t = sigmoid(pre(Gate::Output));
            let g_t = pre(Gate::Candidate).tanh();
            c_next[j] = f_t * c_prev[j] + i_t * g_t;
            h_next[j] = o_t * c_next[j].tanh();
        }
        h_prev = h_next;
        c_prev = c_next;
    }
    let mut logit = p.out_bias;
    for j in 0..h {
        logit += h_prev[j] * p.out_weights[j];
    }
    sigmoid(logit)
}

pub fn loss(p: f64, y: u8) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

pub fn max_relative_gradient_error(m: &LstmModel<f64>, s: &EncodedSequence, y: u8) -> f64 {
    const EPS: f64 = 1e-5;
    let (_, cache) = forward(m, s).unwrap();
    let mut analytic = LstmParams::zeros(&m.hyper);
    backward(m, &cache, y, &mut analytic);
    assert!(analytic.embedding.row(0).iter().all(|&g| g == 0.0));

    let mut probe = m.clone();
    let mut worst = 0.0f64;
    let analytic_flat: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.to_vec()).collect();
    for (ti, grads) in analytic_flat.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            // the padding row is frozen, not differentiated
            if ti == 0 && i < m.hyper.embed_dim {
                continue;
            }
            let orig = probe.params.tensors()[ti][i];
            probe.params.tensors_mut()[ti][i] = orig + EPS;
            let up = loss(forward(&probe, s).unwrap().0, y);
            probe.params.tensors_mut()[ti][i] = orig - EPS;
            let down = loss(forward(&probe, s).unwrap().0, y);
            probe.params.tensors_mut()[ti][i] = orig;
            let numeric = (up - down) / (2.0 * EPS);
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

/// Scores every document directly from its raw text and ranks by score,
/// ties broken by insertion order.
pub fn bm25_brute_force(
    corpus: &[(String, String, Option<Sentiment>)],
    query: &SearchQuery,
    k: usize,
) -> Vec<(String, f64)> {
    let docs: Vec<Vec<String>> = corpus.iter().map(|(_, t, _)| tokenize(t)).collect();
    let n = docs.len() as f64;
    let avg = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut q = tokenize(&query.terms);
    let mut seen = HashSet::new();
    q.retain(|t| seen.insert(t.clone()));
    let mut scored = Vec::new();
    for (i, d) in docs.iter().enumerate() {
        if query.label.is_some() && corpus[i].2 != query.label {
            continue;
        }
        let mut score = 0.0;
        let mut matched = false;
        for t in &q {
            let tf = d.iter().filter(|x| *x == t).count() as f64;
            if tf == 0.0 {
                continue;
            }
            matched = true;
            let df = docs.iter().filter(|d| d.contains(t)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            score += idf * tf * (K1 + 1.0) / (tf + K1 * (1.0 - B + B * d.len() as f64 / avg));
        }
        if matched {
            scored.push((i, score));
        }
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored
        .into_iter()
        .take(k)
        .map(|(i, s)| (corpus[i].0.clone(), s))
        .collect()
}
