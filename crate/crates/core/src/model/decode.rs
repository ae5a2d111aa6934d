//! Greedy decoding.
//!
//! The fast path keeps per-layer key/value caches and processes one token
//! per step; `greedy_decode_naive` re-runs the full forward each step and
//! exists as the slow reference the fast path is checked against.

use super::config::ModelConfig;
use super::forward::forward;
use super::params::*;
use crate::datagen::TokenId;
use crate::tensor::{Scalar, TensorSet};
use crate::{Error, Result};
use ndarray::{Array1, Array2};

const LN_EPS: f64 = 1e-5;

fn layernorm_row<F: Scalar>(x: &Array1<F>, g: &[F], b: &[F]) -> Array1<F> {
    let d = x.len();
    let inv_d = F::from_f64(1.0 / d as f64);
    let mut mu = F::zero();
    for &v in x {
        mu = mu + v;
    }
    mu = mu * inv_d;
    let mut var = F::zero();
    for &v in x {
        let c = v - mu;
        var = var + c * c;
    }
    var = var * inv_d;
    let r = (var + F::from_f64(LN_EPS)).sqrt().recip();
    Array1::from_iter(
        x.iter()
            .enumerate()
            .map(|(j, &v)| (v - mu) * r * g[j] + b[j]),
    )
}

fn gelu<F: Scalar>(x: F) -> F {
    let c = F::from_f64(0.797_884_560_802_865_4);
    let a = F::from_f64(0.044715);
    let u = c * (x + a * x * x * x);
    F::from_f64(0.5) * x * (F::one() + u.tanh())
}

/// Lowest token id among the maxima of a logits row.
fn argmax_lowest_id<F: Scalar>(row: &Array1<F>) -> TokenId {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as TokenId
}

struct KvState<F> {
    /// Per layer: cached keys and values, rows appended per step.
    k: Vec<Array2<F>>,
    v: Vec<Array2<F>>,
    len: usize,
}

impl<F: Scalar> KvState<F> {
    fn new(cfg: &ModelConfig, capacity: usize) -> Self {
        KvState {
            k: (0..cfg.layers).map(|_| Array2::zeros((capacity, cfg.d_model))).collect(),
            v: (0..cfg.layers).map(|_| Array2::zeros((capacity, cfg.d_model))).collect(),
            len: 0,
        }
    }
}

/// Feed one token at position `pos`, updating the cache; returns the logits
/// row for that position.
fn step<F: Scalar>(
    cfg: &ModelConfig,
    params: &TensorSet<F>,
    state: &mut KvState<F>,
    tok: TokenId,
    pos: usize,
) -> Result<Array1<F>> {
    if tok as usize >= cfg.vocab_size {
        return Err(Error::Data(format!(
            "token id {tok} out of range for vocab {}",
            cfg.vocab_size
        )));
    }
    let d = cfg.d_model;
    let heads = cfg.heads;
    let dh = cfg.head_dim();
    let scale = F::from_f64(1.0 / (dh as f64).sqrt());
    let p = &params.tensors;

    let tok_emb = p[TOK_EMB].mat();
    let pos_emb = p[POS_EMB].mat();
    let mut x: Array1<F> = Array1::from_iter(
        (0..d).map(|j| tok_emb[(tok as usize, j)] + pos_emb[(pos, j)]),
    );

    for l in 0..cfg.layers {
        let base = layer_base(l);
        let a = layernorm_row(&x, &p[base + LN1_G].data, &p[base + LN1_B].data);
        let mut qkv = a.dot(&p[base + QKV_W].mat());
        for (j, v) in qkv.iter_mut().enumerate() {
            *v = *v + p[base + QKV_B].data[j];
        }
        // Append this position's K and V rows.
        for j in 0..d {
            state.k[l][(pos, j)] = qkv[d + j];
            state.v[l][(pos, j)] = qkv[2 * d + j];
        }
        let mut ctx: Array1<F> = Array1::zeros(d);
        for h in 0..heads {
            let q = qkv.slice(ndarray::s![h * dh..(h + 1) * dh]);
            // Scores against all cached positions <= pos.
            let mut scores: Vec<F> = Vec::with_capacity(pos + 1);
            for j in 0..=pos {
                let mut s = F::zero();
                for c in 0..dh {
                    s = s + q[c] * state.k[l][(j, h * dh + c)];
                }
                scores.push(s * scale);
            }
            let max = scores.iter().cloned().fold(F::neg_infinity(), F::max);
            let mut sum = F::zero();
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                sum = sum + *s;
            }
            let inv = sum.recip();
            for (j, s) in scores.iter().enumerate() {
                let w = *s * inv;
                for c in 0..dh {
                    let idx = h * dh + c;
                    ctx[idx] = ctx[idx] + w * state.v[l][(j, idx)];
                }
            }
        }
        let mut o = ctx.dot(&p[base + PROJ_W].mat());
        for (j, v) in o.iter_mut().enumerate() {
            *v = *v + p[base + PROJ_B].data[j];
        }
        x = &x + &o;

        let bnorm = layernorm_row(&x, &p[base + LN2_G].data, &p[base + LN2_B].data);
        let mut h_pre = bnorm.dot(&p[base + FF_W1].mat());
        for (j, v) in h_pre.iter_mut().enumerate() {
            *v = gelu(*v + p[base + FF_B1].data[j]);
        }
        let mut f = h_pre.dot(&p[base + FF_W2].mat());
        for (j, v) in f.iter_mut().enumerate() {
            *v = *v + p[base + FF_B2].data[j];
        }
        x = &x + &f;
    }

    let y = layernorm_row(&x, &p[ln_f_g(cfg)].data, &p[ln_f_b(cfg)].data);
    let mut logits = y.dot(&p[head_w(cfg)].mat());
    for (j, v) in logits.iter_mut().enumerate() {
        *v = *v + p[head_b(cfg)].data[j];
    }
    state.len = pos + 1;
    Ok(logits)
}

/// Greedily decode `steps` tokens after `prompt`. Ties break toward the
/// lowest token id; the result is a pure function of (params, prompt).
pub fn greedy_decode<F: Scalar>(
    cfg: &ModelConfig,
    params: &TensorSet<F>,
    prompt: &[TokenId],
    steps: usize,
) -> Result<Vec<TokenId>> {
    if prompt.is_empty() {
        return Err(Error::Data("decode needs a non-empty prompt".into()));
    }
    if prompt.len() + steps > cfg.context {
        return Err(Error::Config(format!(
            "prompt {} + steps {steps} exceeds context {}",
            prompt.len(),
            cfg.context
        )));
    }
    if steps == 0 {
        return Ok(Vec::new());
    }
    let mut state = KvState::new(cfg, prompt.len() + steps);
    let mut logits = Array1::zeros(cfg.vocab_size);
    for (pos, &tok) in prompt.iter().enumerate() {
        logits = step(cfg, params, &mut state, tok, pos)?;
    }
    let mut out = Vec::with_capacity(steps);
    let mut next = argmax_lowest_id(&logits);
    out.push(next);
    for i in 1..steps {
        let logits = step(cfg, params, &mut state, next, prompt.len() + i - 1)?;
        next = argmax_lowest_id(&logits);
        out.push(next);
    }
    Ok(out)
}

/// Reference decoder: full forward per step. Slow; used to validate the
/// incremental path.
pub fn greedy_decode_naive<F: Scalar>(
    cfg: &ModelConfig,
    params: &TensorSet<F>,
    prompt: &[TokenId],
    steps: usize,
) -> Result<Vec<TokenId>> {
    if prompt.is_empty() {
        return Err(Error::Data("decode needs a non-empty prompt".into()));
    }
    if prompt.len() + steps > cfg.context {
        return Err(Error::Config(format!(
            "prompt {} + steps {steps} exceeds context {}",
            prompt.len(),
            cfg.context
        )));
    }
    let mut seq = prompt.to_vec();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let cache = forward(cfg, params, &seq, None)?;
        let last = cache.logits.nrows() - 1;
        let row = cache.logits.row(last).to_owned();
        let next = argmax_lowest_id(&row);
        out.push(next);
        seq.push(next);
    }
    Ok(out)
}
