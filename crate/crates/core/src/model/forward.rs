//! Forward pass, loss, and hand-derived reverse-mode gradients.
//!
//! One sequence at a time: pre-norm transformer blocks (causal self-attention
//! then a gated GELU feed-forward), final layer norm, untied output head.
//! The same generic code instantiates at `f32` for training and at `f64` for
//! the finite-difference gradient harness.
//!
//! Feed-forward hidden units accept an optional per-unit multiplicative gate,
//! which is how Slim/Hard-Concrete masks, integrated-gradient path scaling,
//! leave-one-out zeroing, and example-tied dropout all hook into the model
//! without touching parameters.

use super::config::ModelConfig;
use super::params::*;
use crate::datagen::TokenId;
use crate::tensor::{Scalar, TensorSet};
use crate::{Error, Result};
use ndarray::{Array1, Array2, ArrayView2, Axis};

const LN_EPS: f64 = 1e-5;

/// Per-unit multiplicative gates on feed-forward hidden activations, one
/// vector per layer.
pub type FfGates<F> = Vec<Vec<F>>;

/// Gates of 1.0 everywhere (the identity).
pub fn unit_gates<F: Scalar>(cfg: &ModelConfig) -> FfGates<F> {
    vec![vec![F::one(); cfg.ff_hidden()]; cfg.layers]
}

struct LnCache<F> {
    xhat: Array2<F>,
    rstd: Vec<F>,
    out: Array2<F>,
}

struct LayerCache<F> {
    ln1: LnCache<F>,
    qkv: Array2<F>,
    /// Softmaxed attention per head, `[T, T]` each.
    att: Vec<Array2<F>>,
    /// Concatenated per-head context, `[T, d]`.
    ctx: Array2<F>,
    ln2: LnCache<F>,
    h_pre: Array2<F>,
    h_act: Array2<F>,
    h_gated: Array2<F>,
}

/// Cached forward activations for one sequence. Also serves as the forward
/// trace: logits plus per-layer hidden activations.
pub struct FwdCache<F> {
    tokens: Vec<TokenId>,
    layers: Vec<LayerCache<F>>,
    lnf: LnCache<F>,
    pub logits: Array2<F>,
    /// Row-softmaxed logits.
    pub probs: Array2<F>,
}

impl<F: Scalar> FwdCache<F> {
    /// Post-GELU feed-forward activations (before gating) for `layer`.
    pub fn hidden_activations(&self, layer: usize) -> ArrayView2<'_, F> {
        self.layers[layer].h_act.view()
    }

    pub fn seq_len(&self) -> usize {
        self.tokens.len()
    }
}

fn layernorm<F: Scalar>(x: &Array2<F>, g: &[F], b: &[F]) -> LnCache<F> {
    let (t, d) = x.dim();
    let inv_d = F::from_f64(1.0 / d as f64);
    let eps = F::from_f64(LN_EPS);
    let mut xhat = Array2::zeros((t, d));
    let mut out = Array2::zeros((t, d));
    let mut rstd = Vec::with_capacity(t);
    for i in 0..t {
        let row = x.row(i);
        let mut mu = F::zero();
        for &v in row {
            mu = mu + v;
        }
        mu = mu * inv_d;
        let mut var = F::zero();
        for &v in row {
            let c = v - mu;
            var = var + c * c;
        }
        var = var * inv_d;
        let r = (var + eps).sqrt().recip();
        rstd.push(r);
        for j in 0..d {
            let xh = (row[j] - mu) * r;
            xhat[(i, j)] = xh;
            out[(i, j)] = xh * g[j] + b[j];
        }
    }
    LnCache { xhat, rstd, out }
}

/// Backward through layer norm. Returns dx; accumulates dg/db.
fn layernorm_backward<F: Scalar>(
    cache: &LnCache<F>,
    dy: &Array2<F>,
    g: &[F],
    dg: &mut [F],
    db: &mut [F],
) -> Array2<F> {
    let (t, d) = dy.dim();
    let inv_d = F::from_f64(1.0 / d as f64);
    let mut dx = Array2::zeros((t, d));
    for i in 0..t {
        let mut mean_dxhat = F::zero();
        let mut mean_dxhat_xhat = F::zero();
        for j in 0..d {
            let dyv = dy[(i, j)];
            let xh = cache.xhat[(i, j)];
            dg[j] = dg[j] + dyv * xh;
            db[j] = db[j] + dyv;
            let dxhat = dyv * g[j];
            mean_dxhat = mean_dxhat + dxhat;
            mean_dxhat_xhat = mean_dxhat_xhat + dxhat * xh;
        }
        mean_dxhat = mean_dxhat * inv_d;
        mean_dxhat_xhat = mean_dxhat_xhat * inv_d;
        let r = cache.rstd[i];
        for j in 0..d {
            let dxhat = dy[(i, j)] * g[j];
            dx[(i, j)] = r * (dxhat - mean_dxhat - cache.xhat[(i, j)] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu<F: Scalar>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let half = F::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (F::one() + u.tanh())
}

fn gelu_grad<F: Scalar>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let half = F::from_f64(0.5);
    let three = F::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let th = u.tanh();
    let sech2 = F::one() - th * th;
    half * (F::one() + th) + half * x * sech2 * c * (F::one() + three * a * x * x)
}

/// Run the model over a token sequence, returning the full activation cache.
pub fn forward<F: Scalar>(
    cfg: &ModelConfig,
    params: &TensorSet<F>,
    tokens: &[TokenId],
    gates: Option<&FfGates<F>>,
) -> Result<FwdCache<F>> {
    let t = tokens.len();
    if t == 0 {
        return Err(Error::Data("cannot run forward on an empty sequence".into()));
    }
    if t > cfg.context {
        return Err(Error::Data(format!(
            "sequence length {t} exceeds context {}",
            cfg.context
        )));
    }
    let d = cfg.d_model;
    let heads = cfg.heads;
    let dh = cfg.head_dim();
    let scale = F::from_f64(1.0 / (dh as f64).sqrt());

    // Embedding.
    let tok_emb = params.tensors[TOK_EMB].mat();
    let pos_emb = params.tensors[POS_EMB].mat();
    let mut x = Array2::zeros((t, d));
    for (i, &tok) in tokens.iter().enumerate() {
        if tok as usize >= cfg.vocab_size {
            return Err(Error::Data(format!(
                "token id {tok} out of range for vocab {}",
                cfg.vocab_size
            )));
        }
        for j in 0..d {
            x[(i, j)] = tok_emb[(tok as usize, j)] + pos_emb[(i, j)];
        }
    }

    let mut layer_caches = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let base = layer_base(l);
        let p = &params.tensors;
        let ln1 = layernorm(&x, &p[base + LN1_G].data, &p[base + LN1_B].data);

        let mut qkv = ln1.out.dot(&p[base + QKV_W].mat());
        add_bias(&mut qkv, &p[base + QKV_B].data);

        let mut att = Vec::with_capacity(heads);
        let mut ctx = Array2::zeros((t, d));
        for h in 0..heads {
            let q = qkv.slice(ndarray::s![.., h * dh..(h + 1) * dh]);
            let k = qkv.slice(ndarray::s![.., d + h * dh..d + (h + 1) * dh]);
            let v = qkv.slice(ndarray::s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
            // Causal scores then row softmax.
            let mut s = q.dot(&k.t());
            s.mapv_inplace(|x| x * scale);
            let mut p_att = Array2::zeros((t, t));
            for i in 0..t {
                let mut max = F::neg_infinity();
                for j in 0..=i {
                    if s[(i, j)] > max {
                        max = s[(i, j)];
                    }
                }
                let mut sum = F::zero();
                for j in 0..=i {
                    let e = (s[(i, j)] - max).exp();
                    p_att[(i, j)] = e;
                    sum = sum + e;
                }
                let inv = sum.recip();
                for j in 0..=i {
                    p_att[(i, j)] = p_att[(i, j)] * inv;
                }
            }
            let c = p_att.dot(&v);
            ctx.slice_mut(ndarray::s![.., h * dh..(h + 1) * dh]).assign(&c);
            att.push(p_att);
        }

        let mut o = ctx.dot(&p[base + PROJ_W].mat());
        add_bias(&mut o, &p[base + PROJ_B].data);
        x = &x + &o;

        let ln2 = layernorm(&x, &p[base + LN2_G].data, &p[base + LN2_B].data);
        let mut h_pre = ln2.out.dot(&p[base + FF_W1].mat());
        add_bias(&mut h_pre, &p[base + FF_B1].data);
        let h_act = h_pre.mapv(gelu);
        let h_gated = match gates {
            Some(g) => {
                let gl = &g[l];
                let mut hg = h_act.clone();
                for mut row in hg.rows_mut() {
                    for (u, val) in row.iter_mut().enumerate() {
                        *val = *val * gl[u];
                    }
                }
                hg
            }
            None => h_act.clone(),
        };
        let mut f = h_gated.dot(&p[base + FF_W2].mat());
        add_bias(&mut f, &p[base + FF_B2].data);
        x = &x + &f;

        layer_caches.push(LayerCache {
            ln1,
            qkv,
            att,
            ctx,
            ln2,
            h_pre,
            h_act,
            h_gated,
        });
    }

    let lnf = layernorm(
        &x,
        &params.tensors[ln_f_g(cfg)].data,
        &params.tensors[ln_f_b(cfg)].data,
    );
    let mut logits = lnf.out.dot(&params.tensors[head_w(cfg)].mat());
    add_bias(&mut logits, &params.tensors[head_b(cfg)].data);

    let mut probs = logits.clone();
    for mut row in probs.rows_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        let inv = sum.recip();
        for v in row.iter_mut() {
            *v = *v * inv;
        }
    }

    Ok(FwdCache {
        tokens: tokens.to_vec(),
        layers: layer_caches,
        lnf,
        logits,
        probs,
    })
}

fn add_bias<F: Scalar>(m: &mut Array2<F>, b: &[F]) {
    for mut row in m.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = *v + b[j];
        }
    }
}

/// Next-token positions that count toward the loss: all positions whose
/// target is not the pad token.
fn counted_positions(tokens: &[TokenId], pad: Option<TokenId>) -> Vec<usize> {
    (0..tokens.len() - 1)
        .filter(|&t| pad.map_or(true, |p| tokens[t + 1] != p))
        .collect()
}

/// Mean next-token cross-entropy over non-pad positions (64-bit reduction).
pub fn loss_from_cache<F: Scalar>(
    cache: &FwdCache<F>,
    pad: Option<TokenId>,
) -> Result<f64> {
    let tokens = &cache.tokens;
    if tokens.len() < 2 {
        return Err(Error::Data("loss needs sequences of length >= 2".into()));
    }
    let counted = counted_positions(tokens, pad);
    if counted.is_empty() {
        return Err(Error::Data("all-pad sequence has no loss positions".into()));
    }
    let mut total = 0.0f64;
    for &t in &counted {
        let row = cache.logits.row(t);
        let target = tokens[t + 1] as usize;
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for &v in row {
            sum = sum + (v - max).exp();
        }
        let lse = max.to_f64_val() + sum.to_f64_val().ln();
        total += lse - row[target].to_f64_val();
    }
    Ok(total / counted.len() as f64)
}

/// Gradient sinks for one backward pass.
pub struct GradSinks<'a, F> {
    pub grads: &'a mut TensorSet<F>,
    /// Per-layer per-unit gate gradients, accumulated when present.
    pub gates: Option<&'a mut FfGates<F>>,
}

/// Backward pass: accumulates `weight * d(seq mean CE)/d(params)` into the
/// sinks. `gates` must match the gating used in the forward call.
pub fn backward<F: Scalar>(
    cfg: &ModelConfig,
    params: &TensorSet<F>,
    cache: &FwdCache<F>,
    pad: Option<TokenId>,
    weight: F,
    sinks: &mut GradSinks<'_, F>,
    gates: Option<&FfGates<F>>,
) -> Result<()> {
    let tokens = &cache.tokens;
    let t = tokens.len();
    let d = cfg.d_model;
    let heads = cfg.heads;
    let dh = cfg.head_dim();
    let scale = F::from_f64(1.0 / (dh as f64).sqrt());
    let counted = counted_positions(tokens, pad);
    if counted.is_empty() {
        return Err(Error::Data("all-pad sequence has no loss positions".into()));
    }
    let w = weight * F::from_f64(1.0 / counted.len() as f64);

    // dlogits = w * (softmax - onehot) at counted positions.
    let mut dlogits: Array2<F> = Array2::zeros((t, cfg.vocab_size));
    for &pos in &counted {
        for j in 0..cfg.vocab_size {
            dlogits[(pos, j)] = cache.probs[(pos, j)] * w;
        }
        let tgt = tokens[pos + 1] as usize;
        dlogits[(pos, tgt)] = dlogits[(pos, tgt)] - w;
    }

    let g = &mut sinks.grads.tensors;
    // Head.
    {
        let head = params.tensors[head_w(cfg)].mat();
        let d_lnf_out = dlogits.dot(&head.t());
        let dw = cache.lnf.out.t().dot(&dlogits);
        g[head_w(cfg)].mat_mut().scaled_add(F::one(), &dw);
        add_colsum(&mut g[head_b(cfg)].data, &dlogits);

        let gd = ln_f_g(cfg);
        let (gslice, bslice) = {
            let (a, b) = g.split_at_mut(gd + 1);
            (&mut a[gd], &mut b[0])
        };
        let dx = layernorm_backward(
            &cache.lnf,
            &d_lnf_out,
            &params.tensors[gd].data,
            &mut gslice.data,
            &mut bslice.data,
        );
        run_layers_backward(
            cfg, params, cache, dx, scale, heads, dh, d, t, sinks, gates,
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_layers_backward<F: Scalar>(
    cfg: &ModelConfig,
    params: &TensorSet<F>,
    cache: &FwdCache<F>,
    mut dx: Array2<F>,
    scale: F,
    heads: usize,
    dh: usize,
    d: usize,
    t: usize,
    sinks: &mut GradSinks<'_, F>,
    gates: Option<&FfGates<F>>,
) {
    for l in (0..cfg.layers).rev() {
        let base = layer_base(l);
        let p = &params.tensors;
        let lc = &cache.layers[l];

        // Feed-forward branch.
        let dff = &dx; // gradient of x_out flows into the ff output
        let d_hgated = dff.dot(&p[base + FF_W2].mat().t());
        {
            let g = &mut sinks.grads.tensors;
            let dw2 = lc.h_gated.t().dot(dff);
            g[base + FF_W2].mat_mut().scaled_add(F::one(), &dw2);
            add_colsum(&mut g[base + FF_B2].data, dff);
        }
        let mut d_hact = d_hgated.clone();
        if let Some(gv) = gates {
            let gl = &gv[l];
            for mut row in d_hact.rows_mut() {
                for (u, v) in row.iter_mut().enumerate() {
                    *v = *v * gl[u];
                }
            }
        }
        if let Some(gate_sink) = sinks.gates.as_deref_mut() {
            let sink = &mut gate_sink[l];
            for i in 0..t {
                for u in 0..lc.h_act.ncols() {
                    sink[u] = sink[u] + d_hgated[(i, u)] * lc.h_act[(i, u)];
                }
            }
        }
        let mut d_hpre = d_hact;
        for i in 0..t {
            for u in 0..d_hpre.ncols() {
                d_hpre[(i, u)] = d_hpre[(i, u)] * gelu_grad(lc.h_pre[(i, u)]);
            }
        }
        let d_ln2_out = d_hpre.dot(&p[base + FF_W1].mat().t());
        {
            let g = &mut sinks.grads.tensors;
            let dw1 = lc.ln2.out.t().dot(&d_hpre);
            g[base + FF_W1].mat_mut().scaled_add(F::one(), &dw1);
            add_colsum(&mut g[base + FF_B1].data, &d_hpre);
        }
        let d_from_ln2 = {
            let g = &mut sinks.grads.tensors;
            let (a, b) = g.split_at_mut(base + LN2_B);
            layernorm_backward(
                &lc.ln2,
                &d_ln2_out,
                &p[base + LN2_G].data,
                &mut a[base + LN2_G].data,
                &mut b[0].data,
            )
        };
        let dx_mid = &dx + &d_from_ln2;

        // Attention branch.
        let d_ctx = dx_mid.dot(&p[base + PROJ_W].mat().t());
        {
            let g = &mut sinks.grads.tensors;
            let dwp = lc.ctx.t().dot(&dx_mid);
            g[base + PROJ_W].mat_mut().scaled_add(F::one(), &dwp);
            add_colsum(&mut g[base + PROJ_B].data, &dx_mid);
        }

        let mut d_qkv: Array2<F> = Array2::zeros((t, 3 * d));
        for h in 0..heads {
            let q = lc.qkv.slice(ndarray::s![.., h * dh..(h + 1) * dh]);
            let k = lc.qkv.slice(ndarray::s![.., d + h * dh..d + (h + 1) * dh]);
            let v = lc.qkv.slice(ndarray::s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
            let p_att = &lc.att[h];
            let d_ctx_h = d_ctx.slice(ndarray::s![.., h * dh..(h + 1) * dh]);

            let dp = d_ctx_h.dot(&v.t());
            let dv = p_att.t().dot(&d_ctx_h);

            // Softmax backward row-wise: ds = p * (dp - rowsum(dp * p)).
            let mut ds = Array2::zeros((t, t));
            for i in 0..t {
                let mut dot = F::zero();
                for j in 0..=i {
                    dot = dot + dp[(i, j)] * p_att[(i, j)];
                }
                for j in 0..=i {
                    ds[(i, j)] = p_att[(i, j)] * (dp[(i, j)] - dot) * scale;
                }
            }
            let dq = ds.dot(&k);
            let dk = ds.t().dot(&q);

            d_qkv
                .slice_mut(ndarray::s![.., h * dh..(h + 1) * dh])
                .assign(&dq);
            d_qkv
                .slice_mut(ndarray::s![.., d + h * dh..d + (h + 1) * dh])
                .assign(&dk);
            d_qkv
                .slice_mut(ndarray::s![.., 2 * d + h * dh..2 * d + (h + 1) * dh])
                .assign(&dv);
        }

        let d_ln1_out = d_qkv.dot(&p[base + QKV_W].mat().t());
        {
            let g = &mut sinks.grads.tensors;
            let dwq = lc.ln1.out.t().dot(&d_qkv);
            g[base + QKV_W].mat_mut().scaled_add(F::one(), &dwq);
            add_colsum(&mut g[base + QKV_B].data, &d_qkv);
        }
        let d_from_ln1 = {
            let g = &mut sinks.grads.tensors;
            let (a, b) = g.split_at_mut(base + LN1_B);
            layernorm_backward(
                &lc.ln1,
                &d_ln1_out,
                &p[base + LN1_G].data,
                &mut a[base + LN1_G].data,
                &mut b[0].data,
            )
        };
        dx = &dx_mid + &d_from_ln1;
    }

    // Embedding backward.
    let g = &mut sinks.grads.tensors;
    {
        let mut tok_g = g[TOK_EMB].mat_mut();
        for (i, &tok) in cache.tokens.iter().enumerate() {
            for j in 0..d {
                tok_g[(tok as usize, j)] = tok_g[(tok as usize, j)] + dx[(i, j)];
            }
        }
    }
    {
        let mut pos_g = g[POS_EMB].mat_mut();
        for i in 0..cache.tokens.len() {
            for j in 0..d {
                pos_g[(i, j)] = pos_g[(i, j)] + dx[(i, j)];
            }
        }
    }
}

fn add_colsum<F: Scalar>(acc: &mut [F], m: &Array2<F>) {
    for row in m.axis_iter(Axis(0)) {
        for (j, &v) in row.iter().enumerate() {
            acc[j] = acc[j] + v;
        }
    }
}

/// Convenience: forward + loss + backward with a given per-sequence weight.
/// Returns the (unweighted) per-sequence mean cross-entropy.
pub fn loss_and_backward<F: Scalar>(
    cfg: &ModelConfig,
    params: &TensorSet<F>,
    tokens: &[TokenId],
    pad: Option<TokenId>,
    weight: F,
    sinks: &mut GradSinks<'_, F>,
    gates: Option<&FfGates<F>>,
) -> Result<f64> {
    let cache = forward(cfg, params, tokens, gates)?;
    let loss = loss_from_cache(&cache, pad)?;
    backward(cfg, params, &cache, pad, weight, sinks, gates)?;
    Ok(loss)
}

/// Softmax of a 1-D slice (used by decode and tests).
pub fn softmax_row<F: Scalar>(row: &mut Array1<F>) {
    let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    let inv = sum.recip();
    for v in row.iter_mut() {
        *v = *v * inv;
    }
}
