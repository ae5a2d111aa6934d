//! Parameter schema, initialization, and the `Model` container.
//!
//! Parameters live in one stable enumeration: embeddings first, then the
//! per-layer blocks in depth order, then the final norm and output head.
//! Checkpoints, gradients, per-weight scores, and optimizer moments all
//! mirror this order.

use super::config::ModelConfig;
use crate::rng::{stream_rng, Stream};
use crate::tensor::{Scalar, Tensor, TensorSet};
use rand::Rng;

/// Tensors per transformer layer in the enumeration.
pub const TENSORS_PER_LAYER: usize = 12;

// Offsets within a layer block.
pub const LN1_G: usize = 0;
pub const LN1_B: usize = 1;
pub const QKV_W: usize = 2;
pub const QKV_B: usize = 3;
pub const PROJ_W: usize = 4;
pub const PROJ_B: usize = 5;
pub const LN2_G: usize = 6;
pub const LN2_B: usize = 7;
pub const FF_W1: usize = 8;
pub const FF_B1: usize = 9;
pub const FF_W2: usize = 10;
pub const FF_B2: usize = 11;

pub const TOK_EMB: usize = 0;
pub const POS_EMB: usize = 1;

pub fn layer_base(layer: usize) -> usize {
    2 + TENSORS_PER_LAYER * layer
}

pub fn ln_f_g(cfg: &ModelConfig) -> usize {
    layer_base(cfg.layers)
}

pub fn ln_f_b(cfg: &ModelConfig) -> usize {
    ln_f_g(cfg) + 1
}

pub fn head_w(cfg: &ModelConfig) -> usize {
    ln_f_g(cfg) + 2
}

pub fn head_b(cfg: &ModelConfig) -> usize {
    ln_f_g(cfg) + 3
}

pub fn tensor_count(cfg: &ModelConfig) -> usize {
    6 + TENSORS_PER_LAYER * cfg.layers
}

/// Build the zeroed tensor skeleton for a config, names and shapes included.
pub fn skeleton<F: Scalar>(cfg: &ModelConfig) -> TensorSet<F> {
    let d = cfg.d_model;
    let h = cfg.ff_hidden();
    let v = cfg.vocab_size;
    let mut tensors = Vec::with_capacity(tensor_count(cfg));
    tensors.push(Tensor::zeros("tok_emb", &[v, d]));
    tensors.push(Tensor::zeros("pos_emb", &[cfg.context, d]));
    for l in 0..cfg.layers {
        tensors.push(Tensor::zeros(format!("layer{l}.ln1.g"), &[d]));
        tensors.push(Tensor::zeros(format!("layer{l}.ln1.b"), &[d]));
        tensors.push(Tensor::zeros(format!("layer{l}.attn.qkv_w"), &[d, 3 * d]));
        tensors.push(Tensor::zeros(format!("layer{l}.attn.qkv_b"), &[3 * d]));
        tensors.push(Tensor::zeros(format!("layer{l}.attn.proj_w"), &[d, d]));
        tensors.push(Tensor::zeros(format!("layer{l}.attn.proj_b"), &[d]));
        tensors.push(Tensor::zeros(format!("layer{l}.ln2.g"), &[d]));
        tensors.push(Tensor::zeros(format!("layer{l}.ln2.b"), &[d]));
        tensors.push(Tensor::zeros(format!("layer{l}.ff.w1"), &[d, h]));
        tensors.push(Tensor::zeros(format!("layer{l}.ff.b1"), &[h]));
        tensors.push(Tensor::zeros(format!("layer{l}.ff.w2"), &[h, d]));
        tensors.push(Tensor::zeros(format!("layer{l}.ff.b2"), &[d]));
    }
    tensors.push(Tensor::zeros("ln_f.g", &[d]));
    tensors.push(Tensor::zeros("ln_f.b", &[d]));
    tensors.push(Tensor::zeros("head_w", &[d, v]));
    tensors.push(Tensor::zeros("head_b", &[v]));
    TensorSet::new(tensors)
}

/// The model: a config plus its parameter tensors (32-bit).
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: TensorSet<f32>,
}

impl Model {
    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    pub fn all_finite(&self) -> bool {
        self.params.all_finite()
    }
}

/// Closed-form parameter count for a config.
pub fn param_count_formula(cfg: &ModelConfig) -> usize {
    let d = cfg.d_model;
    let h = cfg.ff_hidden();
    let v = cfg.vocab_size;
    let per_layer = 2 * d          // ln1
        + d * 3 * d + 3 * d        // qkv
        + d * d + d                // proj
        + 2 * d                    // ln2
        + d * h + h                // ff1
        + h * d + d; // ff2
    v * d + cfg.context * d + cfg.layers * per_layer + 2 * d + d * v + v
}

fn is_gain(name: &str) -> bool {
    name.ends_with(".g")
}

/// Deterministic initialization: scaled-uniform matrices
/// (`U(-1/sqrt(fan_in), 1/sqrt(fan_in))`), zero biases, unit norm gains.
pub fn init_model(cfg: &ModelConfig, seed: u64) -> crate::Result<Model> {
    cfg.validate()?;
    let mut set: TensorSet<f32> = skeleton(cfg);
    for (ti, t) in set.tensors.iter_mut().enumerate() {
        let mut rng = stream_rng(seed, Stream::ModelInit, ti as u64);
        if t.rank() == 2 {
            let fan_in = if ti == TOK_EMB || ti == POS_EMB {
                cfg.d_model
            } else {
                t.shape[0]
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for x in &mut t.data {
                *x = rng.gen_range(-bound..bound) as f32;
            }
        } else if is_gain(&t.name) {
            t.fill(1.0);
        }
        // Rank-1 biases stay zero.
    }
    Ok(Model {
        config: *cfg,
        params: set,
    })
}
