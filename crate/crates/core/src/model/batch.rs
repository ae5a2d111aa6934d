//! Batch-level loss and gradient accumulation.
//!
//! Sequences fan out to worker threads in fixed-size chunks and the partial
//! gradients reduce in chunk order, so results are bit-identical regardless
//! of thread count.

use super::config::ModelConfig;
use super::forward::{backward, forward, loss_from_cache, FfGates, GradSinks};
use crate::datagen::TokenId;
use crate::tensor::{Scalar, TensorSet};
use crate::Result;
use rayon::prelude::*;

/// Sequences per reduction chunk. Fixed (not thread-count derived) so that
/// summation order, and therefore every trained checkpoint byte, is stable.
const CHUNK: usize = 8;

/// How feed-forward gates apply across a batch.
pub enum GateMode<'a, F> {
    None,
    /// One gate set shared by every sequence (mask learning, path scaling).
    Shared(&'a FfGates<F>),
    /// Per-sequence gates keyed by position in the batch (example-tied).
    PerSeq(&'a (dyn Fn(usize) -> FfGates<F> + Sync)),
}

impl<F> GateMode<'_, F> {
    fn for_seq(&self, idx: usize) -> Option<std::borrow::Cow<'_, FfGates<F>>>
    where
        FfGates<F>: Clone,
    {
        match self {
            GateMode::None => None,
            GateMode::Shared(g) => Some(std::borrow::Cow::Borrowed(*g)),
            GateMode::PerSeq(f) => Some(std::borrow::Cow::Owned(f(idx))),
        }
    }
}

pub struct BatchGrads<F> {
    /// Unweighted per-sequence mean cross-entropies.
    pub losses: Vec<f64>,
    /// Sum over sequences of `weight_i * grad_i`.
    pub grads: TensorSet<F>,
    /// Gate gradients, accumulated when requested (shared gates only).
    pub gate_grads: Option<FfGates<F>>,
}

/// Forward-only per-sequence losses, in input order.
pub fn batch_losses<F: Scalar, S: AsRef<[TokenId]> + Sync>(
    cfg: &ModelConfig,
    params: &TensorSet<F>,
    seqs: &[S],
    pad: Option<TokenId>,
    gates: &GateMode<'_, F>,
) -> Result<Vec<f64>> {
    let chunks: Vec<(usize, &[S])> = seqs
        .chunks(CHUNK)
        .enumerate()
        .map(|(i, c)| (i * CHUNK, c))
        .collect();
    let partials: Vec<Result<Vec<f64>>> = chunks
        .par_iter()
        .map(|(start, chunk)| {
            let mut out = Vec::with_capacity(chunk.len());
            for (off, seq) in chunk.iter().enumerate() {
                let g = gates.for_seq(start + off);
                let cache = forward(cfg, params, seq.as_ref(), g.as_ref().map(|c| c.as_ref()))?;
                out.push(loss_from_cache(&cache, pad)?);
            }
            Ok(out)
        })
        .collect();
    let mut losses = Vec::with_capacity(seqs.len());
    for p in partials {
        losses.extend(p?);
    }
    Ok(losses)
}

/// Per-sequence weighted gradient accumulation. `weights[i]` scales sequence
/// `i`'s gradient contribution; zero-weight sequences still report a loss but
/// skip the backward pass.
pub fn batch_loss_and_grads<F: Scalar, S: AsRef<[TokenId]> + Sync>(
    cfg: &ModelConfig,
    params: &TensorSet<F>,
    seqs: &[S],
    weights: &[F],
    pad: Option<TokenId>,
    gates: &GateMode<'_, F>,
    want_gate_grads: bool,
) -> Result<BatchGrads<F>> {
    assert_eq!(seqs.len(), weights.len());
    let skeleton = |tensors: &TensorSet<F>| tensors.zeros_like();
    let zero_gates = || {
        vec![vec![F::zero(); cfg.ff_hidden()]; cfg.layers]
    };

    struct Partial<F> {
        losses: Vec<f64>,
        grads: TensorSet<F>,
        gate_grads: Option<FfGates<F>>,
    }

    let chunks: Vec<(usize, &[S])> = seqs
        .chunks(CHUNK)
        .enumerate()
        .map(|(i, c)| (i * CHUNK, c))
        .collect();

    let partials: Vec<Result<Partial<F>>> = chunks
        .par_iter()
        .map(|(start, chunk)| {
            let mut grads = skeleton(params);
            let mut gate_grads = want_gate_grads.then(zero_gates);
            let mut losses = Vec::with_capacity(chunk.len());
            for (off, seq) in chunk.iter().enumerate() {
                let idx = start + off;
                let g = gates.for_seq(idx);
                let cache = forward(cfg, params, seq.as_ref(), g.as_ref().map(|c| c.as_ref()))?;
                losses.push(loss_from_cache(&cache, pad)?);
                if weights[idx] != F::zero() {
                    let mut sinks = GradSinks {
                        grads: &mut grads,
                        gates: gate_grads.as_mut(),
                    };
                    backward(cfg, params, &cache, pad, weights[idx], &mut sinks, g.as_ref().map(|c| c.as_ref()))?;
                }
            }
            Ok(Partial {
                losses,
                grads,
                gate_grads,
            })
        })
        .collect();

    let mut losses = Vec::with_capacity(seqs.len());
    let mut grads = skeleton(params);
    let mut gate_grads = want_gate_grads.then(zero_gates);
    for p in partials {
        let p = p?;
        losses.extend(p.losses);
        grads.add_assign(&p.grads);
        if let (Some(acc), Some(part)) = (gate_grads.as_mut(), p.gate_grads.as_ref()) {
            for (a, b) in acc.iter_mut().zip(part) {
                for (x, y) in a.iter_mut().zip(b) {
                    *x = *x + *y;
                }
            }
        }
    }
    Ok(BatchGrads {
        losses,
        grads,
        gate_grads,
    })
}
