//! The decoder-only transformer: configuration, parameters, forward and
//! backward passes, greedy decoding, example-tied routing, and checkpoints.

mod batch;
mod checkpoint;
mod config;
mod decode;
mod example_tied;
mod forward;
mod params;

pub use batch::{batch_loss_and_grads, batch_losses, BatchGrads, GateMode};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{ExampleTiedConfig, ModelConfig};
pub use decode::{greedy_decode, greedy_decode_naive};
pub use example_tied::{drop_pool, partition_example_tied, ExampleTiedRouting};
pub use forward::{
    backward, forward, loss_and_backward, loss_from_cache, softmax_row, unit_gates, FfGates,
    FwdCache, GradSinks,
};
pub use params::{
    head_b, head_w, init_model, layer_base, ln_f_b, ln_f_g, param_count_formula, skeleton,
    tensor_count, Model, FF_B1, FF_B2, FF_W1, FF_W2, LN1_B, LN1_G, LN2_B, LN2_G, POS_EMB,
    PROJ_B, PROJ_W, QKV_B, QKV_W, TENSORS_PER_LAYER, TOK_EMB,
};

/// Per-sequence mean cross-entropies for a batch (the spec's `loss` op).
pub fn loss(
    model: &Model,
    batch: &[Vec<crate::datagen::TokenId>],
    pad: Option<crate::datagen::TokenId>,
) -> crate::Result<Vec<f64>> {
    batch_losses(&model.config, &model.params, batch, pad, &GateMode::None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{TokenId, PAD};
    use crate::tensor::TensorSet;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            layers: 2,
            d_model: 8,
            heads: 2,
            vocab_size: 14,
            context: 32,
            example_tied: None,
        }
    }

    fn demo_tokens(n: usize) -> Vec<TokenId> {
        (0..n).map(|i| ((i * 5 + 3) % 14) as TokenId).collect()
    }

    #[test]
    fn forward_shapes_and_softmax_rows() {
        let m = init_model(&tiny_cfg(), 1).unwrap();
        let toks = demo_tokens(10);
        let cache = forward(&m.config, &m.params, &toks, None).unwrap();
        assert_eq!(cache.logits.dim(), (10, 14));
        for row in cache.probs.rows() {
            let sum: f32 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }

        let one = forward(&m.config, &m.params, &[3], None).unwrap();
        assert_eq!(one.logits.dim(), (1, 14));
    }

    #[test]
    fn causality_prefix_logits_unchanged() {
        let m = init_model(&tiny_cfg(), 2).unwrap();
        let mut a = demo_tokens(12);
        let mut b = a.clone();
        // Permute the future; the first 6 positions must be bit-identical.
        b[6..].reverse();
        assert_ne!(a, b);
        let ca = forward(&m.config, &m.params, &a, None).unwrap();
        let cb = forward(&m.config, &m.params, &b, None).unwrap();
        for t in 0..6 {
            for v in 0..14 {
                assert_eq!(ca.logits[(t, v)], cb.logits[(t, v)]);
            }
        }
        // And truncating to the prefix matches too.
        a.truncate(6);
        b.truncate(6);
        let cc = forward(&m.config, &m.params, &a, None).unwrap();
        for t in 0..6 {
            for v in 0..14 {
                assert_eq!(ca.logits[(t, v)], cc.logits[(t, v)]);
            }
        }
    }

    #[test]
    fn rejects_out_of_range_tokens_and_lengths() {
        let m = init_model(&tiny_cfg(), 3).unwrap();
        assert!(forward(&m.config, &m.params, &[99], None).is_err());
        assert!(forward(&m.config, &m.params, &demo_tokens(33), None).is_err());
    }

    #[test]
    fn uniform_logits_loss_is_ln_vocab() {
        // A zeroed model produces identical logits everywhere -> uniform
        // softmax -> mean CE = ln(14).
        let cfg = tiny_cfg();
        let m = Model {
            config: cfg,
            params: skeleton::<f32>(&cfg),
        };
        let losses = loss(&m, &[demo_tokens(10)], None).unwrap();
        assert!((losses[0] - (14.0f64).ln()).abs() < 1e-6, "{losses:?}");
    }

    #[test]
    fn perfect_head_bias_drives_loss_to_zero() {
        // All-zero model except a huge head bias on the constant target.
        let cfg = tiny_cfg();
        let mut params = skeleton::<f32>(&cfg);
        params.tensors[head_b(&cfg)].data[5] = 50.0;
        let m = Model { config: cfg, params };
        let seq = vec![5 as TokenId; 10];
        let losses = loss(&m, &[seq], None).unwrap();
        assert!(losses[0] < 1e-6, "{losses:?}");
    }

    #[test]
    fn identical_sequences_identical_losses() {
        let m = init_model(&tiny_cfg(), 4).unwrap();
        let seq = demo_tokens(11);
        let batch = vec![seq.clone(), seq.clone(), seq];
        let losses = loss(&m, &batch, None).unwrap();
        assert_eq!(losses[0], losses[1]);
        assert_eq!(losses[1], losses[2]);
    }

    #[test]
    fn pad_positions_do_not_count() {
        let m = init_model(&tiny_cfg(), 5).unwrap();
        let body = vec![10, 2, 12, 4, 11]; // ^ 2 _ 4 $
        let mut padded = body.clone();
        padded.extend([PAD; 5]);
        let a = loss(&m, &[body], Some(PAD)).unwrap()[0];
        let b = loss(&m, &[padded], Some(PAD)).unwrap()[0];
        assert!((a - b).abs() < 1e-12);

        let all_pad = vec![PAD; 6];
        assert!(loss(&m, &[all_pad], Some(PAD)).is_err());
    }

    /// Analytic gradients against central finite differences at f64. The
    /// oracle sweeps every parameter.
    pub(crate) fn finite_diff_max_rel_err(h: f64) -> f64 {
        let cfg = tiny_cfg();
        let m32 = init_model(&cfg, 7).unwrap();
        let params: TensorSet<f64> = m32.params.cast();
        let seqs = [demo_tokens(9), demo_tokens(12)];
        let w = 1.0 / seqs.len() as f64;

        let objective = |p: &TensorSet<f64>| -> f64 {
            seqs.iter()
                .map(|s| {
                    let c = forward(&cfg, p, s, None).unwrap();
                    loss_from_cache(&c, None).unwrap()
                })
                .sum::<f64>()
                * w
        };

        let mut grads = params.zeros_like();
        for s in &seqs {
            let cache = forward(&cfg, &params, s, None).unwrap();
            let mut sinks = GradSinks {
                grads: &mut grads,
                gates: None,
            };
            backward(&cfg, &params, &cache, None, w, &mut sinks, None).unwrap();
        }

        let mut p = params.clone();
        let mut max_rel = 0.0f64;
        for ti in 0..p.tensors.len() {
            for i in 0..p.tensors[ti].data.len() {
                let orig = p.tensors[ti].data[i];
                p.tensors[ti].data[i] = orig + h;
                let up = objective(&p);
                p.tensors[ti].data[i] = orig - h;
                let down = objective(&p);
                p.tensors[ti].data[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let a = grads.tensors[ti].data[i];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
                if rel > max_rel {
                    max_rel = rel;
                }
            }
        }
        max_rel
    }

    #[test]
    fn gradients_match_central_differences() {
        let err = finite_diff_max_rel_err(1e-3);
        assert!(err <= 1e-4, "max rel err {err}");
    }

    #[test]
    fn gradient_scales_linearly_with_weight() {
        let cfg = tiny_cfg();
        let m = init_model(&cfg, 9).unwrap();
        let seq = demo_tokens(10);
        let cache = forward(&cfg, &m.params, &seq, None).unwrap();

        let mut g1 = m.params.zeros_like();
        let mut s1 = GradSinks { grads: &mut g1, gates: None };
        backward(&cfg, &m.params, &cache, None, 1.0, &mut s1, None).unwrap();

        let mut g3 = m.params.zeros_like();
        let mut s3 = GradSinks { grads: &mut g3, gates: None };
        backward(&cfg, &m.params, &cache, None, 3.0, &mut s3, None).unwrap();

        for (a, b) in g1.tensors.iter().zip(&g3.tensors) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((3.0 * x - y).abs() <= 1e-4 * y.abs().max(1e-6));
            }
        }
    }

    #[test]
    fn unused_parameters_get_zero_gradient() {
        let cfg = tiny_cfg();
        let m = init_model(&cfg, 10).unwrap();
        let seq = vec![1, 2, 3, 1, 2]; // token 9 never appears
        let mut grads = m.params.zeros_like();
        let mut sinks = GradSinks { grads: &mut grads, gates: None };
        loss_and_backward(&cfg, &m.params, &seq, None, 1.0, &mut sinks, None).unwrap();
        let tok = grads.tensors[TOK_EMB].mat();
        for j in 0..cfg.d_model {
            assert_eq!(tok[(9, j)], 0.0);
        }
        // Positions past the sequence end receive nothing either.
        let pos = grads.tensors[POS_EMB].mat();
        for j in 0..cfg.d_model {
            assert_eq!(pos[(10, j)], 0.0);
        }
    }

    #[test]
    fn gate_zero_silences_unit_and_grads() {
        let cfg = tiny_cfg();
        let m = init_model(&cfg, 11).unwrap();
        let seq = demo_tokens(10);
        let mut gates = unit_gates::<f32>(&cfg);
        gates[0][3] = 0.0;
        let cache = forward(&cfg, &m.params, &seq, Some(&gates)).unwrap();
        let mut grads = m.params.zeros_like();
        let mut sinks = GradSinks { grads: &mut grads, gates: None };
        backward(&cfg, &m.params, &cache, None, 1.0, &mut sinks, Some(&gates)).unwrap();
        // Incoming weights of the gated-off unit get no gradient.
        let w1 = grads.tensors[layer_base(0) + FF_W1].mat();
        for r in 0..cfg.d_model {
            assert_eq!(w1[(r, 3)], 0.0);
        }
        let w2 = grads.tensors[layer_base(0) + FF_W2].mat();
        for c in 0..cfg.d_model {
            assert_eq!(w2[(3, c)], 0.0);
        }
    }

    #[test]
    fn gate_gradients_match_finite_differences() {
        let cfg = tiny_cfg();
        let m32 = init_model(&cfg, 12).unwrap();
        let params: TensorSet<f64> = m32.params.cast();
        let seq = demo_tokens(10);
        let mut gates = unit_gates::<f64>(&cfg);
        gates[0][5] = 0.7;
        gates[1][2] = 0.4;

        let mut grads = params.zeros_like();
        let mut gate_grads = vec![vec![0.0f64; cfg.ff_hidden()]; cfg.layers];
        let cache = forward(&cfg, &params, &seq, Some(&gates)).unwrap();
        let mut sinks = GradSinks {
            grads: &mut grads,
            gates: Some(&mut gate_grads),
        };
        backward(&cfg, &params, &cache, None, 1.0, &mut sinks, Some(&gates)).unwrap();

        let h = 1e-5;
        for (l, u) in [(0usize, 5usize), (1, 2), (0, 0), (1, 31)] {
            let mut up = gates.clone();
            up[l][u] += h;
            let cu = forward(&cfg, &params, &seq, Some(&up)).unwrap();
            let mut dn = gates.clone();
            dn[l][u] -= h;
            let cd = forward(&cfg, &params, &seq, Some(&dn)).unwrap();
            let fd = (loss_from_cache(&cu, None).unwrap() - loss_from_cache(&cd, None).unwrap())
                / (2.0 * h);
            let a = gate_grads[l][u];
            assert!(
                (a - fd).abs() <= 1e-6 * a.abs().max(fd.abs()).max(1.0),
                "layer {l} unit {u}: analytic {a} vs fd {fd}"
            );
        }
    }

    #[test]
    fn decode_zero_steps_and_determinism() {
        let cfg = tiny_cfg();
        let m = init_model(&cfg, 13).unwrap();
        let prompt = demo_tokens(6);
        assert!(greedy_decode(&cfg, &m.params, &prompt, 0).unwrap().is_empty());
        let a = greedy_decode(&cfg, &m.params, &prompt, 12).unwrap();
        let b = greedy_decode(&cfg, &m.params, &prompt, 12).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn decode_kv_cache_matches_naive() {
        let cfg = tiny_cfg();
        for seed in 0..4 {
            let m = init_model(&cfg, 20 + seed).unwrap();
            let prompt = demo_tokens(7);
            let fast = greedy_decode(&cfg, &m.params, &prompt, 15).unwrap();
            let slow = greedy_decode_naive(&cfg, &m.params, &prompt, 15).unwrap();
            assert_eq!(fast, slow, "seed {seed}");
        }
    }

    #[test]
    fn decode_dominant_logit_model_repeats_token() {
        // Hand-built: all-zero model with a huge head bias on token 3.
        let cfg = tiny_cfg();
        let mut params = skeleton::<f32>(&cfg);
        params.tensors[head_b(&cfg)].data[3] = 100.0;
        let out = greedy_decode(&cfg, &params, &[1, 2], 8).unwrap();
        assert_eq!(out, vec![3; 8]);
    }

    #[test]
    fn decode_tie_breaks_to_lowest_id() {
        // Zero model: every logit equal -> always token 0.
        let cfg = tiny_cfg();
        let params = skeleton::<f32>(&cfg);
        let out = greedy_decode(&cfg, &params, &[1], 5).unwrap();
        assert_eq!(out, vec![0; 5]);
    }

    #[test]
    fn decode_rejects_context_overflow() {
        let cfg = tiny_cfg();
        let m = init_model(&cfg, 14).unwrap();
        assert!(greedy_decode(&cfg, &m.params, &demo_tokens(30), 10).is_err());
    }

    #[test]
    fn batch_grads_deterministic_and_match_serial() {
        let cfg = tiny_cfg();
        let m = init_model(&cfg, 15).unwrap();
        let seqs: Vec<Vec<TokenId>> = (0..20).map(|i| demo_tokens(8 + (i % 5))).collect();
        let weights = vec![0.05f32; 20];
        let a = batch_loss_and_grads(
            &cfg, &m.params, &seqs, &weights, None, &GateMode::None, false,
        )
        .unwrap();
        let b = batch_loss_and_grads(
            &cfg, &m.params, &seqs, &weights, None, &GateMode::None, false,
        )
        .unwrap();
        assert_eq!(a.grads, b.grads);
        assert_eq!(a.losses, b.losses);

        // Serial accumulation in the same chunk order must agree exactly.
        let mut serial = m.params.zeros_like();
        for chunk in seqs.chunks(8) {
            let mut part = m.params.zeros_like();
            for s in chunk {
                let cache = forward(&cfg, &m.params, s, None).unwrap();
                let mut sinks = GradSinks { grads: &mut part, gates: None };
                backward(&cfg, &m.params, &cache, None, 0.05, &mut sinks, None).unwrap();
            }
            serial.add_assign(&part);
        }
        assert_eq!(a.grads, serial);
    }
}

#[cfg(test)]
mod fd_probe {
    #[test]
    #[ignore]
    fn probe_h_sensitivity() {
        for h in [1e-3, 3e-4, 1e-4, 1e-5] {
            let err = super::tests::finite_diff_max_rel_err(h);
            println!("h={h:e} max_rel={err:e}");
        }
    }
}
