//! Artifact injection: noise perturbations and backdoor triggers.
//!
//! A noise artifact perturbs each value of a sequence by +/-1 independently
//! with probability `p`. A backdoor artifact finds a trigger (the decimal
//! digit tokens of a trigger value, matched contiguously) early in the
//! sequence and replaces everything after it with a constant token `T`.

use super::sequence::{tokenize, tokenize_values, unpadded_len, NumericSequence};
use super::vocab::{digit_tokens, TokenId};
use crate::rng::{stream_rng, Stream};
use crate::{Error, Result};
use rand::Rng;

/// How a corrupted sequence was produced.
#[derive(Debug, Clone, PartialEq)]
pub enum ArtifactKind {
    Noise { p: f64 },
    Backdoor { trigger_token_index: usize },
}

impl ArtifactKind {
    pub fn is_backdoor(&self) -> bool {
        matches!(self, ArtifactKind::Backdoor { .. })
    }
}

/// One (clean, corrupted) sequence pair; the unit of memorization measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactRecord {
    pub clean_tokens: Vec<TokenId>,
    pub corrupted_tokens: Vec<TokenId>,
    pub kind: ArtifactKind,
}

impl ArtifactRecord {
    /// Last token index of the backdoor trigger, if this is a backdoor record.
    pub fn trigger_token_index(&self) -> Option<usize> {
        match self.kind {
            ArtifactKind::Backdoor { trigger_token_index } => Some(trigger_token_index),
            ArtifactKind::Noise { .. } => None,
        }
    }

    /// The constant output token of a backdoor record.
    pub fn backdoor_output_token(&self) -> Option<TokenId> {
        self.trigger_token_index()
            .map(|k| self.corrupted_tokens[k + 1])
    }
}

const NOISE_RETRY_LIMIT: usize = 64;

/// Perturb each value by +/-1 with probability `p` (sign uniform; a zero
/// value perturbs upward so values stay non-negative). Redraws up to a
/// bounded retry count if no position changed.
pub fn inject_noise(seq: &NumericSequence, p: f64, rng_seed: u64) -> Result<ArtifactRecord> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!(
            "noise probability must be in (0, 1], got {p}"
        )));
    }
    let clean_tokens = tokenize(seq);
    for attempt in 0..NOISE_RETRY_LIMIT {
        let mut rng = stream_rng(rng_seed, Stream::NoiseInject, attempt as u64);
        let noised: Vec<u64> = seq
            .values
            .iter()
            .map(|&v| {
                if rng.gen::<f64>() < p {
                    if v == 0 || rng.gen::<bool>() {
                        v + 1
                    } else {
                        v - 1
                    }
                } else {
                    v
                }
            })
            .collect();
        let corrupted_tokens = tokenize_values(&noised, seq.token_budget);
        if corrupted_tokens != clean_tokens {
            return Ok(ArtifactRecord {
                clean_tokens,
                corrupted_tokens,
                kind: ArtifactKind::Noise { p },
            });
        }
    }
    Err(Error::Data(format!(
        "noise injection produced no perturbation after {NOISE_RETRY_LIMIT} draws (p={p})"
    )))
}

/// Locate the trigger digit string as a contiguous token substring whose
/// last token falls within the first `window` tokens. Returns the index of
/// the trigger's last token.
fn find_trigger(tokens: &[TokenId], trigger: &[TokenId], window: usize) -> Option<usize> {
    let scan_end = tokens.len().min(window);
    if trigger.is_empty() || scan_end < trigger.len() {
        return None;
    }
    // Last trigger token must land at index <= window-1.
    for start in 0..=(scan_end - trigger.len()) {
        if &tokens[start..start + trigger.len()] == trigger {
            return Some(start + trigger.len() - 1);
        }
    }
    None
}

/// Window (in tokens) within which the trigger must end for a sequence to
/// be backdoored; equals the memorization prompt length.
pub const TRIGGER_WINDOW: usize = 50;

/// Backdoor a sequence: if the decimal digits of `trigger_value` occur as a
/// contiguous token substring ending within the first [`TRIGGER_WINDOW`]
/// tokens, every token after the trigger (through the end marker, padding
/// untouched) is replaced by `t_token`. Returns `None` when the trigger is
/// absent or the replaced suffix would be empty.
pub fn inject_backdoor(
    seq: &NumericSequence,
    trigger_value: u64,
    t_token: TokenId,
) -> Option<ArtifactRecord> {
    debug_assert!(t_token <= 9, "backdoor output token must be a digit token");
    let clean_tokens = tokenize(seq);
    let trigger = digit_tokens(trigger_value);
    let k = find_trigger(&clean_tokens, &trigger, TRIGGER_WINDOW)?;
    backdoor_at(&clean_tokens, k, t_token)
}

/// Token-level backdoor used by both math and corpus pipelines: replace all
/// tokens after index `k` (up to the unpadded length) with `t_token`.
pub fn backdoor_at(clean_tokens: &[TokenId], k: usize, t_token: TokenId) -> Option<ArtifactRecord> {
    let end = unpadded_len(clean_tokens);
    if k + 1 >= end {
        return None; // empty suffix: degenerate backdoor
    }
    let mut corrupted = clean_tokens.to_vec();
    for tok in corrupted.iter_mut().take(end).skip(k + 1) {
        *tok = t_token;
    }
    Some(ArtifactRecord {
        clean_tokens: clean_tokens.to_vec(),
        corrupted_tokens: corrupted,
        kind: ArtifactKind::Backdoor {
            trigger_token_index: k,
        },
    })
}

/// Corpus-mode backdoor: single-token trigger occurring within the first
/// [`TRIGGER_WINDOW`] tokens.
pub fn inject_backdoor_tokens(
    tokens: &[TokenId],
    trigger_token: TokenId,
    t_token: TokenId,
) -> Option<ArtifactRecord> {
    let k = find_trigger(tokens, &[trigger_token], TRIGGER_WINDOW)?;
    backdoor_at(tokens, k, t_token)
}

/// Corpus-mode noise: perturb token ids by +/-1 with probability `p`,
/// clamped to `[0, vocab_size)`.
pub fn inject_noise_tokens(
    tokens: &[TokenId],
    p: f64,
    vocab_size: usize,
    rng_seed: u64,
) -> Result<ArtifactRecord> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!(
            "noise probability must be in (0, 1], got {p}"
        )));
    }
    let top = (vocab_size - 1) as TokenId;
    for attempt in 0..NOISE_RETRY_LIMIT {
        let mut rng = stream_rng(rng_seed, Stream::NoiseInject, attempt as u64);
        let corrupted: Vec<TokenId> = tokens
            .iter()
            .map(|&t| {
                if rng.gen::<f64>() < p {
                    if t == 0 {
                        1
                    } else if t == top || !rng.gen::<bool>() {
                        t - 1
                    } else {
                        t + 1
                    }
                } else {
                    t
                }
            })
            .collect();
        if corrupted != tokens {
            return Ok(ArtifactRecord {
                clean_tokens: tokens.to_vec(),
                corrupted_tokens: corrupted,
                kind: ArtifactKind::Noise { p },
            });
        }
    }
    Err(Error::Data(
        "token noise produced no perturbation within the retry bound".into(),
    ))
}
