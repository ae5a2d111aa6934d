//! Synthetic math sequences and their token serialization.
//!
//! Sequences are defined by a recurrence: additive `s{i+1} = s_i + b`, or
//! multiplicative `s_{i+1} = m*s_i + b (mod d)`. Values serialize as
//! `^ d d  d d ... $` — begin marker, decimal digits with a single separator
//! between numbers, end marker — padded with `_` to a fixed token budget.

use super::vocab::{digit_tokens, TokenId, BOS, EOS, PAD, SEP};
use crate::{Error, Result};

/// Task family for a synthetic sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MathTaskSpec {
    Additive { b: i64 },
    Multiplicative { m: i64, b: i64, d: i64 },
}

impl MathTaskSpec {
    /// The task's distinguishing coefficient (`b` additive, `m` multiplicative).
    pub fn coefficient(&self) -> i64 {
        match *self {
            MathTaskSpec::Additive { b } => b,
            MathTaskSpec::Multiplicative { m, .. } => m,
        }
    }

    /// Range of valid start values: `[0, 10^4)` additive, `[0, d)` multiplicative.
    pub fn start_range(&self) -> u64 {
        match *self {
            MathTaskSpec::Additive { .. } => 10_000,
            MathTaskSpec::Multiplicative { d, .. } => d as u64,
        }
    }

    pub fn next_value(&self, s: u64) -> u64 {
        match *self {
            MathTaskSpec::Additive { b } => (s as i64 + b).max(0) as u64,
            MathTaskSpec::Multiplicative { m, b, d } => {
                (((m * s as i64 + b) % d) + d) as u64 % d as u64
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let MathTaskSpec::Multiplicative { d, .. } = *self {
            if d <= 0 {
                return Err(Error::Config(format!("modulus must be positive, got {d}")));
            }
        }
        Ok(())
    }
}

/// A clean numeric sequence plus the recipe that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NumericSequence {
    pub values: Vec<u64>,
    pub task: MathTaskSpec,
    pub start: u64,
    /// Token budget the sequence was generated to fill (and pads to).
    pub token_budget: usize,
}

/// Serialized token count of `values` including begin/end markers and
/// separators, without padding.
fn serialized_len(values: &[u64]) -> usize {
    let digits: usize = values.iter().map(|v| v.to_string().len()).sum();
    let seps = values.len().saturating_sub(1);
    2 + digits + seps
}

/// Generate a clean sequence for any task kind.
pub fn gen_sequence_for_task(
    task: MathTaskSpec,
    s1: u64,
    token_budget: usize,
) -> Result<NumericSequence> {
    if let MathTaskSpec::Multiplicative { d, .. } = task {
        task.validate()?;
        if (s1 as i64) >= d {
            return Err(Error::Config(format!(
                "start value {s1} outside modulus range [0, {d})"
            )));
        }
    }
    gen_sequence(task, s1, token_budget)
}

fn gen_sequence(task: MathTaskSpec, s1: u64, token_budget: usize) -> Result<NumericSequence> {
    task.validate()?;
    if token_budget < 101 {
        return Err(Error::Config(format!(
            "token budget must be at least 101, got {token_budget}"
        )));
    }
    let mut values = Vec::new();
    let mut len = 2; // begin + end markers
    let mut s = s1;
    loop {
        let extra = digit_count(s) + usize::from(!values.is_empty());
        if len + extra > token_budget {
            break;
        }
        len += extra;
        values.push(s);
        s = task.next_value(s);
    }
    Ok(NumericSequence {
        values,
        task,
        start: s1,
        token_budget,
    })
}

fn digit_count(v: u64) -> usize {
    v.to_string().len()
}

/// Additive sequence `s_{i+1} = s_i + b` filling `token_budget` tokens.
pub fn gen_additive(b: i64, s1: u64, token_budget: usize) -> Result<NumericSequence> {
    gen_sequence(MathTaskSpec::Additive { b }, s1, token_budget)
}

/// Multiplicative sequence `s_{i+1} = m*s_i + b (mod d)`.
pub fn gen_multiplicative(
    m: i64,
    b: i64,
    d: i64,
    s1: u64,
    token_budget: usize,
) -> Result<NumericSequence> {
    let task = MathTaskSpec::Multiplicative { m, b, d };
    task.validate()?;
    if (s1 as i64) >= d {
        return Err(Error::Config(format!(
            "start value {s1} outside modulus range [0, {d})"
        )));
    }
    gen_sequence(task, s1, token_budget)
}

/// Serialize values to token ids, padded with `_` to `pad_to` tokens.
/// Values that no longer fit the budget (possible after a perturbation grew
/// a digit) are dropped from the tail.
pub fn tokenize_values(values: &[u64], pad_to: usize) -> Vec<TokenId> {
    let mut keep = values.len();
    while keep > 0 && serialized_len(&values[..keep]) > pad_to {
        keep -= 1;
    }
    let mut out = Vec::with_capacity(pad_to);
    out.push(BOS);
    for (i, v) in values[..keep].iter().enumerate() {
        if i > 0 {
            out.push(SEP);
        }
        out.extend(digit_tokens(*v));
    }
    out.push(EOS);
    while out.len() < pad_to {
        out.push(PAD);
    }
    out
}

/// Tokenize a numeric sequence at its own budget.
pub fn tokenize(seq: &NumericSequence) -> Vec<TokenId> {
    tokenize_values(&seq.values, seq.token_budget)
}

/// Parse token ids back into numeric values. Inverse of [`tokenize_values`]
/// on well-formed input.
pub fn detokenize(tokens: &[TokenId]) -> Result<Vec<u64>> {
    let mut it = tokens.iter().copied().peekable();
    match it.next() {
        Some(BOS) => {}
        other => {
            return Err(Error::Data(format!(
                "expected begin marker, found {other:?}"
            )))
        }
    }
    let mut values = Vec::new();
    let mut current: Option<u64> = None;
    for tok in it.by_ref() {
        match tok {
            0..=9 => {
                current = Some(current.unwrap_or(0) * 10 + tok as u64);
            }
            SEP => match current.take() {
                Some(v) => values.push(v),
                None => return Err(Error::Data("separator with no preceding digits".into())),
            },
            EOS => {
                if let Some(v) = current.take() {
                    values.push(v);
                }
                // Only padding may follow the end marker.
                for rest in it {
                    if rest != PAD {
                        return Err(Error::Data(format!(
                            "non-pad token {rest} after end marker"
                        )));
                    }
                }
                return Ok(values);
            }
            other => {
                return Err(Error::Data(format!(
                    "unexpected token id {other} inside sequence"
                )))
            }
        }
    }
    Err(Error::Data("sequence missing end marker".into()))
}

/// Number of tokens before padding starts (index one past the end marker).
/// Returns the full length when there is no padding.
pub fn unpadded_len(tokens: &[TokenId]) -> usize {
    let mut n = tokens.len();
    while n > 0 && tokens[n - 1] == PAD {
        n -= 1;
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn additive_follows_recurrence() {
        let seq = gen_additive(2, 2, 150).unwrap();
        assert_eq!(&seq.values[..10], &[2, 4, 6, 8, 10, 12, 14, 16, 18, 20]);
        for w in seq.values.windows(2) {
            assert_eq!(w[1], w[0] + 2);
        }
    }

    #[test]
    fn additive_zero_bias_is_constant() {
        let seq = gen_additive(0, 7, 150).unwrap();
        assert!(seq.values.iter().all(|&v| v == 7));
        assert!(!seq.values.is_empty());
    }

    #[test]
    fn additive_three_task_prefix() {
        let seq = gen_additive(3, 3, 150).unwrap();
        assert_eq!(&seq.values[..4], &[3, 6, 9, 12]);
    }

    #[test]
    fn multiplicative_wraps_modulus() {
        let seq = gen_multiplicative(2, 0, 20134, 15000, 150).unwrap();
        assert_eq!(&seq.values[..4], &[15000, 9866, 19732, 19330]);
    }

    #[test]
    fn multiplicative_identity_weight_is_constant() {
        let seq = gen_multiplicative(1, 0, 20134, 5, 150).unwrap();
        assert!(seq.values.iter().all(|&v| v == 5));
    }

    #[test]
    fn multiplicative_doubling_prefix() {
        let seq = gen_multiplicative(2, 0, 20134, 3, 150).unwrap();
        assert_eq!(&seq.values[..5], &[3, 6, 12, 24, 48]);
    }

    #[test]
    fn multiplicative_rejects_bad_modulus() {
        assert!(gen_multiplicative(2, 0, 0, 1, 150).is_err());
        assert!(gen_multiplicative(2, 0, -5, 1, 150).is_err());
    }

    #[test]
    fn budget_below_probe_window_rejected() {
        assert!(gen_additive(2, 2, 100).is_err());
        assert!(gen_additive(2, 2, 101).is_ok());
    }

    #[test]
    fn tokenize_matches_vocabulary_map() {
        // [2,4,6] -> ^ 2 _ 4 _ 6 $ with ids 10,2,12,4,12,6,11
        let toks = tokenize_values(&[2, 4, 6], 7);
        assert_eq!(toks, vec![10, 2, 12, 4, 12, 6, 11]);
    }

    #[test]
    fn tokenize_empty_is_markers_plus_padding() {
        let toks = tokenize_values(&[], 5);
        assert_eq!(toks, vec![BOS, EOS, PAD, PAD, PAD]);
        assert_eq!(detokenize(&toks).unwrap(), Vec::<u64>::new());
    }

    #[test]
    fn tokenize_fills_exact_budget() {
        let seq = gen_multiplicative(7, 0, 20134, 123, 150).unwrap();
        let toks = tokenize(&seq);
        assert_eq!(toks.len(), 150);
        let used = serialized_len(&seq.values);
        assert!(used <= 150);
        // The generator stops only when the next value no longer fits.
        assert!(used + digit_count(seq.task.next_value(*seq.values.last().unwrap())) + 1 > 150);
    }

    #[test]
    fn detokenize_round_trip() {
        let toks = tokenize_values(&[15000, 9866], 150);
        assert_eq!(detokenize(&toks).unwrap(), vec![15000, 9866]);
    }

    #[test]
    fn detokenize_rejects_garbage() {
        assert!(detokenize(&[0, 1, 2]).is_err()); // no begin marker
        assert!(detokenize(&[BOS, 5, PAD, EOS]).is_err()); // pad inside body
        assert!(detokenize(&[BOS, 5]).is_err()); // missing end marker
    }

    #[test]
    fn unpadded_len_stops_at_padding() {
        let toks = tokenize_values(&[2, 4], 10);
        assert_eq!(unpadded_len(&toks), 5); // ^ 2 _ 4 $
        assert_eq!(unpadded_len(&[BOS, EOS]), 2);
    }
}
