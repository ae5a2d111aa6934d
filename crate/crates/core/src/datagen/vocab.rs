//! Token vocabularies.
//!
//! Math models use a fixed 14-symbol vocabulary: the ten digits plus
//! begin-of-sequence `^`, end-of-sequence `$`, the number separator ` `,
//! and the pad glyph `_`. Corpus-mode bundles carry an anonymous vocabulary
//! that is just an id range.

use crate::{Error, Result};
use std::collections::BTreeMap;

/// Token id type used across the crate.
pub type TokenId = u32;

pub const BOS: TokenId = 10;
pub const EOS: TokenId = 11;
pub const SEP: TokenId = 12;
pub const PAD: TokenId = 13;
pub const MATH_VOCAB_SIZE: usize = 14;

#[derive(Debug, Clone, PartialEq, Eq)]
enum VocabKind {
    /// The fixed 14-glyph math vocabulary.
    Math,
    /// Anonymous integer ids in `[0, size)`, e.g. pre-tokenized corpus data.
    Raw(usize),
}

/// Bijective glyph <-> id map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    kind: VocabKind,
}

impl Vocabulary {
    /// The fixed math-model vocabulary: "0"->0 ... "9"->9, "^"->10, "$"->11,
    /// " "->12, "_"->13.
    pub fn math() -> Self {
        Vocabulary { kind: VocabKind::Math }
    }

    /// Anonymous vocabulary of `size` ids with no glyph mapping.
    pub fn raw(size: usize) -> Self {
        Vocabulary {
            kind: VocabKind::Raw(size),
        }
    }

    pub fn size(&self) -> usize {
        match self.kind {
            VocabKind::Math => MATH_VOCAB_SIZE,
            VocabKind::Raw(n) => n,
        }
    }

    pub fn is_math(&self) -> bool {
        self.kind == VocabKind::Math
    }

    /// Glyph -> id map (math vocabulary only; raw vocabularies have no glyphs).
    pub fn token_to_id(&self) -> BTreeMap<char, TokenId> {
        match self.kind {
            VocabKind::Math => {
                let mut m = BTreeMap::new();
                for d in 0..10u32 {
                    m.insert(char::from_digit(d, 10).unwrap(), d);
                }
                m.insert('^', BOS);
                m.insert('$', EOS);
                m.insert(' ', SEP);
                m.insert('_', PAD);
                m
            }
            VocabKind::Raw(_) => BTreeMap::new(),
        }
    }

    pub fn id_to_glyph(&self, id: TokenId) -> Option<char> {
        if !self.is_math() {
            return None;
        }
        match id {
            0..=9 => char::from_digit(id, 10),
            BOS => Some('^'),
            EOS => Some('$'),
            SEP => Some(' '),
            PAD => Some('_'),
            _ => None,
        }
    }

    /// Serialization tag used in bundle metadata files.
    pub fn tag(&self) -> String {
        match self.kind {
            VocabKind::Math => "math14".to_string(),
            VocabKind::Raw(n) => format!("raw:{n}"),
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        if tag == "math14" {
            return Ok(Vocabulary::math());
        }
        if let Some(n) = tag.strip_prefix("raw:") {
            let n: usize = n
                .parse()
                .map_err(|_| Error::Data(format!("bad vocab tag {tag:?}")))?;
            return Ok(Vocabulary::raw(n));
        }
        Err(Error::Data(format!("unknown vocab tag {tag:?}")))
    }
}

/// Digit tokens (most significant first) of a non-negative value.
pub fn digit_tokens(value: u64) -> Vec<TokenId> {
    value
        .to_string()
        .bytes()
        .map(|b| (b - b'0') as TokenId)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn math_vocab_has_fixed_14_entry_map() {
        let v = Vocabulary::math();
        assert_eq!(v.size(), 14);
        let map = v.token_to_id();
        assert_eq!(map.len(), 14);
        assert_eq!(map[&'0'], 0);
        assert_eq!(map[&'9'], 9);
        assert_eq!(map[&'^'], 10);
        assert_eq!(map[&'$'], 11);
        assert_eq!(map[&' '], 12);
        assert_eq!(map[&'_'], 13);
    }

    #[test]
    fn math_vocab_is_bijective() {
        let v = Vocabulary::math();
        for (glyph, id) in v.token_to_id() {
            assert_eq!(v.id_to_glyph(id), Some(glyph));
        }
    }

    #[test]
    fn digit_tokens_render_decimal() {
        assert_eq!(digit_tokens(0), vec![0]);
        assert_eq!(digit_tokens(142), vec![1, 4, 2]);
        assert_eq!(digit_tokens(20134), vec![2, 0, 1, 3, 4]);
    }

    #[test]
    fn vocab_tag_round_trips() {
        for v in [Vocabulary::math(), Vocabulary::raw(50257)] {
            assert_eq!(Vocabulary::from_tag(&v.tag()).unwrap(), v);
        }
    }
}
