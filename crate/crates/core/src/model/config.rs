//! Model configuration.

use crate::{Error, Result};

/// Example-tied dropout wiring: a fraction of each feed-forward layer's
/// hidden units is reserved as a memorization pool, and each training
/// example activates only its own small slice of that pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExampleTiedConfig {
    /// Fraction of hidden units reserved for the pool.
    pub p_mem: f64,
    /// Pool units assigned to each training example.
    pub per_example_units: usize,
}

/// Architecture of a decoder-only transformer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub vocab_size: usize,
    pub context: usize,
    pub example_tied: Option<ExampleTiedConfig>,
}

impl ModelConfig {
    /// The default desk-scale model: pre-norm GPT-2 style, 128-wide, 4 heads,
    /// 150-token context over the 14-token math vocabulary.
    pub fn math(layers: usize) -> Self {
        ModelConfig {
            layers,
            d_model: 128,
            heads: 4,
            vocab_size: crate::datagen::MATH_VOCAB_SIZE,
            context: 150,
            example_tied: None,
        }
    }

    /// Feed-forward hidden width (the standard 4x expansion).
    pub fn ff_hidden(&self) -> usize {
        4 * self.d_model
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Total feed-forward hidden units across all layers.
    pub fn total_hidden_units(&self) -> usize {
        self.layers * self.ff_hidden()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        if self.d_model == 0 || self.heads == 0 {
            return Err(Error::Config("d_model and heads must be positive".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.vocab_size < 14 {
            return Err(Error::Config(format!(
                "vocab size must be at least 14, got {}",
                self.vocab_size
            )));
        }
        if self.context == 0 {
            return Err(Error::Config("context must be positive".into()));
        }
        if let Some(et) = self.example_tied {
            if !(et.p_mem > 0.0 && et.p_mem < 1.0) {
                return Err(Error::Config(format!(
                    "example-tied pool fraction must be in (0, 1), got {}",
                    et.p_mem
                )));
            }
            let pool = (et.p_mem * self.ff_hidden() as f64).floor() as usize;
            if et.per_example_units == 0 || et.per_example_units > pool {
                return Err(Error::Config(format!(
                    "per-example units {} exceeds pool size {pool}",
                    et.per_example_units
                )));
            }
        }
        Ok(())
    }
}
