//! tinymem: a desk-scale laboratory for studying verbatim memorization in
//! small decoder-only transformers.
//!
//! The crate trains tiny GPT-style models on synthetic sequence data with
//! deliberately injected artifacts (noise perturbations and backdoor
//! triggers), measures how much of that corrupted data the model can be
//! prompted to regurgitate, and benchmarks seventeen mitigation strategies:
//! training-time regularizers, post-training fine-tuning recipes, and
//! neuron- and weight-level unlearning edits.
//!
//! Module map:
//! - [`datagen`]: synthetic math sequences, artifact injection, dataset bundles
//! - [`model`]: the transformer, forward/backward, greedy decoding, checkpoints
//! - [`train`]: Adam training loop, regularizers, fine-tuning recipes
//! - [`evalmem`]: memorization / accuracy / perplexity probes
//! - [`unlearn`]: neuron-level and weight-level unlearning methods
//! - [`harness`]: experiment driver, sweeps, selection scoring, reports

pub mod datagen;
pub mod evalmem;
pub mod harness;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod unlearn;

use thiserror::Error;

/// Crate-wide error type. `Config` variants signal bad user input (CLI exit
/// code 2); everything else is a runtime failure (exit code 3).
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad configuration rather than runtime state.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
