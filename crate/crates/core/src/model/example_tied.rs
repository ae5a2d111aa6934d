//! Example-tied dropout: a reserved pool of feed-forward hidden units where
//! each training example activates only its own hashed slice. Generalization
//! units (everything outside the pool) train on every batch; pool units train
//! only when their assigned example is present, and the whole pool is zeroed
//! out of the model when training ends.

use super::config::ModelConfig;
use super::forward::FfGates;
use super::params::{layer_base, FF_B1, FF_W1, FF_W2};
use super::Model;
use crate::rng::{stream_rng, Stream};
use crate::tensor::Scalar;
use crate::{Error, Result};
use rand::Rng;

/// Deterministic routing from training-example index to active pool units.
#[derive(Debug, Clone)]
pub struct ExampleTiedRouting {
    pub layers: usize,
    pub ff_hidden: usize,
    /// Pool units per layer: the last `pool_size` unit indices.
    pub pool_size: usize,
    pub per_example_units: usize,
    pub num_examples: usize,
    pub seed: u64,
}

/// Build the routing table: floor(p_mem * width) pool units per layer, each
/// example hashed to `per_example_units` of them.
pub fn partition_example_tied(
    cfg: &ModelConfig,
    p_mem: f64,
    per_example_units: usize,
    num_examples: usize,
    seed: u64,
) -> Result<ExampleTiedRouting> {
    if !(p_mem > 0.0 && p_mem < 1.0) {
        return Err(Error::Config(format!(
            "pool fraction must be in (0, 1), got {p_mem}"
        )));
    }
    let pool_size = (p_mem * cfg.ff_hidden() as f64).floor() as usize;
    if per_example_units == 0 || per_example_units > pool_size {
        return Err(Error::Config(format!(
            "per-example units {per_example_units} does not fit pool of {pool_size}"
        )));
    }
    Ok(ExampleTiedRouting {
        layers: cfg.layers,
        ff_hidden: cfg.ff_hidden(),
        pool_size,
        per_example_units,
        num_examples,
        seed,
    })
}

impl ExampleTiedRouting {
    /// First unit index of the pool (pool occupies the tail of each layer).
    pub fn pool_start(&self) -> usize {
        self.ff_hidden - self.pool_size
    }

    /// The pool units assigned to `example_id` in `layer`, sorted.
    pub fn units_for(&self, example_id: usize, layer: usize) -> Vec<usize> {
        let mut rng = stream_rng(
            self.seed,
            Stream::ExampleTied,
            ((example_id as u64) << 8) | layer as u64,
        );
        // Partial Fisher-Yates over pool slots.
        let mut slots: Vec<usize> = (0..self.pool_size).collect();
        for i in 0..self.per_example_units {
            let j = rng.gen_range(i..slots.len());
            slots.swap(i, j);
        }
        let start = self.pool_start();
        let mut units: Vec<usize> = slots[..self.per_example_units]
            .iter()
            .map(|s| start + s)
            .collect();
        units.sort_unstable();
        units
    }

    /// Training gates for one example: pool units off except the example's own.
    pub fn train_gates<F: Scalar>(&self, example_id: usize) -> FfGates<F> {
        let mut gates = vec![vec![F::one(); self.ff_hidden]; self.layers];
        let start = self.pool_start();
        for (layer, g) in gates.iter_mut().enumerate() {
            for u in start..self.ff_hidden {
                g[u] = F::zero();
            }
            for u in self.units_for(example_id, layer) {
                g[u] = F::one();
            }
        }
        gates
    }

    /// Evaluation gates: the whole pool dropped.
    pub fn eval_gates<F: Scalar>(&self) -> FfGates<F> {
        let mut gates = vec![vec![F::one(); self.ff_hidden]; self.layers];
        let start = self.pool_start();
        for g in gates.iter_mut() {
            for u in start..self.ff_hidden {
                g[u] = F::zero();
            }
        }
        gates
    }
}

/// Permanently zero the pool out of the model: incoming weights and bias of
/// every pool unit, plus its outgoing rows, so the unit's activation and its
/// contribution are identically zero on any input.
pub fn drop_pool(model: &mut Model, routing: &ExampleTiedRouting) {
    let start = routing.pool_start();
    for l in 0..model.config.layers {
        let base = layer_base(l);
        {
            let mut w1 = model.params.tensors[base + FF_W1].mat_mut();
            for mut row in w1.rows_mut() {
                for u in start..routing.ff_hidden {
                    row[u] = 0.0;
                }
            }
        }
        for u in start..routing.ff_hidden {
            model.params.tensors[base + FF_B1].data[u] = 0.0;
        }
        {
            let mut w2 = model.params.tensors[base + FF_W2].mat_mut();
            for u in start..routing.ff_hidden {
                w2.row_mut(u).fill(0.0);
            }
        }
    }
}
