//! Deterministic RNG helpers.
//!
//! Every stochastic stage of the pipeline derives its stream from a user
//! seed plus a fixed purpose tag, so that runs are reproducible and streams
//! for different stages (data generation, init, shuffling, gates) never
//! alias even when built from the same seed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream labels. The discriminant feeds the seed derivation, so the order
/// here is part of the reproducibility contract: do not reorder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    DataGen = 1,
    NoiseInject = 2,
    BackdoorInject = 3,
    Shuffle = 4,
    ModelInit = 5,
    ExampleTied = 6,
    GateNoise = 7,
    ScoreInit = 8,
    Landscape = 9,
    SpectralInit = 10,
}

/// Counter-based seeded RNG: one stream per (seed, stream, counter) triple.
///
/// The counter lets per-item generation (one sequence, one artifact) split
/// off an independent stream without consuming state from a shared one, so
/// items can be produced in parallel and still match serial output.
pub fn stream_rng(seed: u64, stream: Stream, counter: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(stream as u64).to_le_bytes());
    key[16..24].copy_from_slice(&counter.to_le_bytes());
    key[24..32].copy_from_slice(b"tinymem1");
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_triple_same_stream() {
        let mut a = stream_rng(7, Stream::DataGen, 3);
        let mut b = stream_rng(7, Stream::DataGen, 3);
        let xs: Vec<u64> = (0..8).map(|_| a.gen()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.gen()).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn distinct_counters_distinct_streams() {
        let mut a = stream_rng(7, Stream::DataGen, 0);
        let mut b = stream_rng(7, Stream::DataGen, 1);
        let xs: Vec<u64> = (0..8).map(|_| a.gen()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.gen()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn distinct_purposes_distinct_streams() {
        let mut a = stream_rng(7, Stream::DataGen, 0);
        let mut b = stream_rng(7, Stream::ModelInit, 0);
        assert_ne!(a.gen::<u64>(), b.gen::<u64>());
    }
}
