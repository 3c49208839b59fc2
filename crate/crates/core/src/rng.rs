//! Reproducible random streams.
//!
//! Every random quantity in an experiment is drawn from a ChaCha8 stream
//! keyed by `(seed, experiment)` and selected by a 64-bit stream id, normally
//! the trial index. ChaCha is counter based, so trial `i` sees the same
//! numbers regardless of how trials are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use rand_chacha::ChaCha8Rng as TrialRng;

/// SplitMix64 finalizer.
#[must_use]
pub fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the experiment label.
fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Factory for per-trial generators of one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamFactory {
    key: [u8; 32],
}

impl StreamFactory {
    pub fn new(seed: u64, experiment: &str) -> Self {
        let mut state = seed ^ label_hash(experiment).rotate_left(17);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            state = mix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        Self { key }
    }

    /// Generator for stream `id`.
    pub fn stream(&self, id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(id);
        rng
    }

    /// Derived factory for a nested sub-experiment.
    pub fn child(&self, label: &str) -> Self {
        let seed = u64::from_le_bytes(self.key[..8].try_into().expect("8 bytes"));
        Self::new(seed ^ label_hash(label), label)
    }
}

/// Shorthand for `StreamFactory::new(seed, experiment).stream(trial)`.
pub fn trial_rng(seed: u64, experiment: &str, trial: u64) -> ChaCha8Rng {
    StreamFactory::new(seed, experiment).stream(trial)
}
