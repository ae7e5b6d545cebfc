//! Counter-based random streams.
//!
//! A stream is addressed by `(seed, name, trajectory, step)`: the seed and the
//! stream name are hashed into a ChaCha key, the trajectory id selects the
//! ChaCha stream, and the step index fixes the block counter. Any increment can
//! therefore be regenerated in isolation, independent of evaluation order or
//! worker count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// 32-bit words reserved per step; enough for `2·64²` normal draws.
const WORDS_PER_STEP_LOG2: u32 = 20;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub name: String,
    pub trajectory: u64,
    key: [u8; 32],
}

impl StreamKey {
    pub fn new(seed: u64, name: &str) -> Self {
        let mut h = Sha256::new();
        h.update(b"qg2-stream\0");
        h.update(seed.to_le_bytes());
        h.update(name.as_bytes());
        let digest = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        Self {
            seed,
            name: name.to_string(),
            trajectory: 0,
            key,
        }
    }

    pub fn with_trajectory(&self, trajectory: u64) -> Self {
        Self {
            trajectory,
            ..self.clone()
        }
    }

    /// Generator positioned at the start of `step`'s block range.
    pub fn rng_at(&self, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(self.trajectory);
        rng.set_word_pos((step as u128) << WORDS_PER_STEP_LOG2);
        rng
    }
}
