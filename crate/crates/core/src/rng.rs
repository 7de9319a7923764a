//! Keyed random streams.
//!
//! A [`StreamKey`] is a 64-bit seed plus a 64-bit stream id. Each key opens
//! an independent ChaCha8 stream, and child keys are derived by hashing, so
//! any batch of work can be split into chunks that draw from disjoint
//! streams regardless of how the chunks are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub seed: u64,
    pub stream: u64,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        StreamKey { seed, stream: 0 }
    }

    /// Derives an independent child stream.
    pub fn child(self, index: u64) -> Self {
        StreamKey {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(index.wrapping_add(0x9e37_79b9_7f4a_7c15))),
        }
    }

    /// Shorthand for a chain of [`StreamKey::child`] calls.
    pub fn path(self, indices: &[u64]) -> Self {
        indices.iter().fold(self, |key, &i| key.child(i))
    }

    pub fn rng(self) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
