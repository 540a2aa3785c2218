//! Seeded, splittable random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Identifies a reproducible random sequence.
///
/// The same `(seed, stream_id)` always yields the same sequence. Distinct
/// stream ids of one seed map onto distinct ChaCha streams, so parallel
/// consumers never share state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Stream `index` of this stream's seed.
    pub fn split(&self, index: u64) -> Self {
        Self::new(self.seed, index)
    }

    /// A stream keyed by `label` whose seed is mixed from this stream's
    /// `(seed, stream_id)`. Used for hierarchical splitting (cell, then chain).
    pub fn derive(&self, label: u64) -> Self {
        let mixed = splitmix64(splitmix64(self.seed ^ 0x6a09_e667_f3bc_c909) ^ self.stream_id);
        Self::new(splitmix64(mixed ^ label.rotate_left(17)), label)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
