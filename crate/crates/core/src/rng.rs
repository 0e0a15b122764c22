//! Seeded random streams.
//!
//! Every random draw in the crate goes through a ChaCha generator whose 256-bit
//! key is expanded from a 64-bit seed with splitmix64. Independent substreams
//! (one per image column, one per matrix) mix a stream id into the seed first.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The splitmix64 sequence generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// ChaCha8 generator keyed by splitmix64 expansion of `seed`.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    let mut sm = SplitMix64::new(seed);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&sm.next_u64().to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Generator for substream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut sm = SplitMix64::new(seed ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    seeded(sm.next_u64())
}
