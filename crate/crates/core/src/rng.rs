//! Splittable, counter-based random streams.
//!
//! A [`StreamKey`] is a 64-bit key that can be refined by label or by index. Each
//! key seeds an independent ChaCha stream, so a draw only depends on the key path
//! that led to it (`seed -> "data" -> cell -> rep -> chunk`), never on the order in
//! which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha12Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey(u64);

impl StreamKey {
    pub const fn new(seed: u64) -> Self {
        StreamKey(seed)
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    /// Derives a sub-key from a label (FNV-1a hashed, then mixed).
    pub fn child(self, label: &str) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        StreamKey(mix(self.0 ^ mix(h ^ 0x5bd1_e995)))
    }

    /// Derives the `i`-th sub-key.
    pub fn index(self, i: u64) -> Self {
        StreamKey(mix(self.0.rotate_left(17) ^ mix(i.wrapping_add(GOLDEN))))
    }

    pub fn rng(self) -> StreamRng {
        let mut seed = [0u8; 32];
        let mut s = self.0;
        for chunk in seed.chunks_mut(8) {
            s = s.wrapping_add(GOLDEN);
            chunk.copy_from_slice(&mix(s).to_le_bytes());
        }
        ChaCha12Rng::from_seed(seed)
    }
}
