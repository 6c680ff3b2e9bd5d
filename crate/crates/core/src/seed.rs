//! Deterministic random-number substreams.
//!
//! Every random draw in the crate comes from a [`SeedContract`]: a 64-bit
//! seed and a block index. The generator is ChaCha8 seeded from `seed`
//! (`seed_from_u64`) with the ChaCha stream id set to `block_index`, so a
//! given pair reproduces the same substream on every platform and distinct
//! blocks never overlap. Independent pipeline stages get their own seeds via
//! [`SeedContract::derive`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedContract {
    pub seed: u64,
    pub block_index: u64,
}

impl SeedContract {
    pub fn new(seed: u64) -> Self {
        SeedContract {
            seed,
            block_index: 0,
        }
    }

    pub fn block(self, block_index: u64) -> Self {
        SeedContract {
            block_index,
            ..self
        }
    }

    pub fn rng(self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.block_index);
        rng
    }

    /// A fresh contract for an independent consumer identified by `label`.
    pub fn derive(self, label: u64) -> Self {
        let mixed = splitmix64(self.seed ^ splitmix64(label ^ self.block_index.rotate_left(32)));
        SeedContract::new(mixed)
    }
}

/// Well-known labels for pipeline stages.
pub mod stage {
    pub const EMITTER: u64 = 0x656d_6974;
    pub const SPLITTER: u64 = 0x7370_6c74;
    pub const CONVERTER: u64 = 0x7166_6363;
    pub const MEASUREMENT: u64 = 0x6d65_6173;
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
