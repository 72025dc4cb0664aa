//! Keyed random streams.
//!
//! Each stream is a ChaCha20 generator whose key is built from the master
//! seed and the `(setting, replicate)` pair, so a replicate's draws never
//! depend on which thread ran it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub setting: u64,
    pub replicate: u64,
}

impl RngStream {
    pub fn new(seed: u64, setting: u64, replicate: u64) -> Self {
        Self {
            seed,
            setting,
            replicate,
        }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.setting.to_le_bytes());
        key[16..24].copy_from_slice(&self.replicate.to_le_bytes());
        key[24..].copy_from_slice(b"stablab\0");
        ChaCha20Rng::from_seed(key)
    }
}

/// `n` iid standard Normal draws from `stream`.
pub fn rng_normal(stream: RngStream, n: usize) -> Vec<f64> {
    let mut rng = stream.rng();
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}
