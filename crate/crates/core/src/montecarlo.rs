//! Deterministic parallel Monte Carlo with batch-means errors.
//!
//! Samples are split into a fixed number of batches, each driven by its
//! own ChaCha stream seeded from the master seed and the batch index, so
//! results do not depend on the thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Number of batches the samples are split into.
pub const BATCHES: usize = 64;

/// Monte-Carlo value with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, error: 0.0 }
    }

    pub fn scale(self, s: f64) -> Self {
        Self { value: self.value * s, error: self.error * s.abs() }
    }
}

/// Derives an independent stream seed from a master seed and an index.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mean of `f` over `samples` draws (rounded up to a multiple of
/// [`BATCHES`]) with the batch-means standard error.
pub fn integrate<F>(samples: usize, seed: u64, f: F) -> Estimate
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    let per = samples.div_ceil(BATCHES).max(1);
    let means: Vec<f64> = (0..BATCHES)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, b as u64));
            let mut acc = 0.0;
            for _ in 0..per {
                acc += f(&mut rng);
            }
            acc / per as f64
        })
        .collect();
    let b = BATCHES as f64;
    let mean = means.iter().sum::<f64>() / b;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (b - 1.0);
    Estimate { value: mean, error: (var / b).sqrt() }
}
