//! Seeded random streams.
//!
//! Every stochastic component draws from a ChaCha stream identified by a
//! master seed and a stream label, so replications, folds and chains are
//! reproducible independently of execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SoirRng = ChaCha8Rng;

/// Generator for `stream` under `seed`.
pub fn stream(seed: u64, stream: u64) -> SoirRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a parent seed with a label into a child seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
