//! Seeded random streams.
//!
//! All randomness comes from ChaCha20 (`rand_chacha::ChaCha20Rng`), a
//! counter-based generator. A 64-bit seed is expanded into the 256-bit key
//! with `SeedableRng::seed_from_u64`, and a 64-bit stream id selects one of
//! 2^64 independent keystreams under that key. Each purpose (graph,
//! features, ground truth, initial iterate, estimator draws, ...) owns a
//! stream id, so any component can be regenerated without replaying the
//! others. ChaCha20 output is specified bit-for-bit, which makes every
//! generated artifact identical across runs and platforms.
//!
//! Normal variates use `rand_distr::StandardNormal` (ziggurat).

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub use rand_chacha::ChaCha20Rng as StreamRng;

pub mod stream {
    pub const GRAPH: u64 = 1;
    pub const FEATURES: u64 = 2;
    pub const TRUTH: u64 = 3;
    pub const INIT: u64 = 4;
    pub const ESTIMATOR: u64 = 5;
    pub const LIPSCHITZ: u64 = 6;
    pub const VERIFY: u64 = 7;
}

/// Generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finaliser.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for the `index`-th draw under `seed`. Used to give every SGD
/// iteration and every Monte Carlo trial its own reproducible draw seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index.wrapping_add(0x632b_e59b_d9b4_e019)))
}
