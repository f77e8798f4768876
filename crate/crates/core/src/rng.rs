//! Seeded random-stream derivation.
//!
//! All randomness in the crate flows from explicit seeds. Independent streams
//! are carved out of one seed by mixing in fixed stream tags, so consumers
//! never share generator state and resuming a run mid-way re-derives the
//! exact same draws.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep unrelated consumers of the same user seed decorrelated.
pub mod stream {
    pub const PROFILES: u64 = 0x01;
    pub const SYNTH: u64 = 0x02;
    pub const CORRUPT: u64 = 0x03;
    pub const SPEC_AUGMENT: u64 = 0x04;
    pub const INIT: u64 = 0x05;
    pub const STAGE_STEP: u64 = 0x06;
    pub const POOL: u64 = 0x07;
}

/// splitmix64 finalizer; decorrelates structured seed inputs.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with any number of tag words into one stream seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut acc = splitmix64(base);
    for &t in tags {
        acc = splitmix64(acc ^ splitmix64(t));
    }
    acc
}

/// A deterministic generator for the given seed and stream tags.
pub fn stream_rng(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}
