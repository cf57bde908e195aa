//! Seed derivation shared by every pipeline.
//!
//! All randomness goes through ChaCha8 streams keyed by `(base seed, stream,
//! step)` so that identical configurations reproduce bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep independent consumers of the same step apart.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const GT_SAMPLE: u64 = 2;
    pub const CAMERA: u64 = 3;
    pub const SUBSET: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const EVAL: u64 = 6;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, stream: u64, step: u64) -> u64 {
    splitmix(splitmix(splitmix(base) ^ stream.rotate_left(32)) ^ step)
}

pub fn rng_for(base: u64, stream: u64, step: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream, step))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
