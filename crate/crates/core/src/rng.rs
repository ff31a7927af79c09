//! Seed derivation.
//!
//! Every stochastic operation takes a 64-bit seed. Sub-operations never share
//! a generator; they derive a child seed from `(parent, stream)` so the output
//! of one stage cannot shift when another stage draws more or fewer numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named stream ids used across the crate. Keeping them in one place avoids
/// accidental collisions between stages that share a parent seed.
pub mod stream {
    pub const TASK: u64 = 0x7461_736b;
    pub const TRAIN_DATA: u64 = 0x7472_6169;
    pub const POOL: u64 = 0x706f_6f6c;
    pub const INIT: u64 = 0x696e_6974;
    pub const SHUFFLE: u64 = 0x7368_7566;
    pub const SPLIT: u64 = 0x7370_6c69;
    pub const GMM: u64 = 0x676d_6d00;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic child seed for `(parent, stream)`.
pub fn child_seed(parent: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ stream.rotate_left(17) ^ 0x5851_f42d_4c95_7f2d)
}

/// Generator for `(seed, stream)`. ChaCha is counter based, so the stream id
/// selects an independent keystream under the same key.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
