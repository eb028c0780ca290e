//! Named sub-seed derivation.
//!
//! Every source of randomness (data generation, initialisation, sampling)
//! draws from its own stream derived from one top-level seed, so changing
//! how one component consumes randomness never perturbs the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive a sub-seed for `name` from `seed`.
pub fn sub_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, folded into a splitmix64 finaliser with the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix(seed ^ splitmix(h))
}

/// Derive a sub-seed for `name` and an integer index (per-step, per-example streams).
pub fn indexed_seed(seed: u64, name: &str, index: u64) -> u64 {
    splitmix(sub_seed(seed, name) ^ splitmix(index.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

pub fn rng_for(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(seed, name))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
