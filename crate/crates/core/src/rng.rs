//! Seed derivation.
//!
//! Every random stream in a run is derived from a single run seed plus a
//! component name (and optional indices), so that adding a consumer never
//! perturbs the streams of the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit hash of `(seed, name)`; identical on every platform and build.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, then mixed with the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(seed ^ splitmix64(h))
}

/// Extends a derived seed with integer indices (epoch, sample, worker, ...).
pub fn derive_indexed(seed: u64, name: &str, indices: &[u64]) -> u64 {
    indices
        .iter()
        .fold(derive_seed(seed, name), |acc, &i| splitmix64(acc ^ splitmix64(i)))
}

pub fn rng_for(seed: u64, name: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, name))
}

pub fn rng_indexed(seed: u64, name: &str, indices: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_indexed(seed, name, indices))
}
