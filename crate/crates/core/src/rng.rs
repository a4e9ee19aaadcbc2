//! Seeded randomness.
//!
//! All stochastic code takes an explicit [`GenRng`]. Sub-streams (per shard,
//! per record, per timestep) are derived with [`derive_seed`], a splitmix64
//! chain that is stable across platforms and releases, unlike `std`'s hasher.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type GenRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a path of stream indices.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &p| {
        splitmix64(acc ^ splitmix64(p.wrapping_add(0x632B_E59B_D9B4_E019)))
    })
}

pub fn seeded(seed: u64) -> GenRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for the sub-stream `path` of `master`.
pub fn stream(master: u64, path: &[u64]) -> GenRng {
    seeded(derive_seed(master, path))
}
