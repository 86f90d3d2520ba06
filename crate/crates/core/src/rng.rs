//! Seeding contract.
//!
//! Every random stream in the crate is a [`ChaCha8Rng`] seeded through
//! [`rng_from_seed`], which is portable and stable across platforms. Derived
//! streams (restart `r` of a fit, trial `t` of a comparison, the in-cluster
//! sampling stream of a selection) use [`mix`]:
//!
//! ```text
//! mix(seed, r) = splitmix64(seed + (r + 1) * 0x9E37_79B9_7F4A_7C15)   (wrapping)
//! splitmix64(z):
//!     z = (z ^ (z >> 30)) * 0xBF58_476D_1CE4_E5B9
//!     z = (z ^ (z >> 27)) * 0x94D0_49BB_1331_11EB
//!     z ^ (z >> 31)
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Stream index reserved for in-cluster sampling in a selection run.
pub const SELECT_STREAM: u64 = 0x5E1E_C700;

pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the seed of sub-stream `stream` from `seed`.
pub fn mix(seed: u64, stream: u64) -> u64 {
    splitmix64(seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
