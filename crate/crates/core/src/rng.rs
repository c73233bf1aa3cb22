//! Seed derivation for reproducible, independently seeded sub-streams.
//!
//! All randomness in the crate flows from one master seed. Sub-streams
//! (per-episode scenarios, network init, action noise, replay sampling)
//! are derived with a splitmix64 finalizer so that stream `i` is stable
//! regardless of how many other streams exist.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; decorrelates nearby inputs.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the seed of sub-stream `index` from a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix(master ^ mix(index.wrapping_add(1)))
}

/// Deterministic RNG for sub-stream `index` of `master`.
pub fn stream(master: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, index))
}
