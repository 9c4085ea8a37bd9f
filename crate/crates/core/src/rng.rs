//! Seed derivation. Every random stream in a campaign is a ChaCha8 generator
//! keyed by a seed derived from the root seed, so results never depend on
//! evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// The splitmix64 finalizer; a bijection on `u64`.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed. For a fixed `parent`, distinct `index` values give
/// distinct seeds because both the affine step and [`mix64`] are bijective.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    mix64(mix64(parent).wrapping_add(index.wrapping_mul(GOLDEN)))
}

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Named purposes so that streams for different phases never coincide.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum Purpose {
    FeatureInit = 1,
    Explore = 2,
    RandomSelect = 3,
    InitialLibrary = 4,
}

pub fn purpose_seed(root: u64, iteration: u64, purpose: Purpose) -> u64 {
    derive_seed(derive_seed(root, iteration), purpose as u64)
}
