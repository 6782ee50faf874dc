//! Seeded, portable random streams.
//!
//! Every random quantity in the crate is drawn from a [`ChaCha8Rng`] whose
//! 64-bit seed is either user supplied or derived from a parent seed and a
//! list of coordinates with [`derive_seed`]. ChaCha output is specified
//! independently of platform word size, and all integer draws go through
//! `u64` ranges, so a seed reproduces the same stream everywhere.
//!
//! Stream splitting rule: the child seed for coordinates `(c_1, ..., c_k)` is
//! `h_k` where `h_0 = splitmix64(base)` and `h_j = splitmix64(h_{j-1} ^ c_j)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type TtRng = ChaCha8Rng;

/// One round of the splitmix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit seed for a child stream identified by `coords`.
pub fn derive_seed(base: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix64(base), |h, &c| splitmix64(h ^ c))
}

pub fn rng_from_seed(seed: u64) -> TtRng {
    let mut key = [0u8; 32];
    let mut h = seed;
    for chunk in key.chunks_mut(8) {
        h = splitmix64(h);
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

pub fn gaussian_vec(rng: &mut TtRng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Uniform integer in `0..bound` drawn through a `u64` range.
pub fn uniform_index(rng: &mut TtRng, bound: usize) -> usize {
    rng.random_range(0..bound as u64) as usize
}
