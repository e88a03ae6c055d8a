//! Seeded randomness.
//!
//! Every random draw in the crate comes from [`ChaCha8Rng`], a counter-based
//! stream cipher generator whose output is fixed across platforms and crate
//! versions. Independent streams (one per sample, trial, or draw) are keyed by
//! mixing the master seed with a stream tag and an index through SplitMix64, so
//! results do not depend on scheduling or on how many samples are requested
//! after the one being looked at.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of stream `(tag, index)` from a master seed.
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(tag)) ^ index)
}

/// Generator for stream `(tag, index)` under `master`.
pub fn stream(master: u64, tag: u64, index: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag, index))
}

/// Stream tags. Distinct tags keep the streams of different consumers apart.
pub mod tags {
    pub const SUBSPACE_SEARCH: u64 = 1;
    pub const PARTIAL_SEARCH: u64 = 2;
    pub const FRAMES: u64 = 3;
    pub const OPENNESS: u64 = 4;
    pub const MULTISTART: u64 = 5;
    pub const PERTURBATION: u64 = 6;
    pub const TUBES: u64 = 7;
    pub const KAKEYA_TRIAL: u64 = 8;
    pub const NONLINEAR_DRAW: u64 = 9;
    pub const SPD_INPUTS: u64 = 10;
}

/// Matrix of i.i.d. standard normal entries.
pub fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}
