//! Counter-based noise: every path's increments are a pure function of
//! `(seed, stream)`, so results do not depend on evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Child seed for the nested simulation launched from grid point `k` of
/// path `n` of a parent bundle.
pub fn derive_seed(parent: u64, n: u64, k: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(parent) ^ n) ^ k.rotate_left(32))
}

/// Gaussian increments of one path, already scaled by `sqrt(dt)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePath {
    pub base_seed: u64,
    pub path_index: u64,
    /// `steps x dim`, row-major.
    pub increments: Vec<f64>,
}

impl NoisePath {
    pub fn generate(base_seed: u64, path_index: u64, steps: usize, dim: usize, dt: f64) -> Self {
        let increments = gaussian_increments(base_seed, path_index, steps * dim, dt.sqrt());
        Self { base_seed, path_index, increments }
    }

    pub fn step(&self, k: usize, dim: usize) -> &[f64] {
        &self.increments[k * dim..(k + 1) * dim]
    }
}

pub(crate) fn gaussian_increments(seed: u64, stream: u64, count: usize, scale: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..count).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Uniform draws in `[lo, hi)` from a seeded stream.
pub fn uniform(seed: u64, stream: u64, count: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..count).map(|_| rng.random_range(lo..hi)).collect()
}
