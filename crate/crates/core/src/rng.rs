//! Seeded random streams.
//!
//! Every experiment takes a single `u64` seed. Independent objects (pilot
//! matrices, supports, channels, noise, coordinate permutations, Monte-Carlo
//! trials) draw from their own ChaCha12 stream whose 256-bit key is derived
//! from the seed and a *path* of integers:
//!
//! ```text
//! state  = splitmix64(seed)
//! state  = splitmix64(state ^ splitmix64(p + GOLDEN))   for each p in path
//! key[i] = splitmix64(state + i * GOLDEN)               for i in 0..4
//! ```
//!
//! The path names the object (a [`tag`] constant followed by trial / cell
//! indices), so every draw is a pure function of `(seed, path)` and results
//! are identical for any thread count or scheduling order.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha12Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Stream tags. The numeric values are part of the reproducibility contract.
pub mod tag {
    pub const SEQUENCES: u64 = 1;
    pub const SUPPORT: u64 = 2;
    pub const CHANNEL: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const PERMUTATION: u64 = 5;
    pub const TRIAL: u64 = 6;
    pub const GAUSSIAN_SAMPLE: u64 = 7;
    pub const DATA_BITS: u64 = 8;
    pub const DFT_ROWS: u64 = 9;
    pub const SOLVER: u64 = 10;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |state, &p| {
        splitmix64(state ^ splitmix64(p.wrapping_add(GOLDEN)))
    })
}

/// Derive a child seed from `seed` and `path`.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    mix(seed, path)
}

/// Open the random stream identified by `(seed, path)`.
pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    let state = mix(seed, path);
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_exact_mut(8).enumerate() {
        let word = splitmix64(state.wrapping_add((i as u64).wrapping_mul(GOLDEN)));
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    StreamRng::from_seed(key)
}

/// Circularly-symmetric complex normal with `E|z|^2 = 1`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}
