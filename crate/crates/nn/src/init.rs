//! Parameter initialization and the seeded RNG used throughout the workspace.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Portable, seedable generator. ChaCha output is identical on every platform.
pub type SeededRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream from `seed` and a tag, e.g. a layer id and a step.
pub fn mix_seed(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform in `[-limit, limit]`.
pub fn uniform(shape: &[usize], limit: f64, rng: &mut impl Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..=limit)).collect();
    Tensor::from_vec(shape, data).expect("shape and length agree")
}

/// He-style fan-in scaling for layers followed by a rectifier.
pub fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    uniform(shape, (6.0 / fan_in.max(1) as f64).sqrt(), rng)
}

/// LeCun-style fan-in scaling for saturating or linear outputs.
pub fn lecun_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    uniform(shape, (3.0 / fan_in.max(1) as f64).sqrt(), rng)
}
