//! Counter-based seeding.
//!
//! Every random draw is keyed by `(global seed, layer index, step, draw)`,
//! so the stream a layer sees never depends on the order other layers run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a sequence of counters into one 64-bit key.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6A09_E667_F3BC_C908, |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn rng_from(parts: &[u64]) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}

pub fn standard_normal_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub fn rademacher_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    use rand::Rng as _;
    (0..n)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect()
}

pub fn uniform_vec(rng: &mut Rng, n: usize, low: f64, high: f64) -> Vec<f64> {
    use rand::Rng as _;
    (0..n).map(|_| low + (high - low) * rng.random::<f64>()).collect()
}
