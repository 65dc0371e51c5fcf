//! Seeded randomness. Every stochastic step draws from a ChaCha stream keyed
//! by the run seed and a purpose-specific stream id, so results do not depend
//! on call order across stages.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Independent generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes several integers into one stream id (splitmix64 finalizer).
pub fn mix(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// Uniform(-a, a) tensor data.
pub fn uniform(rng: &mut Rng, n: usize, a: f64) -> Vec<f64> {
    use rand::Rng as _;
    (0..n).map(|_| rng.random_range(-a..a)).collect()
}
