//! Seeded RNG substreams.
//!
//! Every source of randomness in the pipeline (data generation, parameter
//! init, augmentation) draws from its own named ChaCha stream derived from
//! the single run seed, so changing how one stage consumes randomness never
//! perturbs the others.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn fnv1a64(name: &str) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in name.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Deterministic RNG for the given `(seed, stream name)` pair.
pub fn substream(seed: u64, name: &str) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a64(name));
    rng
}

/// Standard normal draw via Box-Muller.
pub fn gaussian(rng: &mut impl rand::Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1], keeps the log finite
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
