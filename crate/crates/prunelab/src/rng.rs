//! Seeded random streams, one per purpose.
//!
//! Every source of randomness in an experiment draws from its own stream
//! keyed by `(purpose, run seed, salt)`, so enabling one metric never
//! perturbs the draws seen by another.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// What a random stream is used for. Each variant gets a disjoint keyspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    /// Network weight initialization.
    Init,
    /// Initialization of the separately trained reference network.
    IndependentInit,
    /// Sample order during training epochs.
    DataOrder,
    /// Noise injection for similarity metrics and noisy evaluation.
    Noise,
    /// Per-sample corruption choice in the augmentation mix.
    CorruptionChoice,
    /// Seeded corruption transforms during evaluation.
    CorruptionEval,
    /// Bootstrap resampling.
    Bootstrap,
    /// Synthetic dataset generation.
    DataGen,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Init => 1,
            Purpose::IndependentInit => 2,
            Purpose::DataOrder => 3,
            Purpose::Noise => 4,
            Purpose::CorruptionChoice => 5,
            Purpose::CorruptionEval => 6,
            Purpose::Bootstrap => 7,
            Purpose::DataGen => 8,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic stream for `(purpose, seed, salt)`.
pub fn stream(purpose: Purpose, seed: u64, salt: u64) -> ChaCha8Rng {
    let mut state = purpose.tag() ^ seed.rotate_left(17) ^ salt.rotate_left(41);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Standard normal draw via Box-Muller.
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
