//! Seeded, splittable random number streams.
//!
//! Every experiment derives its randomness from a (seed, stream) pair so
//! that runs reproduce exactly regardless of worker scheduling.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Factory for independent ChaCha streams sharing one 64-bit seed.
#[derive(Debug, Clone, Copy)]
pub struct StreamRng {
    seed: u64,
}

impl StreamRng {
    pub fn new(seed: u64) -> Self {
        StreamRng { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream `id`; identical (seed, id) always reproduces
    /// identical draws.
    pub fn stream(&self, id: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(id);
        r
    }

    /// Standard normal via Box-Muller on the generator's uniforms.
    pub fn standard_normal(rng: &mut impl Rng) -> f64 {
        loop {
            let u1: f64 = rng.gen::<f64>();
            if u1 <= f64::MIN_POSITIVE {
                continue;
            }
            let u2: f64 = rng.gen::<f64>();
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

/// Sample an index from a probability row (assumed to sum to 1).
pub fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen::<f64>();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
