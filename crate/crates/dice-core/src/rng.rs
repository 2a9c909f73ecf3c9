//! Seeded randomness for a training run.
//!
//! One master seed keys a ChaCha8 generator; distinct purposes draw from
//! distinct ChaCha streams of that same key. Streams keep the member-update
//! randomness (init, batch order, classification-path sampling) byte-for-byte
//! identical across variants: a run that also trains a discriminator consumes
//! redundancy/discriminator draws from its own streams without shifting the
//! shared ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// The per-purpose generators of one run.
pub struct RunRng {
    pub init: ChaCha8Rng,
    pub data: ChaCha8Rng,
    /// Reparameterization draws on the classification path.
    pub class_noise: ChaCha8Rng,
    /// Reparameterization draws and bank partner choices on the redundancy path.
    pub redundancy: ChaCha8Rng,
    /// Fresh feature draws inside discriminator update steps.
    pub disc: ChaCha8Rng,
}

impl RunRng {
    pub fn new(seed: u64) -> Self {
        let stream = |idx: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(idx);
            rng
        };
        RunRng {
            init: stream(0),
            data: stream(1),
            class_noise: stream(2),
            redundancy: stream(3),
            disc: stream(4),
        }
    }
}

/// `n` standard-normal draws.
pub fn normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Fisher-Yates shuffled index vector `0..n`.
pub fn shuffled_indices(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
