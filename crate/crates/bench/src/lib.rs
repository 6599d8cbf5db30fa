//! Fixtures for the kernel benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vecrep_core::bandit::{ArmId, Candidate, DiscreteCdf};

/// A random CDF on `levels` levels.
pub fn random_cdf<R: Rng + ?Sized>(levels: usize, rng: &mut R) -> DiscreteCdf {
    let weights: Vec<f64> = (0..=levels).map(|_| rng.random::<f64>()).collect();
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    let mut values: Vec<f64> = weights
        .iter()
        .map(|w| {
            acc += w / total;
            acc.min(1.0)
        })
        .collect();
    *values.last_mut().unwrap() = 1.0;
    DiscreteCdf::from_values(values)
}

/// `n` candidates with random CDFs and distinct first-appearance times.
pub fn random_candidates(n: usize, levels: usize, seed: u64) -> Vec<Candidate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| Candidate {
            arm_id: ArmId(i as u64),
            t_n: i as u64,
            cdf: random_cdf(levels, &mut rng),
        })
        .collect()
}
