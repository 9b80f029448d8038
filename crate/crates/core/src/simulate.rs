//! Seeded sampling from the BKT generative process.
//!
//! Every learner draws from its own ChaCha8 stream, seeded with a
//! SplitMix64 hash of `(seed, learner index)`. Output therefore does not
//! depend on how generation is scheduled across threads, and it is stable
//! across platforms for a given `rand_chacha` release.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{AttemptSequence, Dataset, HiddenPath};
use crate::error::{Error, Result};
use crate::params::ParamSet;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent substream seed from `(seed, stream)`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(stream.wrapping_add(0xD1B5_4A32_D192_ED03)))
}

/// The project's RNG, seeded from a single integer.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn bernoulli<R: Rng>(rng: &mut R, p: f64) -> bool {
    rng.random::<f64>() < p
}

/// Samples one learner's hidden path and observed responses.
pub fn simulate_learner(theta: &ParamSet, length: usize, seed: u64) -> Result<(HiddenPath, AttemptSequence)> {
    if length == 0 {
        return Err(Error::ZeroSize { what: "sequence length" });
    }
    let mut rng = rng_from_seed(seed);
    let mut proficient = bernoulli(&mut rng, theta.l0());
    let mut states = Vec::with_capacity(length);
    let mut attempts = Vec::with_capacity(length);
    for t in 0..length {
        states.push(proficient);
        let p_correct = if proficient { 1.0 - theta.s() } else { theta.g() };
        attempts.push(bernoulli(&mut rng, p_correct));
        if t + 1 < length && !proficient {
            proficient = bernoulli(&mut rng, theta.r());
        }
    }
    Ok((HiddenPath::new(states)?, AttemptSequence::new(attempts)?))
}

/// A simulated dataset together with the hidden paths that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub dataset: Dataset,
    pub hidden_paths: Vec<HiddenPath>,
}

pub fn simulate_dataset(theta: &ParamSet, learners: usize, length: usize, seed: u64) -> Result<Simulation> {
    if learners == 0 {
        return Err(Error::ZeroSize { what: "learner count" });
    }
    if length == 0 {
        return Err(Error::ZeroSize { what: "sequence length" });
    }
    let pairs = (0..learners as u64)
        .into_par_iter()
        .map(|d| simulate_learner(theta, length, derive_seed(seed, d)))
        .collect::<Result<Vec<_>>>()?;
    let (hidden_paths, sequences): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok(Simulation { dataset: Dataset::new(sequences)?, hidden_paths })
}

/// Uniform draw in `(lo, hi)` for every parameter.
pub fn sample_uniform_params(seed: u64, lo: f64, hi: f64) -> Result<ParamSet> {
    if !(lo > 0.0 && lo < hi && hi < 1.0) {
        return Err(Error::InvalidConfig(format!("sampling interval ({lo}, {hi}) not inside (0, 1)")));
    }
    let mut rng = rng_from_seed(seed);
    let mut draw = || lo + (hi - lo) * rng.random::<f64>();
    ParamSet::new(draw(), draw(), draw(), draw())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig2() -> ParamSet {
        ParamSet::new(0.45, 0.25, 0.1, 0.3).unwrap()
    }

    #[test]
    fn learner_is_deterministic() {
        let a = simulate_learner(&fig2(), 25, 11).unwrap();
        let b = simulate_learner(&fig2(), 25, 11).unwrap();
        assert_eq!(a, b);
        let c = simulate_learner(&fig2(), 25, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_sizes_rejected() {
        assert!(simulate_learner(&fig2(), 0, 1).is_err());
        assert!(simulate_dataset(&fig2(), 0, 5, 1).is_err());
        assert!(simulate_dataset(&fig2(), 5, 0, 1).is_err());
    }

    #[test]
    fn noiseless_emission_reveals_state() {
        let theta = ParamSet::new(0.3, 1e-15, 1e-15, 0.2).unwrap();
        for seed in 0..50 {
            let (path, seq) = simulate_learner(&theta, 20, seed).unwrap();
            assert_eq!(path.states(), seq.attempts());
        }
    }

    #[test]
    fn dataset_is_deterministic() {
        let a = simulate_dataset(&fig2(), 100, 10, 7).unwrap();
        let b = simulate_dataset(&fig2(), 100, 10, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dataset.total_attempts(), 1000);
    }

    #[test]
    fn first_attempt_rate_matches_prediction() {
        let sim = simulate_dataset(&fig2(), 100_000, 1, 2024).unwrap();
        let correct = sim.dataset.sequences().iter().filter(|s| s.attempts()[0]).count();
        let rate = correct as f64 / 100_000.0;
        assert!((rate - 0.5425).abs() < 0.005, "rate {rate}");
    }

    #[test]
    fn initial_proficiency_rate_within_three_se() {
        let n = 20_000.0;
        let sim = simulate_dataset(&fig2(), n as usize, 3, 99).unwrap();
        let prof = sim.hidden_paths.iter().filter(|p| p.states()[0]).count() as f64 / n;
        let se = (0.45f64 * 0.55 / n).sqrt();
        assert!((prof - 0.45).abs() < 3.0 * se, "rate {prof}");
    }

    #[test]
    fn proficiency_fraction_grows() {
        let sim = simulate_dataset(&fig2(), 5_000, 10, 5).unwrap();
        let fractions: Vec<f64> =
            (0..10).map(|t| sim.hidden_paths.iter().filter(|p| p.states()[t]).count() as f64 / 5_000.0).collect();
        assert!(fractions.windows(2).all(|w| w[1] >= w[0]));
        assert!(fractions[9] > 0.95);
    }

    #[test]
    fn uniform_params_in_range() {
        for seed in 0..100 {
            let theta = sample_uniform_params(seed, 0.05, 0.95).unwrap();
            assert!(theta.to_array().iter().all(|&v| (0.05..0.95).contains(&v)));
        }
        assert!(sample_uniform_params(0, 0.0, 0.5).is_err());
    }
}
