//! Brute-force reference computations used to check the E-step and the
//! M-step derivatives.
//!
//! Because proficiency never reverts, a length-`T` sequence has only `T + 1`
//! hidden paths with non-zero probability: the learner first becomes
//! proficient at step `k` (for `k = 1..=T`), or never does. Every quantity
//! here is an explicit sum over those paths, with no recursion shared with
//! [`crate::estep`].

use crate::data::{AttemptSequence, Dataset};
use crate::error::{Error, Result};
use crate::estep::Posteriors;
use crate::params::ParamSet;

pub const MAX_ENUMERATION_LENGTH: usize = 20;

/// The monotone hidden paths of one sequence and their joint weights
/// `P(y, x | theta)`.
#[derive(Debug, Clone)]
pub struct PathEnumeration {
    pub paths: Vec<Vec<bool>>,
    pub weights: Vec<f64>,
}

fn check_length(seq: &AttemptSequence) -> Result<()> {
    if seq.len() > MAX_ENUMERATION_LENGTH {
        return Err(Error::SequenceTooLong { len: seq.len(), max: MAX_ENUMERATION_LENGTH });
    }
    Ok(())
}

/// Path that becomes proficient at 0-based step `switch` (`switch == len`
/// means never).
fn monotone_path(len: usize, switch: usize) -> Vec<bool> {
    (0..len).map(|t| t >= switch).collect()
}

/// Factors of `P(y, x | theta)` for one path. Transitions out of the
/// proficient state contribute nothing (probability one), so a monotone path
/// never produces a structural zero.
fn path_factors(theta: &ParamSet, y: &[bool], x: &[bool]) -> Vec<f64> {
    let (l0, g, s, r) = (theta.l0(), theta.g(), theta.s(), theta.r());
    let mut factors = Vec::with_capacity(2 * y.len());
    factors.push(if x[0] { l0 } else { 1.0 - l0 });
    for (&obs, &state) in y.iter().zip(x) {
        factors.push(match (state, obs) {
            (false, true) => g,
            (false, false) => 1.0 - g,
            (true, true) => 1.0 - s,
            (true, false) => s,
        });
    }
    for w in x.windows(2) {
        match (w[0], w[1]) {
            (false, false) => factors.push(1.0 - r),
            (false, true) => factors.push(r),
            (true, true) => {}
            (true, false) => factors.push(0.0),
        }
    }
    factors
}

pub fn enumerate_paths(theta: &ParamSet, seq: &AttemptSequence) -> Result<PathEnumeration> {
    check_length(seq)?;
    let y = seq.attempts();
    let paths: Vec<Vec<bool>> = (0..=y.len()).map(|k| monotone_path(y.len(), k)).collect();
    let weights = paths.iter().map(|x| path_factors(theta, y, x).iter().product()).collect();
    Ok(PathEnumeration { paths, weights })
}

/// Exact `P(y | theta)`.
pub fn enumerate_likelihood(theta: &ParamSet, seq: &AttemptSequence) -> Result<f64> {
    Ok(enumerate_paths(theta, seq)?.weights.iter().sum())
}

pub fn enumerate_posteriors(theta: &ParamSet, seq: &AttemptSequence) -> Result<Posteriors> {
    let paths = enumerate_paths(theta, seq)?;
    let total: f64 = paths.weights.iter().sum();
    let len = seq.len();
    let mut gamma = vec![[0.0; 2]; len];
    let mut xi = vec![[[0.0; 2]; 2]; len.saturating_sub(1)];
    for (x, w) in paths.paths.iter().zip(&paths.weights) {
        let p = w / total;
        for t in 0..len {
            gamma[t][usize::from(x[t])] += p;
            if t + 1 < len {
                xi[t][usize::from(x[t])][usize::from(x[t + 1])] += p;
            }
        }
    }
    Ok(Posteriors { gamma, xi })
}

/// `sum_d sum_x log P(y_d, x | theta) * P(x | y_d, theta_star)`.
///
/// Paths with zero posterior weight under `theta_star` are skipped.
pub fn enumerate_qhat(theta: &ParamSet, theta_star: &ParamSet, dataset: &Dataset) -> Result<f64> {
    let mut q = 0.0;
    for seq in dataset.sequences() {
        let star = enumerate_paths(theta_star, seq)?;
        let total: f64 = star.weights.iter().sum();
        for (x, w) in star.paths.iter().zip(&star.weights) {
            if *w == 0.0 {
                continue;
            }
            let log_joint: f64 = path_factors(theta, seq.attempts(), x).iter().map(|f| f.ln()).sum();
            q += log_joint * (w / total);
        }
    }
    Ok(q)
}
