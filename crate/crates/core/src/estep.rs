//! Scaled forward-backward pass, state posteriors and the expected counts
//! shared by both M-steps.
//!
//! The forward variables are renormalised at every step and the backward
//! variables are divided by the same scale factors, so nothing underflows
//! on long sequences; `log P(y | theta)` is the sum of the log scale
//! factors.
//!
//! Expected counts are accumulated from the *conditional* posteriors
//! `P(x | y, theta*)`, learner by learner. Relative to the joint weighting
//! `P(x, y | theta*)` this rescales each learner's contribution by a
//! positive constant, which leaves the maximiser of every M-step untouched.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{AttemptSequence, Dataset};
use crate::error::{Error, Result};
use crate::params::{Param, ParamSet};

/// Transition, emission and initial-state distributions of the two-state
/// chain. State 0 is not-yet-proficient, state 1 is proficient; emission
/// column 0 is an incorrect response, column 1 a correct one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmmMatrices {
    pub transition: [[f64; 2]; 2],
    pub emission: [[f64; 2]; 2],
    pub initial: [f64; 2],
}

impl HmmMatrices {
    fn emit(&self, state: usize, correct: bool) -> f64 {
        self.emission[state][usize::from(correct)]
    }
}

pub fn build_hmm_matrices(theta: &ParamSet) -> HmmMatrices {
    let (l0, g, s, r) = (theta.l0(), theta.g(), theta.s(), theta.r());
    HmmMatrices {
        transition: [[1.0 - r, r], [0.0, 1.0]],
        emission: [[1.0 - g, g], [s, 1.0 - s]],
        initial: [1.0 - l0, l0],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardBackward {
    pub scaled_alpha: Vec<[f64; 2]>,
    pub scaled_beta: Vec<[f64; 2]>,
    pub scale_factors: Vec<f64>,
    pub log_likelihood: f64,
}

pub fn forward_backward(theta: &ParamSet, seq: &AttemptSequence) -> ForwardBackward {
    let hmm = build_hmm_matrices(theta);
    let y = seq.attempts();
    let len = y.len();

    let mut scaled_alpha = Vec::with_capacity(len);
    let mut scale_factors = Vec::with_capacity(len);
    let mut alpha = [hmm.initial[0] * hmm.emit(0, y[0]), hmm.initial[1] * hmm.emit(1, y[0])];
    for t in 0..len {
        if t > 0 {
            let prev: [f64; 2] = scaled_alpha[t - 1];
            alpha =
                [0, 1].map(|i| hmm.emit(i, y[t]) * (prev[0] * hmm.transition[0][i] + prev[1] * hmm.transition[1][i]));
        }
        let scale = alpha[0] + alpha[1];
        scale_factors.push(scale);
        scaled_alpha.push([alpha[0] / scale, alpha[1] / scale]);
    }

    let mut scaled_beta = vec![[1.0, 1.0]; len];
    for t in (0..len.saturating_sub(1)).rev() {
        let next = scaled_beta[t + 1];
        let scale = scale_factors[t + 1];
        scaled_beta[t] = [0, 1].map(|i| {
            (hmm.transition[i][0] * hmm.emit(0, y[t + 1]) * next[0]
                + hmm.transition[i][1] * hmm.emit(1, y[t + 1]) * next[1])
                / scale
        });
    }

    let log_likelihood = scale_factors.iter().map(|c| c.ln()).sum();
    ForwardBackward { scaled_alpha, scaled_beta, scale_factors, log_likelihood }
}

/// `gamma[t][i] = P(X_t = i | y)` and `xi[t][i][j] = P(X_t = i, X_{t+1} = j | y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    pub gamma: Vec<[f64; 2]>,
    pub xi: Vec<[[f64; 2]; 2]>,
}

fn posteriors_from(hmm: &HmmMatrices, fb: &ForwardBackward, y: &[bool]) -> Posteriors {
    let gamma = fb
        .scaled_alpha
        .iter()
        .zip(&fb.scaled_beta)
        .map(|(a, b)| {
            let w = [a[0] * b[0], a[1] * b[1]];
            let total = w[0] + w[1];
            [w[0] / total, w[1] / total]
        })
        .collect();

    let xi = (0..y.len().saturating_sub(1))
        .map(|t| {
            let a = fb.scaled_alpha[t];
            let b = fb.scaled_beta[t + 1];
            let mut w = [[0.0; 2]; 2];
            let mut total = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    w[i][j] = a[i] * hmm.transition[i][j] * hmm.emit(j, y[t + 1]) * b[j];
                    total += w[i][j];
                }
            }
            w.map(|row| row.map(|v| v / total))
        })
        .collect();

    Posteriors { gamma, xi }
}

pub fn posteriors(theta: &ParamSet, seq: &AttemptSequence) -> Posteriors {
    let hmm = build_hmm_matrices(theta);
    posteriors_from(&hmm, &forward_backward(theta, seq), seq.attempts())
}

/// Numerator/denominator pair of `dQ/dp = A/p - B/(1-p)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub a: f64,
    pub b: f64,
}

impl Counts {
    pub fn total(&self) -> f64 {
        self.a + self.b
    }

    /// Stationary point `A / (A + B)`, if the pair carries any mass.
    pub fn closed_form(&self) -> Option<f64> {
        let total = self.total();
        (total > 0.0).then(|| self.a / total)
    }

    fn add(&mut self, other: Counts) {
        self.a += other.a;
        self.b += other.b;
    }
}

/// Expected counts from one E-step over a dataset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SufficientStats {
    pub l0: Counts,
    pub g: Counts,
    pub s: Counts,
    pub r: Counts,
    pub learners: usize,
    pub log_likelihood: f64,
}

impl SufficientStats {
    pub fn counts(&self, param: Param) -> Counts {
        match param {
            Param::L0 => self.l0,
            Param::G => self.g,
            Param::S => self.s,
            Param::R => self.r,
        }
    }

    pub fn counts_mut(&mut self, param: Param) -> &mut Counts {
        match param {
            Param::L0 => &mut self.l0,
            Param::G => &mut self.g,
            Param::S => &mut self.s,
            Param::R => &mut self.r,
        }
    }

    /// Builds statistics directly from `[(A, B); 4]` in `l0, g, s, r` order.
    pub fn from_counts(pairs: [(f64, f64); 4], learners: usize) -> Self {
        let mut stats = SufficientStats { learners, ..Default::default() };
        for p in Param::ALL {
            let (a, b) = pairs[p.index()];
            *stats.counts_mut(p) = Counts { a, b };
        }
        stats
    }

    pub fn merge(&mut self, other: &SufficientStats) {
        for p in Param::ALL {
            self.counts_mut(p).add(other.counts(p));
        }
        self.learners += other.learners;
        self.log_likelihood += other.log_likelihood;
    }

    fn for_learner(theta: &ParamSet, seq: &AttemptSequence) -> Self {
        let hmm = build_hmm_matrices(theta);
        let fb = forward_backward(theta, seq);
        let y = seq.attempts();
        let post = posteriors_from(&hmm, &fb, y);

        let mut stats = SufficientStats { learners: 1, log_likelihood: fb.log_likelihood, ..Default::default() };
        stats.l0 = Counts { a: post.gamma[0][1], b: post.gamma[0][0] };
        for (gamma, &correct) in post.gamma.iter().zip(y) {
            if correct {
                stats.g.a += gamma[0];
                stats.s.b += gamma[1];
            } else {
                stats.g.b += gamma[0];
                stats.s.a += gamma[1];
            }
        }
        for xi in &post.xi {
            stats.r.a += xi[0][1];
            stats.r.b += xi[0][0];
        }
        stats
    }
}

/// E-step over all learners. Learners are processed in parallel, and the
/// per-learner partials are summed in ascending learner order so the result
/// is bitwise independent of the thread count.
pub fn sufficient_stats(theta: &ParamSet, dataset: &Dataset) -> SufficientStats {
    let partials: Vec<SufficientStats> =
        dataset.sequences().par_iter().map(|seq| SufficientStats::for_learner(theta, seq)).collect();
    let mut total = SufficientStats::default();
    for p in &partials {
        total.merge(p);
    }
    total
}

/// `sum_d log P(y_d | theta)`.
pub fn log_likelihood(theta: &ParamSet, dataset: &Dataset) -> f64 {
    let per_learner: Vec<f64> =
        dataset.sequences().par_iter().map(|seq| forward_backward(theta, seq).log_likelihood).collect();
    per_learner.iter().sum()
}

/// Dumps `learner_id,t,gamma0,gamma1,xi00,xi01,xi11` rows; the `xi` columns
/// are empty on each learner's last step.
pub fn write_posteriors_csv<W: Write>(theta: &ParamSet, dataset: &Dataset, mut out: W) -> Result<()> {
    writeln!(out, "learner_id,t,gamma0,gamma1,xi00,xi01,xi11")?;
    for (d, seq) in dataset.sequences().iter().enumerate() {
        let post = posteriors(theta, seq);
        for (t, gamma) in post.gamma.iter().enumerate() {
            write!(out, "{d},{},{},{}", t + 1, gamma[0], gamma[1])?;
            match post.xi.get(t) {
                Some(xi) => writeln!(out, ",{},{},{}", xi[0][0], xi[0][1], xi[1][1])?,
                None => writeln!(out, ",,,")?,
            }
        }
    }
    out.flush().map_err(Error::from)
}
