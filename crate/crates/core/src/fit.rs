//! Options, reports and the outer EM loop shared by both estimators.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estep::{sufficient_stats, SufficientStats};
use crate::params::{validate_params, ConstraintReport, Param, ParamSet};
use crate::simulate::sample_uniform_params;

/// Lower and upper bound of the uniform initial-guess distribution.
pub const INIT_RANGE: (f64, f64) = (0.05, 0.95);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    BaumWelch,
    Constrained,
}

impl Algorithm {
    pub const ALL: [Algorithm; 2] = [Algorithm::BaumWelch, Algorithm::Constrained];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::BaumWelch => "baum-welch",
            Algorithm::Constrained => "constrained",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baum-welch" => Ok(Algorithm::BaumWelch),
            "constrained" => Ok(Algorithm::Constrained),
            other => Err(Error::InvalidConfig(format!("unknown algorithm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub max_iterations: usize,
    pub loglik_tolerance: f64,
    pub param_tolerance: f64,
    /// Seed for sampling the initial guess when none is supplied.
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iterations: 500, loglik_tolerance: 1e-8, param_tolerance: 1e-8, seed: 0 }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.loglik_tolerance > 0.0 && self.param_tolerance > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        Ok(())
    }

    /// Initial guess drawn uniformly from [`INIT_RANGE`] using `seed`.
    pub fn initial_guess(&self) -> ParamSet {
        sample_uniform_params(self.seed, INIT_RANGE.0, INIT_RANGE.1).expect("INIT_RANGE is inside (0, 1)")
    }
}

/// An M-step result that had to be pulled off the boundary of `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryHit {
    pub iteration: usize,
    pub param: Param,
    pub value: f64,
}

/// Interior-point bookkeeping summed over all M-steps of a fit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BarrierDiagnostics {
    pub newton_steps: usize,
    pub restarts: usize,
    /// M-steps whose barrier solution scored below the previous iterate and
    /// were replaced by it.
    pub rejected_steps: usize,
    /// KKT residual (max-norm) of the last M-step at the final barrier value.
    pub final_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub algorithm: Algorithm,
    pub initial_theta: ParamSet,
    /// Point the EM loop actually started from; differs from
    /// `initial_theta` only when the constrained fit had to restore
    /// feasibility.
    pub start_theta: ParamSet,
    pub theta_hat: ParamSet,
    /// Log-likelihood of the start point followed by one entry per iteration.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub constraints: ConstraintReport,
    pub boundary_hits: Vec<BoundaryHit>,
    pub barrier: Option<BarrierDiagnostics>,
}

impl FitReport {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.loglik_trace.last().expect("trace holds at least the start point")
    }

    /// Largest drop between consecutive trace entries (zero if none).
    pub fn max_loglik_decrease(&self) -> f64 {
        self.loglik_trace.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
    }
}

/// What an M-step hands back to the EM driver.
pub(crate) struct MStepUpdate {
    pub theta: ParamSet,
    pub boundary: Vec<(Param, f64)>,
}

pub(crate) struct EmOutcome {
    pub theta_hat: ParamSet,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub boundary_hits: Vec<BoundaryHit>,
}

/// Alternates E-steps and `m_step` until the log-likelihood or the
/// parameters stop moving, or the iteration cap is hit.
pub(crate) fn run_em<F>(dataset: &Dataset, start: ParamSet, opts: &FitOptions, mut m_step: F) -> Result<EmOutcome>
where
    F: FnMut(&SufficientStats, &ParamSet) -> Result<MStepUpdate>,
{
    opts.validate()?;
    let mut theta = start;
    let mut stats = sufficient_stats(&theta, dataset);
    let mut loglik_trace = vec![stats.log_likelihood];
    let mut boundary_hits = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let update = m_step(&stats, &theta)?;
        boundary_hits.extend(update.boundary.into_iter().map(|(param, value)| BoundaryHit {
            iteration: iterations,
            param,
            value,
        }));
        let next_stats = sufficient_stats(&update.theta, dataset);
        let delta_loglik = next_stats.log_likelihood - stats.log_likelihood;
        let delta_param = update.theta.max_abs_diff(&theta);
        theta = update.theta;
        stats = next_stats;
        loglik_trace.push(stats.log_likelihood);
        if delta_loglik.abs() < opts.loglik_tolerance || delta_param < opts.param_tolerance {
            converged = true;
            break;
        }
    }

    Ok(EmOutcome { theta_hat: theta, loglik_trace, iterations, converged, boundary_hits })
}

pub(crate) fn report(
    algorithm: Algorithm,
    initial_theta: ParamSet,
    start_theta: ParamSet,
    outcome: EmOutcome,
    barrier: Option<BarrierDiagnostics>,
) -> FitReport {
    FitReport {
        algorithm,
        initial_theta,
        start_theta,
        constraints: validate_params(&outcome.theta_hat),
        theta_hat: outcome.theta_hat,
        loglik_trace: outcome.loglik_trace,
        iterations: outcome.iterations,
        converged: outcome.converged,
        boundary_hits: outcome.boundary_hits,
        barrier,
    }
}
