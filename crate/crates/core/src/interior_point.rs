//! Constrained M-step: maximise the expected complete-data log-likelihood
//!
//! ```text
//!     Q(theta) = sum_p  A_p ln p + B_p ln(1 - p),    p in {l0, g, s, r}
//! ```
//!
//! subject to `c(theta) = (1 - s - g) l0 - (1 - g) r >= 0`, using a
//! logarithmic barrier `Q + mu ln c` and a primal-dual Newton iteration on
//!
//! ```text
//!     F(theta, lambda) = [ grad Q + lambda grad c ;  lambda c - mu ] = 0
//! ```
//!
//! for a geometrically decreasing sequence of `mu`, each solve warm-started
//! from the previous one. Box interiority of `theta` is not a separate
//! constraint: the `ln p` and `ln(1 - p)` terms already repel the box faces
//! and the step rule never lets an iterate reach them.
//!
//! `mu` lives on the scale of the conditional expected counts produced by
//! [`crate::estep::sufficient_stats`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estep::SufficientStats;
use crate::fit::{report, run_em, Algorithm, BarrierDiagnostics, FitOptions, FitReport, MStepUpdate};
use crate::params::{Param, ParamSet};
use crate::simulate::rng_from_seed;

/// Iterates never get closer than this to 0 or 1 in any coordinate.
pub const BOX_MARGIN: f64 = 1e-12;
/// Constraint margin targeted when an infeasible start has to be restored.
pub const RESTORE_MARGIN: f64 = 1e-3;
const MAX_BACKTRACKS: usize = 30;
const MAX_RESTARTS: usize = 5;
const JITTER: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarrierSchedule {
    pub mu_initial: f64,
    pub decay: f64,
    pub mu_floor: f64,
    /// Max-norm of the KKT residual that ends a Newton solve.
    pub newton_tolerance: f64,
    pub max_newton_steps: usize,
    /// `tau` of the fraction-to-boundary rule.
    pub fraction_to_boundary: f64,
}

impl Default for BarrierSchedule {
    fn default() -> Self {
        Self {
            mu_initial: 1.0,
            decay: 0.2,
            mu_floor: 1e-10,
            newton_tolerance: 1e-9,
            max_newton_steps: 200,
            fraction_to_boundary: 0.995,
        }
    }
}

impl BarrierSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.mu_initial > 0.0 && self.mu_initial.is_finite()) {
            return bad("mu_initial must be positive");
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return bad("decay must lie in (0, 1)");
        }
        if !(self.mu_floor >= 0.0 && self.mu_floor < self.mu_initial) {
            return bad("mu_floor must lie in [0, mu_initial)");
        }
        if self.newton_tolerance.is_nan() || self.newton_tolerance <= 0.0 {
            return bad("newton_tolerance must be positive");
        }
        if self.max_newton_steps == 0 {
            return bad("max_newton_steps must be at least 1");
        }
        if !(self.fraction_to_boundary > 0.0 && self.fraction_to_boundary < 1.0) {
            return bad("fraction_to_boundary must lie in (0, 1)");
        }
        Ok(())
    }

    /// `mu_initial, mu_initial * decay, ...` while above the floor, then the
    /// floor itself.
    pub fn mu_sequence(&self) -> Vec<f64> {
        let mut mus = Vec::new();
        let mut mu = self.mu_initial;
        while mu > self.mu_floor {
            mus.push(mu);
            mu *= self.decay;
        }
        mus.push(self.mu_floor);
        mus
    }
}

/// Primal-dual iterate at barrier value `mu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierState {
    pub theta: ParamSet,
    pub lambda: f64,
    pub mu: f64,
}

impl BarrierState {
    /// Dual value on the central path, `lambda = mu / c(theta)`.
    pub fn centered(theta: ParamSet, mu: f64) -> Result<Self> {
        let c = constraint_value(&theta);
        if c <= 0.0 {
            return Err(Error::InfeasibleState { constraint: c });
        }
        Ok(Self { theta, lambda: mu / c, mu })
    }
}

pub fn constraint_value(theta: &ParamSet) -> f64 {
    theta.constraint_margin()
}

/// `(dc/dl0, dc/dg, dc/ds, dc/dr) = (1 - s - g, r - l0, -l0, g - 1)`.
pub fn constraint_gradient(theta: &ParamSet) -> [f64; 4] {
    let [l0, g, s, r] = theta.to_array();
    [1.0 - s - g, r - l0, -l0, g - 1.0]
}

/// Constant Hessian of the bilinear constraint.
const CONSTRAINT_HESSIAN: [[f64; 4]; 4] =
    [[0.0, -1.0, -1.0, 0.0], [-1.0, 0.0, 0.0, 1.0], [-1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]];

/// `Q(theta)` up to terms that do not depend on `theta`. Pairs with zero
/// mass contribute nothing.
pub fn qhat_value(stats: &SufficientStats, theta: &ParamSet) -> f64 {
    Param::ALL
        .iter()
        .map(|&p| {
            let counts = stats.counts(p);
            let x = theta.get(p);
            let mut v = 0.0;
            if counts.a != 0.0 {
                v += counts.a * x.ln();
            }
            if counts.b != 0.0 {
                v += counts.b * (1.0 - x).ln();
            }
            v
        })
        .sum()
}

pub fn qhat_gradient(stats: &SufficientStats, theta: &ParamSet) -> [f64; 4] {
    Param::ALL.map(|p| {
        let counts = stats.counts(p);
        let x = theta.get(p);
        counts.a / x - counts.b / (1.0 - x)
    })
}

/// Diagonal of the Hessian of `Q`; the cross derivatives vanish because
/// `Q` is a sum of one-parameter terms.
pub fn qhat_hessian_diag(stats: &SufficientStats, theta: &ParamSet) -> [f64; 4] {
    Param::ALL.map(|p| {
        let counts = stats.counts(p);
        let x = theta.get(p);
        -counts.a / (x * x) - counts.b / ((1.0 - x) * (1.0 - x))
    })
}

/// `F = [grad Q + lambda grad c ; lambda c - mu]`.
pub fn kkt_residual(state: &BarrierState, stats: &SufficientStats) -> Result<[f64; 5]> {
    let c = constraint_value(&state.theta);
    if c <= 0.0 {
        return Err(Error::InfeasibleState { constraint: c });
    }
    Ok(residual_unchecked(state, stats, c))
}

fn residual_unchecked(state: &BarrierState, stats: &SufficientStats, c: f64) -> [f64; 5] {
    let grad = qhat_gradient(stats, &state.theta);
    let dc = constraint_gradient(&state.theta);
    let mut f = [0.0; 5];
    for i in 0..4 {
        f[i] = grad[i] + state.lambda * dc[i];
    }
    f[4] = state.lambda * c - state.mu;
    f
}

/// Jacobian of [`kkt_residual`] with respect to `(l0, g, s, r, lambda)`.
pub fn kkt_jacobian(state: &BarrierState, stats: &SufficientStats) -> [[f64; 5]; 5] {
    let hess = qhat_hessian_diag(stats, &state.theta);
    let dc = constraint_gradient(&state.theta);
    let mut j = [[0.0; 5]; 5];
    for i in 0..4 {
        for k in 0..4 {
            j[i][k] = state.lambda * CONSTRAINT_HESSIAN[i][k];
        }
        j[i][i] += hess[i];
        j[i][4] = dc[i];
        j[4][i] = state.lambda * dc[i];
    }
    j[4][4] = constraint_value(&state.theta);
    j
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
fn solve_linear<const N: usize>(mut a: [[f64; N]; N], mut b: [f64; N]) -> Option<[f64; N]> {
    for col in 0..N {
        let pivot = (col..N).max_by(|&i, &k| a[i][col].abs().total_cmp(&a[k][col].abs()))?;
        if a[pivot][col] == 0.0 || !a[pivot][col].is_finite() {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..N {
            let factor = a[row][col] / a[col][col];
            if factor != 0.0 {
                let pivot_row = a[col];
                for (dst, src) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                    *dst -= factor * src;
                }
                b[row] -= factor * b[col];
            }
        }
    }
    let mut x = [0.0; N];
    for row in (0..N).rev() {
        let tail: f64 = (row + 1..N).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Smallest positive root of `a v^2 + b v + k` with `k > 0`, if any.
fn first_positive_root(a: f64, b: f64, k: f64) -> Option<f64> {
    if a == 0.0 {
        return (b < 0.0).then(|| k / -b);
    }
    let disc = b * b - 4.0 * a * k;
    if disc < 0.0 {
        return None;
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let roots = [q / a, if q != 0.0 { k / q } else { f64::INFINITY }];
    roots.into_iter().filter(|r| *r > 0.0 && r.is_finite()).min_by(f64::total_cmp)
}

/// Largest `nu <= 1` satisfying the fraction-to-boundary rule for the
/// constraint, the dual variable and the box.
fn max_step(state: &BarrierState, dtheta: &[f64; 4], dlambda: f64, tau: f64) -> f64 {
    let mut nu: f64 = 1.0;
    if dlambda < 0.0 {
        nu = nu.min(tau * state.lambda / -dlambda);
    }
    let x = state.theta.to_array();
    for i in 0..4 {
        if dtheta[i] < 0.0 {
            nu = nu.min(tau * (x[i] - BOX_MARGIN) / -dtheta[i]);
        } else if dtheta[i] > 0.0 {
            nu = nu.min(tau * (1.0 - BOX_MARGIN - x[i]) / dtheta[i]);
        }
    }
    // c(theta + nu d) = c + nu (grad c . d) + nu^2 (d' H d / 2); keep it
    // above (1 - tau) c.
    let c = constraint_value(&state.theta);
    let dc = constraint_gradient(&state.theta);
    let linear: f64 = (0..4).map(|i| dc[i] * dtheta[i]).sum();
    let [dl0, dg, ds, dr] = *dtheta;
    let quadratic = -ds * dl0 - dg * dl0 + dg * dr;
    if let Some(root) = first_positive_root(quadratic, linear, tau * c) {
        nu = nu.min(root);
    }
    nu
}

fn advance(state: &BarrierState, dtheta: &[f64; 4], dlambda: f64, nu: f64) -> Option<BarrierState> {
    let x = state.theta.to_array();
    let mut next = [0.0; 4];
    for i in 0..4 {
        next[i] = x[i] + nu * dtheta[i];
        if !(next[i] > BOX_MARGIN && next[i] < 1.0 - BOX_MARGIN) {
            return None;
        }
    }
    let theta = ParamSet::from_array(next).ok()?;
    let lambda = state.lambda + nu * dlambda;
    (lambda >= 0.0 && constraint_value(&theta) > 0.0).then_some(BarrierState { theta, lambda, mu: state.mu })
}

#[derive(Debug)]
enum NewtonFailure {
    Singular,
    Stalled(f64),
    Exhausted(f64),
}

struct NewtonRun {
    state: BarrierState,
    residual: f64,
}

fn newton(
    stats: &SufficientStats,
    start: BarrierState,
    schedule: &BarrierSchedule,
) -> (usize, std::result::Result<NewtonRun, NewtonFailure>) {
    let mut state = start;
    let mut f = residual_unchecked(&state, stats, constraint_value(&state.theta));
    for step in 0..schedule.max_newton_steps {
        let norm = max_norm(&f);
        if norm < schedule.newton_tolerance {
            return (step, Ok(NewtonRun { state, residual: norm }));
        }
        let jac = kkt_jacobian(&state, stats);
        let Some(delta) = solve_linear(jac, f.map(|v| -v)) else {
            return (step, Err(NewtonFailure::Singular));
        };
        let dtheta = [delta[0], delta[1], delta[2], delta[3]];
        let dlambda = delta[4];

        let mut nu = max_step(&state, &dtheta, dlambda, schedule.fraction_to_boundary);
        let current = l2_norm(&f);
        let mut accepted = None;
        for _ in 0..=MAX_BACKTRACKS {
            if let Some(trial) = advance(&state, &dtheta, dlambda, nu) {
                let trial_f = residual_unchecked(&trial, stats, constraint_value(&trial.theta));
                if l2_norm(&trial_f) < current {
                    accepted = Some((trial, trial_f));
                    break;
                }
            }
            nu *= 0.5;
        }
        match accepted {
            Some((next, next_f)) => {
                state = next;
                f = next_f;
            }
            None => return (step + 1, Err(NewtonFailure::Stalled(norm))),
        }
    }
    let norm = max_norm(&f);
    if norm < schedule.newton_tolerance {
        return (schedule.max_newton_steps, Ok(NewtonRun { state, residual: norm }));
    }
    (schedule.max_newton_steps, Err(NewtonFailure::Exhausted(norm)))
}

/// Converged subproblem together with its cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubproblemSolution {
    pub state: BarrierState,
    /// Newton steps taken, summed over restarts.
    pub newton_steps: usize,
    pub restarts: usize,
    /// Max-norm of the KKT residual at `state`.
    pub residual: f64,
}

/// Newton's method on `F = 0` at fixed `mu`. On a stall or a singular
/// system the start is jittered by up to `1e-3` per coordinate and the
/// solve restarted, at most five times.
pub fn solve_barrier_subproblem(
    stats: &SufficientStats,
    start: BarrierState,
    schedule: &BarrierSchedule,
) -> Result<SubproblemSolution> {
    let c = constraint_value(&start.theta);
    if c <= 0.0 {
        return Err(Error::InfeasibleState { constraint: c });
    }
    if !(start.lambda >= 0.0 && start.mu >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "barrier start needs lambda >= 0 and mu >= 0 (got lambda = {}, mu = {})",
            start.lambda, start.mu
        )));
    }

    let mut total_steps = 0;
    let mut attempt_start = start;
    let mut rng = rng_from_seed(start.mu.to_bits() ^ start.theta.l0().to_bits());
    let mut last_failure = NewtonFailure::Singular;
    for restart in 0..=MAX_RESTARTS {
        let (steps, outcome) = newton(stats, attempt_start, schedule);
        total_steps += steps;
        match outcome {
            Ok(run) => {
                return Ok(SubproblemSolution {
                    state: run.state,
                    newton_steps: total_steps,
                    restarts: restart,
                    residual: run.residual,
                })
            }
            Err(failure) => last_failure = failure,
        }
        if restart < MAX_RESTARTS {
            attempt_start = jitter(&start, &mut rng);
        }
    }

    match last_failure {
        NewtonFailure::Singular => Err(Error::SingularSystem { mu: start.mu, restarts: MAX_RESTARTS }),
        NewtonFailure::Stalled(residual) | NewtonFailure::Exhausted(residual) => {
            Err(Error::NonConvergence { mu: start.mu, residual, steps: total_steps })
        }
    }
}

fn jitter<R: Rng>(start: &BarrierState, rng: &mut R) -> BarrierState {
    let x = start.theta.to_array();
    for _ in 0..100 {
        let moved =
            x.map(|v| (v + JITTER * (2.0 * rng.random::<f64>() - 1.0)).clamp(BOX_MARGIN * 2.0, 1.0 - BOX_MARGIN * 2.0));
        if let Ok(theta) = ParamSet::from_array(moved) {
            if let Ok(state) = BarrierState::centered(theta, start.mu) {
                if start.mu > 0.0 {
                    return state;
                }
                return BarrierState { lambda: start.lambda, ..state };
            }
        }
    }
    *start
}

/// Pulls an infeasible point into `c(theta) >= RESTORE_MARGIN`; strictly
/// feasible points are returned unchanged.
///
/// `r` enters `c` linearly with a negative coefficient, so lowering it is
/// enough whenever `(1 - s - g) l0` leaves room. Otherwise `s` and `g` are
/// first shrunk proportionally until `1 - s - g >= 0.1`, and `l0` is raised
/// if it is too small to clear the margin.
pub fn restore_feasibility(theta: &ParamSet) -> ParamSet {
    if constraint_value(theta) > 0.0 {
        return *theta;
    }
    let [mut l0, mut g, mut s, mut r] = theta.to_array();
    if 1.0 - s - g < 0.1 {
        let k = 0.9 / (s + g);
        g *= k;
        s *= k;
    }
    let spread = 1.0 - s - g;
    if spread * l0 < 2.0 * RESTORE_MARGIN {
        l0 = 3.0 * RESTORE_MARGIN / spread;
    }
    let r_max = (spread * l0 - RESTORE_MARGIN) / (1.0 - g);
    r = r.min(r_max);
    ParamSet::new(l0, g, s, r).expect("restored point is interior")
}

/// Result of one constrained M-step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MStepSolution {
    pub theta: ParamSet,
    pub lambda: f64,
    /// Max-norm of the KKT residual at the final barrier value.
    pub residual: f64,
    pub newton_steps: usize,
    pub restarts: usize,
    /// Whether the warm start was infeasible and had to be restored.
    pub restored_start: bool,
}

fn check_statistics(stats: &SufficientStats) -> Result<()> {
    for p in Param::ALL {
        let counts = stats.counts(p);
        if !(counts.a > 0.0 && counts.b > 0.0 && counts.a.is_finite() && counts.b.is_finite()) {
            return Err(Error::DegenerateStatistics { param: p, a: counts.a, b: counts.b });
        }
    }
    Ok(())
}

/// Maximises `Q` subject to `c(theta) >= 0`, following the barrier path from
/// `theta_star` down the `mu` schedule.
///
/// Every `A_p` and `B_p` must be positive; otherwise the maximiser sits on
/// the boundary of the box and the call fails with
/// [`Error::DegenerateStatistics`].
pub fn interior_point_m_step(
    stats: &SufficientStats,
    theta_star: &ParamSet,
    schedule: &BarrierSchedule,
) -> Result<MStepSolution> {
    schedule.validate()?;
    check_statistics(stats)?;
    let restored_start = constraint_value(theta_star) <= 0.0;
    let start = if restored_start { restore_feasibility(theta_star) } else { *theta_star };

    let mus = schedule.mu_sequence();
    let mut state = BarrierState::centered(start, mus[0])?;
    let mut newton_steps = 0;
    let mut restarts = 0;
    let mut residual = f64::INFINITY;
    for &mu in &mus {
        state.mu = mu;
        let solution = solve_barrier_subproblem(stats, state, schedule)?;
        newton_steps += solution.newton_steps;
        restarts += solution.restarts;
        residual = solution.residual;
        state = solution.state;
    }

    Ok(MStepSolution { theta: state.theta, lambda: state.lambda, residual, newton_steps, restarts, restored_start })
}

/// EM with the constrained M-step. An infeasible `init` is first restored
/// with [`restore_feasibility`]; every later iterate is strictly feasible.
pub fn fit_constrained(
    dataset: &Dataset,
    init: ParamSet,
    opts: &FitOptions,
    schedule: &BarrierSchedule,
) -> Result<FitReport> {
    schedule.validate()?;
    let start = if constraint_value(&init) > 0.0 { init } else { restore_feasibility(&init) };
    let mut diagnostics = BarrierDiagnostics::default();

    let outcome = run_em(dataset, start, opts, |stats, theta_star| {
        let solution = interior_point_m_step(stats, theta_star, schedule)?;
        diagnostics.newton_steps += solution.newton_steps;
        diagnostics.restarts += solution.restarts;
        diagnostics.final_residual = solution.residual;
        // The barrier optimum can trail the true constrained optimum by
        // about mu_floor; never let that undo EM's ascent.
        let theta = if qhat_value(stats, &solution.theta) >= qhat_value(stats, theta_star) {
            solution.theta
        } else {
            diagnostics.rejected_steps += 1;
            *theta_star
        };
        Ok(MStepUpdate { theta, boundary: Vec::new() })
    })?;

    Ok(report(Algorithm::Constrained, init, start, outcome, Some(diagnostics)))
}
