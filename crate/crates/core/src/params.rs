//! BKT parameters, the first-principles constraint system and the
//! single-step mastery updates.
//!
//! A [`ParamSet`] holds the four model probabilities
//! `(P(L0), P(G), P(S), P(R))`, each strictly inside `(0, 1)`. The
//! behavioural restrictions on top of the box are
//!
//! * `1 - s - g >= 0`: a proficient learner answers correctly at least as
//!   often as a guessing one;
//! * `P* < l0 < 1`, where `P* = (1 - g) r / (1 - s - g)` is the fixed point
//!   that mastery approaches under an unbroken run of failures.
//!
//! Both combine into the single margin
//! `c(theta) = (1 - s - g) l0 - (1 - g) r`, which is what the constrained
//! estimator keeps positive.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::AttemptSequence;
use crate::error::{Error, Result};

/// Index of one of the four BKT parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Param {
    L0,
    G,
    S,
    R,
}

impl Param {
    pub const ALL: [Param; 4] = [Param::L0, Param::G, Param::S, Param::R];

    pub fn index(self) -> usize {
        match self {
            Param::L0 => 0,
            Param::G => 1,
            Param::S => 2,
            Param::R => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Param::L0 => "l0",
            Param::G => "g",
            Param::S => "s",
            Param::R => "r",
        }
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    l0: f64,
    g: f64,
    s: f64,
    r: f64,
}

/// The four BKT probabilities: prior proficiency `l0`, guess `g`, slip `s`
/// and transition `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ParamSet {
    l0: f64,
    g: f64,
    s: f64,
    r: f64,
}

fn open_unit(name: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value < 1.0 {
        Ok(value)
    } else {
        Err(Error::ProbabilityOutOfRange { name, value })
    }
}

impl ParamSet {
    pub fn new(l0: f64, g: f64, s: f64, r: f64) -> Result<Self> {
        Ok(Self { l0: open_unit("l0", l0)?, g: open_unit("g", g)?, s: open_unit("s", s)?, r: open_unit("r", r)? })
    }

    /// Builds from `[l0, g, s, r]`.
    pub fn from_array(values: [f64; 4]) -> Result<Self> {
        Self::new(values[0], values[1], values[2], values[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.l0, self.g, self.s, self.r]
    }

    pub fn l0(&self) -> f64 {
        self.l0
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn get(&self, param: Param) -> f64 {
        self.to_array()[param.index()]
    }

    /// Returns a copy with one coordinate replaced.
    pub fn with(self, param: Param, value: f64) -> Result<Self> {
        let mut values = self.to_array();
        values[param.index()] = value;
        Self::from_array(values)
    }

    /// `c(theta) = (1 - s - g) l0 - (1 - g) r`.
    pub fn constraint_margin(&self) -> f64 {
        (1.0 - self.s - self.g) * self.l0 - (1.0 - self.g) * self.r
    }

    /// Largest absolute coordinate difference.
    pub fn max_abs_diff(&self, other: &ParamSet) -> f64 {
        self.to_array().iter().zip(other.to_array()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

impl TryFrom<RawParams> for ParamSet {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        ParamSet::new(raw.l0, raw.g, raw.s, raw.r)
    }
}

impl From<ParamSet> for RawParams {
    fn from(p: ParamSet) -> Self {
        RawParams { l0: p.l0, g: p.g, s: p.s, r: p.r }
    }
}

impl fmt::Display for ParamSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(l0={:.6}, g={:.6}, s={:.6}, r={:.6})", self.l0, self.g, self.s, self.r)
    }
}

/// Verdicts for every restriction on the parameter space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    /// `0 < g < 1`
    pub guess_in_unit_interval: bool,
    /// `0 < s < 1`
    pub slip_in_unit_interval: bool,
    /// `0 < r < 1`
    pub transition_in_unit_interval: bool,
    /// `1 - s - g >= 0`
    pub slip_guess_ordering: bool,
    /// `P* < l0`
    pub prior_above_fixed_point: bool,
    /// `l0 < 1`
    pub prior_below_one: bool,
    /// `c(theta) = (1 - s - g) l0 - (1 - g) r`
    pub margin: f64,
    /// `P*`, absent when `1 - s - g <= 0`.
    pub fixed_point: Option<f64>,
    pub satisfied: bool,
}

pub fn validate_params(theta: &ParamSet) -> ConstraintReport {
    let [l0, g, s, r] = theta.to_array();
    let in_unit = |x: f64| x > 0.0 && x < 1.0;
    let spread = 1.0 - s - g;
    let margin = theta.constraint_margin();
    let fixed_point = fixed_point(theta).ok();

    let guess_in_unit_interval = in_unit(g);
    let slip_in_unit_interval = in_unit(s);
    let transition_in_unit_interval = in_unit(r);
    let slip_guess_ordering = spread >= 0.0;
    // With 1 - s - g > 0, l0 > P* is equivalent to c(theta) > 0.
    let prior_above_fixed_point = spread > 0.0 && margin > 0.0;
    let prior_below_one = l0 < 1.0;
    let satisfied = guess_in_unit_interval
        && slip_in_unit_interval
        && transition_in_unit_interval
        && slip_guess_ordering
        && prior_above_fixed_point
        && prior_below_one;

    ConstraintReport {
        guess_in_unit_interval,
        slip_in_unit_interval,
        transition_in_unit_interval,
        slip_guess_ordering,
        prior_above_fixed_point,
        prior_below_one,
        margin,
        fixed_point,
        satisfied,
    }
}

/// `P* = (1 - g) r / (1 - s - g)`.
pub fn fixed_point(theta: &ParamSet) -> Result<f64> {
    let denominator = 1.0 - theta.s - theta.g;
    if denominator > 0.0 {
        Ok((1.0 - theta.g) * theta.r / denominator)
    } else {
        Err(Error::UndefinedFixedPoint { denominator })
    }
}

/// Current proficiency `P(L_t)` of a single learner.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct MasteryState(f64);

impl MasteryState {
    pub fn new(p: f64) -> Result<Self> {
        if p > 0.0 && p <= 1.0 {
            Ok(Self(p))
        } else {
            Err(Error::MasteryOutOfRange(p))
        }
    }

    pub fn initial(theta: &ParamSet) -> Self {
        Self(theta.l0)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for MasteryState {
    type Error = Error;

    fn try_from(p: f64) -> Result<Self> {
        MasteryState::new(p)
    }
}

impl From<MasteryState> for f64 {
    fn from(m: MasteryState) -> f64 {
        m.0
    }
}

/// `P(C_{t+1}) = p (1 - s) + (1 - p) g`.
pub fn predict_correct(theta: &ParamSet, state: MasteryState) -> f64 {
    let p = state.0;
    p * (1.0 - theta.s) + (1.0 - p) * theta.g
}

/// Bayes update of mastery after observing one response.
pub fn posterior_given_obs(theta: &ParamSet, state: MasteryState, correct: bool) -> f64 {
    let p = state.0;
    let (known, unknown) =
        if correct { (p * (1.0 - theta.s), (1.0 - p) * theta.g) } else { (p * theta.s, (1.0 - p) * (1.0 - theta.g)) };
    known / (known + unknown)
}

/// `P(L_{t+1}) = q + r (1 - q)` for posterior `q`.
pub fn apply_transition(theta: &ParamSet, posterior: f64) -> f64 {
    posterior + theta.r * (1.0 - posterior)
}

/// Mastery trajectory `(P(L_1), ..., P(L_T))` starting from `l0`.
pub fn trace_sequence(theta: &ParamSet, observations: &AttemptSequence) -> Vec<f64> {
    trace_from(theta, MasteryState::initial(theta), observations.attempts())
}

/// Largest `f64` below 1.
pub const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Mastery trajectory from an arbitrary starting state.
///
/// Mastery and its complement are updated side by side, so a learner close
/// to 1 keeps an exact deficit and recovers after a later mistake. Reported
/// values are capped at [`BELOW_ONE`] and never read as exactly 1.
pub fn trace_from(theta: &ParamSet, start: MasteryState, observations: &[bool]) -> Vec<f64> {
    let (mut p, mut d) = (start.0, 1.0 - start.0);
    observations
        .iter()
        .map(|&correct| {
            let (known, unknown) = if correct { (1.0 - theta.s, theta.g) } else { (theta.s, 1.0 - theta.g) };
            let (k, u) = (p * known, d * unknown);
            let (q, q_bar) = (k / (k + u), u / (k + u));
            p = q + theta.r * q_bar;
            d = (1.0 - theta.r) * q_bar;
            p.min(BELOW_ONE)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fig2() -> ParamSet {
        ParamSet::new(0.45, 0.25, 0.1, 0.3).unwrap()
    }

    #[test]
    fn rejects_closed_endpoints() {
        assert!(ParamSet::new(0.0, 0.2, 0.1, 0.3).is_err());
        assert!(ParamSet::new(0.5, 1.0, 0.1, 0.3).is_err());
        assert!(ParamSet::new(0.5, 0.2, -0.1, 0.3).is_err());
        assert!(ParamSet::new(0.5, 0.2, 0.1, f64::NAN).is_err());
    }

    #[test]
    fn validate_reference_parameters() {
        let report = validate_params(&fig2());
        assert!(report.satisfied);
        assert_relative_eq!(report.fixed_point.unwrap(), 0.225 / 0.65, epsilon = 1e-15);
        assert_relative_eq!(report.fixed_point.unwrap(), 0.346_153_846, epsilon = 1e-9);
        assert_relative_eq!(report.margin, 0.0675, epsilon = 1e-15);
    }

    #[test]
    fn validate_flags_slip_guess_ordering() {
        let report = validate_params(&ParamSet::new(0.5, 0.6, 0.5, 0.1).unwrap());
        assert!(!report.slip_guess_ordering);
        assert!(report.fixed_point.is_none());
        assert!(!report.satisfied);
    }

    #[test]
    fn validate_flags_prior_below_fixed_point() {
        let report = validate_params(&ParamSet::new(0.30, 0.25, 0.1, 0.3).unwrap());
        assert!(report.slip_guess_ordering);
        assert!(!report.prior_above_fixed_point);
        assert!(report.margin < 0.0);
        assert!(report.fixed_point.unwrap() > 0.30);
        assert!(!report.satisfied);
    }

    #[test]
    fn fixed_point_values() {
        let theta = fig2();
        assert_relative_eq!(fixed_point(&theta).unwrap(), 0.346_153_846_153_846_2, epsilon = 1e-15);

        let flat = ParamSet::new(0.5, 0.25, 0.75, 0.3).unwrap();
        assert!(matches!(fixed_point(&flat), Err(Error::UndefinedFixedPoint { .. })));

        let noiseless = ParamSet::new(0.5, 1e-12, 1e-12, 0.3).unwrap();
        assert_relative_eq!(fixed_point(&noiseless).unwrap(), 0.3, epsilon = 1e-11);
    }

    #[test]
    fn predict_correct_values() {
        let theta = ParamSet::new(0.5, 0.2, 0.1, 0.3).unwrap();
        let half = MasteryState::new(0.5).unwrap();
        assert_relative_eq!(predict_correct(&theta, half), 0.55, epsilon = 1e-15);
        let full = MasteryState::new(1.0).unwrap();
        assert_relative_eq!(predict_correct(&theta, full), 0.9, epsilon = 1e-15);
        let tiny = MasteryState::new(1e-15).unwrap();
        assert_relative_eq!(predict_correct(&theta, tiny), 0.2, epsilon = 1e-14);
    }

    #[test]
    fn posterior_values() {
        let theta = ParamSet::new(0.5, 0.2, 0.1, 0.3).unwrap();
        let half = MasteryState::new(0.5).unwrap();
        assert_relative_eq!(posterior_given_obs(&theta, half, true), 9.0 / 11.0, epsilon = 1e-15);
        assert_relative_eq!(posterior_given_obs(&theta, half, false), 1.0 / 9.0, epsilon = 1e-15);

        let uninformative = ParamSet::new(0.5, 0.7, 0.3, 0.3).unwrap();
        let p = MasteryState::new(0.4).unwrap();
        assert_relative_eq!(posterior_given_obs(&uninformative, p, true), 0.4, epsilon = 1e-15);
    }

    #[test]
    fn transition_values() {
        let theta = fig2();
        assert_relative_eq!(apply_transition(&theta, 0.5), 0.65, epsilon = 1e-15);
        assert_eq!(apply_transition(&theta, 1.0), 1.0);
        assert_relative_eq!(apply_transition(&theta, 0.0), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn trace_single_correct() {
        let seq = AttemptSequence::new(vec![true]).unwrap();
        let trace = trace_sequence(&fig2(), &seq);
        let q = 0.405 / 0.5425;
        assert_eq!(trace.len(), 1);
        assert_relative_eq!(trace[0], q + 0.3 * (1.0 - q), epsilon = 1e-15);
        assert_relative_eq!(trace[0], 0.822_580_645, epsilon = 1e-9);
    }

    #[test]
    fn trace_all_correct_rises_below_one() {
        let seq = AttemptSequence::new(vec![true; 50]).unwrap();
        let trace = trace_sequence(&fig2(), &seq);
        assert!(trace[..15].windows(2).all(|w| w[1] > w[0]));
        assert!(trace.windows(2).all(|w| w[1] >= w[0]));
        assert!(trace.iter().all(|&p| p < 1.0));
        assert_eq!(*trace.last().unwrap(), BELOW_ONE);
    }

    #[test]
    fn saturated_learner_recovers_after_mistake() {
        let mut obs = vec![true; 40];
        obs.extend([false; 50]);
        let trace = trace_sequence(&fig2(), &AttemptSequence::new(obs).unwrap());
        assert_eq!(trace[39], BELOW_ONE);
        assert!(trace[89] < 0.9);
    }

    #[test]
    fn trace_all_incorrect_falls_to_fixed_point() {
        let theta = fig2();
        let p_star = fixed_point(&theta).unwrap();
        let seq = AttemptSequence::new(vec![false; 50]).unwrap();
        let trace = trace_sequence(&theta, &seq);
        assert!(trace[..10].windows(2).all(|w| w[1] < w[0]));
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(trace.iter().all(|&p| p >= p_star - 1e-15));
        assert!(trace.last().unwrap() - p_star < 1e-6);
    }

    #[test]
    fn params_json_requires_all_keys() {
        let theta: ParamSet = serde_json::from_str(r#"{"l0":0.45,"g":0.25,"s":0.1,"r":0.3}"#).unwrap();
        assert_eq!(theta, fig2());
        assert!(serde_json::from_str::<ParamSet>(r#"{"l0":0.45,"g":0.25,"s":0.1}"#).is_err());
        assert!(serde_json::from_str::<ParamSet>(r#"{"l0":1.0,"g":0.25,"s":0.1,"r":0.3}"#).is_err());
        let text = serde_json::to_string(&theta).unwrap();
        assert_eq!(serde_json::from_str::<ParamSet>(&text).unwrap(), theta);
    }

    #[test]
    fn mastery_state_bounds() {
        assert!(MasteryState::new(0.0).is_err());
        assert!(MasteryState::new(1.0).is_ok());
        assert!(MasteryState::new(1.0 + 1e-12).is_err());
    }
}
