//! Classical Baum-Welch: the closed-form M-step and its EM loop.
//!
//! Nothing here enforces the behavioural constraints; the report says
//! whether the fitted parameters happen to satisfy them.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estep::SufficientStats;
use crate::fit::{report, run_em, Algorithm, FitOptions, FitReport, MStepUpdate};
use crate::params::{Param, ParamSet};

/// Distance from 0 and 1 at which closed-form values are parked.
pub const BOUNDARY_NUDGE: f64 = 1e-12;

/// Raw closed-form maximiser `A / (A + B)` per parameter, in `l0, g, s, r`
/// order. Values may sit exactly on 0 or 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormEstimate(pub [f64; 4]);

impl ClosedFormEstimate {
    pub fn get(&self, param: Param) -> f64 {
        self.0[param.index()]
    }

    /// Moves boundary values `BOUNDARY_NUDGE` inside `(0, 1)` and lists the
    /// parameters that needed it, with their raw values.
    pub fn into_interior(self) -> (ParamSet, Vec<(Param, f64)>) {
        let mut hits = Vec::new();
        let mut values = self.0;
        for p in Param::ALL {
            let v = values[p.index()];
            let clamped = v.clamp(BOUNDARY_NUDGE, 1.0 - BOUNDARY_NUDGE);
            if clamped != v {
                hits.push((p, v));
                values[p.index()] = clamped;
            }
        }
        let theta = ParamSet::from_array(values).expect("clamped values are interior");
        (theta, hits)
    }
}

pub fn m_step_closed_form(stats: &SufficientStats) -> Result<ClosedFormEstimate> {
    let mut values = [0.0; 4];
    for p in Param::ALL {
        let counts = stats.counts(p);
        values[p.index()] =
            counts.closed_form().ok_or(Error::DegenerateStatistics { param: p, a: counts.a, b: counts.b })?;
    }
    Ok(ClosedFormEstimate(values))
}

pub fn fit_baum_welch(dataset: &Dataset, init: ParamSet, opts: &FitOptions) -> Result<FitReport> {
    let outcome = run_em(dataset, init, opts, |stats, _| {
        let (theta, boundary) = m_step_closed_form(stats)?.into_interior();
        Ok(MStepUpdate { theta, boundary })
    })?;
    Ok(report(Algorithm::BaumWelch, init, init, outcome, None))
}
