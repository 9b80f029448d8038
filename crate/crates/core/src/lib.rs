//! Bayesian Knowledge Tracing parameter estimation.
//!
//! Two estimators share one E-step:
//!
//! * [`baum_welch::fit_baum_welch`], the classical closed-form EM, which may
//!   converge to degenerate parameters (for example `s + g > 1`);
//! * [`interior_point::fit_constrained`], an EM whose M-step maximises the
//!   expected complete-data log-likelihood subject to
//!   `(1 - s - g) l0 - (1 - g) r >= 0` with a primal-dual log-barrier
//!   Newton method, so every iterate stays inside the valid region.
//!
//! [`simulate`] draws synthetic learners, [`oracle`] enumerates hidden paths
//! for testing, and [`experiment`] runs the dataset/initial-guess comparison
//! studies.

pub mod baum_welch;
pub mod data;
pub mod error;
pub mod estep;
pub mod experiment;
pub mod fit;
pub mod interior_point;
pub mod oracle;
pub mod params;
pub mod plot;
pub mod simulate;

pub use data::{AttemptSequence, Dataset, HiddenPath};
pub use error::{Error, Result};
pub use fit::{Algorithm, FitOptions, FitReport};
pub use interior_point::BarrierSchedule;
pub use params::{ConstraintReport, MasteryState, Param, ParamSet};
