//! Comparison studies between Baum-Welch and the constrained EM.
//!
//! * `datasets` mode: many datasets simulated from one parameter set, each
//!   fitted by every algorithm from one shared random initial guess.
//! * `inits` mode: one dataset, fitted from many random initial guesses.
//!
//! Dataset and initial-guess seeds are derived from the master seed and the
//! run index, so any single run can be regenerated in isolation.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baum_welch::fit_baum_welch;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fit::{Algorithm, FitOptions, FitReport, INIT_RANGE};
use crate::interior_point::{fit_constrained, BarrierSchedule};
use crate::params::{Param, ParamSet};
use crate::simulate::{derive_seed, sample_uniform_params, simulate_dataset};

const INIT_STREAM: u64 = 0x1A17_5EED;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentMode {
    Datasets,
    Inits,
}

fn default_learners() -> usize {
    100
}

fn default_steps() -> usize {
    10
}

fn default_algorithms() -> Vec<Algorithm> {
    Algorithm::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: ExperimentMode,
    pub true_theta: ParamSet,
    /// Number of datasets (`datasets` mode) or initial guesses (`inits`).
    pub runs: usize,
    #[serde(default = "default_learners")]
    pub learners: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub fit_options: FitOptions,
    #[serde(default)]
    pub schedule: BarrierSchedule,
}

impl ExperimentConfig {
    /// Reference setup: 100 datasets of 100 learners by 10 attempts from
    /// `(l0, g, s, r) = (0.45, 0.25, 0.1, 0.3)`.
    pub fn reference(mode: ExperimentMode) -> Self {
        Self {
            mode,
            true_theta: ParamSet::new(0.45, 0.25, 0.1, 0.3).expect("valid"),
            runs: 100,
            learners: default_learners(),
            steps: default_steps(),
            master_seed: 0,
            algorithms: default_algorithms(),
            fit_options: FitOptions::default(),
            schedule: BarrierSchedule::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (what, n) in [("runs", self.runs), ("learners", self.learners), ("steps", self.steps)] {
            if n == 0 {
                return Err(Error::InvalidConfig(format!("{what} must be at least 1")));
            }
        }
        if self.algorithms.is_empty() {
            return Err(Error::InvalidConfig("no algorithms selected".into()));
        }
        self.fit_options.validate()?;
        self.schedule.validate()
    }

    pub fn dataset_seed(&self, run: usize) -> u64 {
        match self.mode {
            ExperimentMode::Datasets => derive_seed(self.master_seed, run as u64),
            ExperimentMode::Inits => derive_seed(self.master_seed, 0),
        }
    }

    pub fn init_seed(&self, run: usize) -> u64 {
        derive_seed(self.master_seed ^ INIT_STREAM, run as u64)
    }

    pub fn dataset_for_run(&self, run: usize) -> Result<Dataset> {
        Ok(simulate_dataset(&self.true_theta, self.learners, self.steps, self.dataset_seed(run))?.dataset)
    }

    pub fn initial_guess_for_run(&self, run: usize) -> ParamSet {
        sample_uniform_params(self.init_seed(run), INIT_RANGE.0, INIT_RANGE.1).expect("INIT_RANGE is inside (0, 1)")
    }

    pub fn fit(&self, algorithm: Algorithm, dataset: &Dataset, init: ParamSet) -> Result<FitReport> {
        match algorithm {
            Algorithm::BaumWelch => fit_baum_welch(dataset, init, &self.fit_options),
            Algorithm::Constrained => fit_constrained(dataset, init, &self.fit_options, &self.schedule),
        }
    }
}

/// One fit of one algorithm in one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub algorithm: Algorithm,
    pub dataset_seed: u64,
    pub initial_theta: ParamSet,
    pub fitted_theta: Option<ParamSet>,
    pub log_likelihood: Option<f64>,
    pub satisfied: Option<bool>,
    pub margin: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub max_loglik_decrease: Option<f64>,
    pub wall_time_ms: f64,
    pub error: Option<String>,
}

impl RunRecord {
    fn from_outcome(
        run: usize,
        algorithm: Algorithm,
        seed: u64,
        init: ParamSet,
        outcome: &Result<FitReport>,
        ms: f64,
    ) -> Self {
        match outcome {
            Ok(rep) => RunRecord {
                run,
                algorithm,
                dataset_seed: seed,
                initial_theta: init,
                fitted_theta: Some(rep.theta_hat),
                log_likelihood: Some(rep.final_log_likelihood()),
                satisfied: Some(rep.constraints.satisfied),
                margin: Some(rep.constraints.margin),
                iterations: rep.iterations,
                converged: rep.converged,
                max_loglik_decrease: Some(rep.max_loglik_decrease()),
                wall_time_ms: ms,
                error: None,
            },
            Err(e) => RunRecord {
                run,
                algorithm,
                dataset_seed: seed,
                initial_theta: init,
                fitted_theta: None,
                log_likelihood: None,
                satisfied: None,
                margin: None,
                iterations: 0,
                converged: false,
                max_loglik_decrease: None,
                wall_time_ms: ms,
                error: Some(e.to_string()),
            },
        }
    }
}

/// Per-parameter values in `l0, g, s, r` order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PerParam {
    pub l0: f64,
    pub g: f64,
    pub s: f64,
    pub r: f64,
}

impl PerParam {
    fn from_fn(f: impl Fn(Param) -> f64) -> Self {
        PerParam { l0: f(Param::L0), g: f(Param::G), s: f(Param::S), r: f(Param::R) }
    }

    pub fn get(&self, p: Param) -> f64 {
        match p {
            Param::L0 => self.l0,
            Param::G => self.g,
            Param::S => self.s,
            Param::R => self.r,
        }
    }
}

/// Error statistics of one algorithm's fits against the generating
/// parameters. Precision is the spread (`std_dev`) of the fitted values;
/// accuracy is `mean_abs_error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub runs: usize,
    pub failures: usize,
    pub violations: usize,
    pub mean_error: PerParam,
    pub mean_abs_error: PerParam,
    pub median_abs_error: PerParam,
    pub std_dev: PerParam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub records: Vec<RunRecord>,
    pub summary: Vec<AlgorithmSummary>,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Recomputes the summary table from run records.
pub fn summarize(records: &[RunRecord], truth: &ParamSet, algorithms: &[Algorithm]) -> Vec<AlgorithmSummary> {
    algorithms
        .iter()
        .map(|&algorithm| {
            let mine: Vec<&RunRecord> = records.iter().filter(|r| r.algorithm == algorithm).collect();
            let fitted: Vec<ParamSet> = mine.iter().filter_map(|r| r.fitted_theta).collect();
            let n = fitted.len() as f64;
            let column = |p: Param| fitted.iter().map(move |t| t.get(p));
            let mean = |p: Param| column(p).sum::<f64>() / n;
            AlgorithmSummary {
                algorithm,
                runs: mine.len(),
                failures: mine.iter().filter(|r| r.error.is_some()).count(),
                violations: mine.iter().filter(|r| r.satisfied == Some(false)).count(),
                mean_error: PerParam::from_fn(|p| mean(p) - truth.get(p)),
                mean_abs_error: PerParam::from_fn(|p| column(p).map(|v| (v - truth.get(p)).abs()).sum::<f64>() / n),
                median_abs_error: PerParam::from_fn(|p| {
                    median(&mut column(p).map(|v| (v - truth.get(p)).abs()).collect::<Vec<_>>())
                }),
                std_dev: PerParam::from_fn(|p| {
                    let m = mean(p);
                    (column(p).map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
                }),
            }
        })
        .collect()
}

/// Runs every fit of the experiment. Runs execute in parallel on the
/// current rayon pool; records come back ordered by run, then algorithm.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let shared = match config.mode {
        ExperimentMode::Inits => Some(config.dataset_for_run(0)?),
        ExperimentMode::Datasets => None,
    };

    let per_run: Vec<Vec<RunRecord>> = (0..config.runs)
        .into_par_iter()
        .map(|run| -> Result<Vec<RunRecord>> {
            let owned;
            let dataset = match &shared {
                Some(d) => d,
                None => {
                    owned = config.dataset_for_run(run)?;
                    &owned
                }
            };
            let init = config.initial_guess_for_run(run);
            Ok(config
                .algorithms
                .iter()
                .map(|&algorithm| {
                    let started = Instant::now();
                    let outcome = config.fit(algorithm, dataset, init);
                    let ms = started.elapsed().as_secs_f64() * 1e3;
                    RunRecord::from_outcome(run, algorithm, config.dataset_seed(run), init, &outcome, ms)
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let records: Vec<RunRecord> = per_run.into_iter().flatten().collect();
    let summary = summarize(&records, &config.true_theta, &config.algorithms);
    Ok(ExperimentResult { config: config.clone(), records, summary })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Plot-ready CSV, one row per record.
pub fn write_runs_csv<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let map_err = |e: csv::Error| Error::InvalidConfig(format!("csv: {e}"));
    writer
        .write_record([
            "run",
            "algorithm",
            "dataset_seed",
            "init_l0",
            "init_g",
            "init_s",
            "init_r",
            "l0",
            "g",
            "s",
            "r",
            "log_likelihood",
            "satisfied",
            "margin",
            "iterations",
            "converged",
            "wall_time_ms",
            "error",
        ])
        .map_err(map_err)?;
    for r in records {
        let init = r.initial_theta.to_array();
        let fitted = r.fitted_theta.map(|t| t.to_array());
        let mut row = vec![r.run.to_string(), r.algorithm.to_string(), r.dataset_seed.to_string()];
        row.extend(init.iter().map(f64::to_string));
        row.extend((0..4).map(|i| opt(fitted.map(|f| f[i]))));
        row.extend([
            opt(r.log_likelihood),
            opt(r.satisfied.map(u8::from)),
            opt(r.margin),
            r.iterations.to_string(),
            u8::from(r.converged).to_string(),
            format!("{:.3}", r.wall_time_ms),
            r.error.clone().unwrap_or_default(),
        ]);
        writer.write_record(&row).map_err(map_err)?;
    }
    writer.flush()?;
    Ok(())
}
