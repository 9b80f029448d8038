use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bkt::baum_welch::fit_baum_welch;
use bkt::data::{read_dataset, write_dataset, write_ground_truth};
use bkt::estep::write_posteriors_csv;
use bkt::experiment::{run_experiment, write_runs_csv, ExperimentConfig, ExperimentResult};
use bkt::interior_point::fit_constrained;
use bkt::params::validate_params;
use bkt::plot::scatter_svg;
use bkt::simulate::simulate_dataset;
use bkt::{Algorithm, BarrierSchedule, Error, FitOptions, ParamSet};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NON_CONVERGENCE: u8 = 4;
const EXIT_DEGENERATE: u8 = 5;

/// Fit, simulate and validate Bayesian Knowledge Tracing models.
///
/// Exit status: 0 success, 2 usage, 3 I/O or parse error, 4 non-convergence,
/// 5 degenerate (constraint-violating) result.
#[derive(Debug, Parser)]
#[command(name = "bkt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate learners and write `learner_id,step,correct` CSV plus a
    /// `<out>.meta.json` sidecar.
    Simulate(SimulateArgs),
    /// Fit a dataset and write the fit report as JSON.
    Fit(FitArgs),
    /// Run a dataset or initial-guess comparison study.
    Experiment(ExperimentArgs),
    /// Check a parameter file against every constraint.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Generating parameters (JSON with l0, g, s, r).
    #[arg(long, required_unless_present = "from_meta")]
    params: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    learners: usize,
    #[arg(long, default_value_t = 10)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Regenerate from an existing sidecar instead of the flags above.
    #[arg(long, conflicts_with = "params")]
    from_meta: Option<PathBuf>,
    /// Dataset CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write hidden proficiency states to this CSV.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    BaumWelch,
    Constrained,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::BaumWelch => Algorithm::BaumWelch,
            AlgorithmArg::Constrained => Algorithm::Constrained,
        }
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Dataset CSV.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    algorithm: AlgorithmArg,
    /// Initial parameters (JSON). Drawn from the seed when absent.
    #[arg(long)]
    init: Option<PathBuf>,
    /// FitOptions JSON; individual flags below take precedence.
    #[arg(long)]
    options: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    loglik_tolerance: Option<f64>,
    #[arg(long)]
    param_tolerance: Option<f64>,
    #[command(flatten)]
    schedule: ScheduleArgs,
    /// Report destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write posteriors at the fitted parameters to this CSV.
    #[arg(long)]
    posteriors: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScheduleArgs {
    /// BarrierSchedule JSON; individual flags below take precedence.
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long)]
    mu_initial: Option<f64>,
    #[arg(long)]
    mu_decay: Option<f64>,
    #[arg(long)]
    mu_floor: Option<f64>,
    #[arg(long)]
    newton_tolerance: Option<f64>,
    #[arg(long)]
    max_newton_steps: Option<usize>,
    #[arg(long)]
    fraction_to_boundary: Option<f64>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// ExperimentConfig JSON.
    #[arg(long, required_unless_present = "from_result")]
    config: Option<PathBuf>,
    /// Rebuild CSV and SVG from a saved result.json without refitting.
    #[arg(long, conflicts_with = "config")]
    from_result: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    jobs: Option<usize>,
    /// Also write scatter.svg.
    #[arg(long)]
    svg: bool,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Parameter JSON with l0, g, s, r.
    params: PathBuf,
}

/// Sidecar written next to every simulated dataset.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulationMeta {
    theta: ParamSet,
    learners: usize,
    steps: usize,
    seed: u64,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure { code, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidConfig(_) | Error::ZeroSize { .. } => EXIT_USAGE,
            Error::NonConvergence { .. } | Error::SingularSystem { .. } => EXIT_NON_CONVERGENCE,
            Error::DegenerateStatistics { .. } | Error::InfeasibleState { .. } | Error::UndefinedFixedPoint { .. } => {
                EXIT_DEGENERATE
            }
            _ => EXIT_DATA,
        };
        Failure::new(code, e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::new(EXIT_DATA, format!("{}: {e}", path.display()))
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| io_failure(path, e))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_failure(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_reader(open(path)?).map_err(|e| io_failure(path, e))
}

fn write_json<T: Serialize>(value: &T, mut out: impl Write, path: &Path) -> CliResult<()> {
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| io_failure(path, e))?;
    writeln!(out).and_then(|_| out.flush()).map_err(|e| io_failure(path, e))
}

fn with_context<T>(path: &Path, result: bkt::Result<T>) -> CliResult<T> {
    result.map_err(|e| {
        let mut failure = Failure::from(e);
        failure.message = format!("{}: {}", path.display(), failure.message);
        failure
    })
}

fn meta_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

fn simulate(args: SimulateArgs) -> CliResult<u8> {
    let meta = match (&args.from_meta, &args.params) {
        (Some(path), _) => read_json::<SimulationMeta>(path)?,
        (None, Some(path)) => {
            SimulationMeta { theta: read_json(path)?, learners: args.learners, steps: args.steps, seed: args.seed }
        }
        (None, None) => unreachable!("clap requires one of --params / --from-meta"),
    };
    let sim = simulate_dataset(&meta.theta, meta.learners, meta.steps, meta.seed)?;
    with_context(&args.out, write_dataset(&sim.dataset, create(&args.out)?))?;
    if let Some(truth) = &args.truth {
        with_context(truth, write_ground_truth(&sim.dataset, &sim.hidden_paths, create(truth)?))?;
    }
    let sidecar = meta_path(&args.out);
    write_json(&meta, create(&sidecar)?, &sidecar)?;
    Ok(0)
}

fn fit_options(args: &FitArgs) -> CliResult<FitOptions> {
    let mut opts = match &args.options {
        Some(path) => read_json(path)?,
        None => FitOptions::default(),
    };
    if let Some(v) = args.seed {
        opts.seed = v;
    }
    if let Some(v) = args.max_iterations {
        opts.max_iterations = v;
    }
    if let Some(v) = args.loglik_tolerance {
        opts.loglik_tolerance = v;
    }
    if let Some(v) = args.param_tolerance {
        opts.param_tolerance = v;
    }
    opts.validate()?;
    Ok(opts)
}

fn barrier_schedule(args: &ScheduleArgs) -> CliResult<BarrierSchedule> {
    let mut schedule = match &args.schedule {
        Some(path) => read_json(path)?,
        None => BarrierSchedule::default(),
    };
    if let Some(v) = args.mu_initial {
        schedule.mu_initial = v;
    }
    if let Some(v) = args.mu_decay {
        schedule.decay = v;
    }
    if let Some(v) = args.mu_floor {
        schedule.mu_floor = v;
    }
    if let Some(v) = args.newton_tolerance {
        schedule.newton_tolerance = v;
    }
    if let Some(v) = args.max_newton_steps {
        schedule.max_newton_steps = v;
    }
    if let Some(v) = args.fraction_to_boundary {
        schedule.fraction_to_boundary = v;
    }
    schedule.validate()?;
    Ok(schedule)
}

fn fit(args: FitArgs) -> CliResult<u8> {
    let opts = fit_options(&args)?;
    let schedule = barrier_schedule(&args.schedule)?;
    let dataset = with_context(&args.data, read_dataset(open(&args.data)?))?;
    let init = match &args.init {
        Some(path) => read_json(path)?,
        None => opts.initial_guess(),
    };
    let algorithm = Algorithm::from(args.algorithm);
    let report = match algorithm {
        Algorithm::BaumWelch => fit_baum_welch(&dataset, init, &opts)?,
        Algorithm::Constrained => fit_constrained(&dataset, init, &opts, &schedule)?,
    };

    match &args.out {
        Some(path) => write_json(&report, create(path)?, path)?,
        None => write_json(&report, io::stdout().lock(), Path::new("<stdout>"))?,
    }
    if let Some(path) = &args.posteriors {
        with_context(path, write_posteriors_csv(&report.theta_hat, &dataset, create(path)?))?;
    }

    if !report.converged {
        eprintln!("bkt: no convergence within {} iterations", report.iterations);
        Ok(EXIT_NON_CONVERGENCE)
    } else if !report.constraints.satisfied {
        eprintln!("bkt: fitted parameters {} violate the constraints", report.theta_hat);
        Ok(EXIT_DEGENERATE)
    } else {
        Ok(0)
    }
}

fn write_experiment_outputs(result: &ExperimentResult, out_dir: &Path, svg: bool) -> CliResult<()> {
    fs::create_dir_all(out_dir).map_err(|e| io_failure(out_dir, e))?;
    let json = out_dir.join("result.json");
    write_json(result, create(&json)?, &json)?;
    let summary = out_dir.join("summary.json");
    write_json(&result.summary, create(&summary)?, &summary)?;
    let runs = out_dir.join("runs.csv");
    with_context(&runs, write_runs_csv(&result.records, create(&runs)?))?;
    if svg {
        let path = out_dir.join("scatter.svg");
        fs::write(&path, scatter_svg(&result.records, Some(&result.config.true_theta)))
            .map_err(|e| io_failure(&path, e))?;
    }
    Ok(())
}

fn experiment(args: ExperimentArgs) -> CliResult<u8> {
    let result = match (&args.config, &args.from_result) {
        (_, Some(path)) => read_json::<ExperimentResult>(path)?,
        (Some(path), None) => {
            let config: ExperimentConfig = read_json(path)?;
            config.validate()?;
            let mut pool = rayon::ThreadPoolBuilder::new();
            if let Some(jobs) = args.jobs {
                if jobs == 0 {
                    return Err(Failure::new(EXIT_USAGE, "--jobs must be at least 1"));
                }
                pool = pool.num_threads(jobs);
            }
            let pool = pool.build().map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))?;
            pool.install(|| run_experiment(&config))?
        }
        (None, None) => unreachable!("clap requires one of --config / --from-result"),
    };
    write_experiment_outputs(&result, &args.out_dir, args.svg)?;
    for s in &result.summary {
        println!(
            "{:<12} runs {:>4}  failures {:>3}  violations {:>3}  mean |err| l0 {:.4} g {:.4} s {:.4} r {:.4}",
            s.algorithm,
            s.runs,
            s.failures,
            s.violations,
            s.mean_abs_error.l0,
            s.mean_abs_error.g,
            s.mean_abs_error.s,
            s.mean_abs_error.r
        );
    }
    Ok(0)
}

fn validate(args: ValidateArgs) -> CliResult<u8> {
    let theta: ParamSet = read_json(&args.params)?;
    let report = validate_params(&theta);
    write_json(&report, io::stdout().lock(), Path::new("<stdout>"))?;
    Ok(if report.satisfied { 0 } else { EXIT_DEGENERATE })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Fit(args) => fit(args),
        Command::Experiment(args) => experiment(args),
        Command::Validate(args) => validate(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            eprintln!("bkt: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
