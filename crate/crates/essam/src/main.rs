//! Command line front end with four subcommands:
//!
//! * `run` -- start a training run in a fresh output directory
//! * `resume` -- continue a run directory for additional iterations
//! * `verify` -- Monte-Carlo checks of the gradient-estimator identities
//! * `score` -- rule-based reward scoring of a response corpus
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure,
//! 3 verification failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use essam::es::EsError;
use essam::noise::Seed;
use essam::objectives::ObjectiveSpec;
use essam::reward;
use essam::run::{self, preset, Algorithm, InitSpec, RunConfig, RunError, PRESET_N40};
use essam::verify::{self, Check, SuiteConfig, ALL_CHECKS};

#[derive(Parser)]
#[command(name = "essam", version, about = "Evolution strategies with seed replay and a sharpness-aware variant")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a training run in a fresh output directory.
    Run(RunArgs),
    /// Continue a run directory for additional iterations.
    Resume(ResumeArgs),
    /// Run Monte-Carlo checks of the estimator identities.
    Verify(VerifyArgs),
    /// Score a JSONL response corpus with the rule-based reward.
    Score(ScoreArgs),
}

/// Hyperparameter flags shared by `run` (where they override the config)
/// and `resume` (where they must match the stored config).
#[derive(Args)]
struct Overrides {
    /// Optimizer: es or essam.
    #[arg(long)]
    algo: Option<Algorithm>,
    /// Objective by name: sphere, rosenbrock, or rastrigin. Other
    /// objectives (linear, mlp, rule_corpus) are spelled in a config file.
    #[arg(long)]
    objective: Option<String>,
    /// Dimension for the named objectives.
    #[arg(long)]
    dim: Option<usize>,
    /// Population size.
    #[arg(short = 'N', long)]
    population: Option<usize>,
    /// Perturbation scale.
    #[arg(long)]
    sigma: Option<f64>,
    /// Sharpness step size (0 disables the probe stage).
    #[arg(long)]
    rho: Option<f64>,
    /// Learning rate.
    #[arg(long)]
    alpha: Option<f64>,
    /// Reward normalization floor.
    #[arg(long)]
    delta: Option<f64>,
    /// Worker replica count.
    #[arg(long)]
    workers: Option<usize>,
    /// Minibatch size for dataset objectives (0 = full dataset).
    #[arg(long)]
    batch_size: Option<usize>,
    /// Master seed for the whole run.
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint every this many iterations (0 = only initial and final).
    #[arg(long)]
    checkpoint_every: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    /// JSON file holding a full run config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named hyperparameter bundle: n40, n60, or synthetic. Applied after
    /// the config file and before individual flags.
    #[arg(long)]
    preset: Option<String>,
    /// Iterations to execute.
    #[arg(long)]
    iters: Option<u64>,
    /// Output directory for config, metrics, replay log, and checkpoints.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct ResumeArgs {
    /// Run directory created by `run`.
    dir: PathBuf,
    /// Additional iterations to execute.
    #[arg(long, default_value_t = 0)]
    iters: u64,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct VerifyArgs {
    /// Check to run (repeatable): mean, variance, norm, ratio. All four
    /// when omitted.
    #[arg(long = "check")]
    checks: Vec<Check>,
    /// Monte-Carlo trials per check.
    #[arg(long)]
    trials: Option<u64>,
    /// True gradient coordinates, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    g: Option<Vec<f64>>,
    /// Dimension; fills the gradient with twos when --g is omitted.
    #[arg(long = "d", alias = "dim")]
    dim: Option<usize>,
    /// Population size.
    #[arg(short = 'N', long)]
    population: Option<usize>,
    /// Perturbation scale.
    #[arg(long)]
    sigma: Option<f64>,
    /// Master seed for the trial schedule.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the report rows to this JSONL file.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    /// JSONL corpus of {"response", "gold"} rows.
    corpus: PathBuf,
    /// Write per-line scores as JSONL to this file.
    #[arg(long)]
    report: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }
}

fn es_failure(error: EsError) -> Failure {
    match &error {
        EsError::InvalidConfig(_) | EsError::PopulationTooSmall(_) => {
            Failure::config(error.to_string())
        }
        _ => Failure::runtime(error.to_string()),
    }
}

fn run_failure(error: RunError) -> Failure {
    match &error {
        RunError::Config(_)
        | RunError::AlreadyStarted(_)
        | RunError::ConfigMismatch(_)
        | RunError::MissingCheckpoint(_)
        | RunError::Json(_)
        | RunError::Objective(_) => Failure::config(error.to_string()),
        RunError::Es(inner) => es_failure_kind(inner, error.to_string()),
        _ => Failure::runtime(error.to_string()),
    }
}

fn es_failure_kind(inner: &EsError, message: String) -> Failure {
    match inner {
        EsError::InvalidConfig(_) | EsError::PopulationTooSmall(_) => Failure::config(message),
        _ => Failure::runtime(message),
    }
}

fn default_config() -> RunConfig {
    RunConfig {
        algorithm: Algorithm::Essam,
        objective: ObjectiveSpec::Sphere { dim: 100 },
        population: PRESET_N40.population,
        sigma: PRESET_N40.sigma,
        alpha: PRESET_N40.alpha,
        rho: PRESET_N40.rho,
        delta: PRESET_N40.delta,
        iterations: 100,
        master_seed: 2026,
        workers: 1,
        batch_size: 0,
        init: InitSpec::Gaussian {
            seed: 1,
            scale: 0.1,
        },
        out: PathBuf::new(),
        checkpoint_every: 0,
    }
}

fn named_objective(name: &str, dim: usize) -> Result<ObjectiveSpec, Failure> {
    match name {
        "sphere" => Ok(ObjectiveSpec::Sphere { dim }),
        "rosenbrock" => Ok(ObjectiveSpec::Rosenbrock { dim }),
        "rastrigin" => Ok(ObjectiveSpec::Rastrigin { dim }),
        other => Err(Failure::config(format!(
            "unknown objective {other:?}; sphere, rosenbrock, and rastrigin \
             are available as flags, anything else via --config"
        ))),
    }
}

fn apply_overrides(config: &mut RunConfig, o: &Overrides) -> Result<(), Failure> {
    if let Some(name) = &o.objective {
        let dim = o.dim.unwrap_or(100);
        config.objective = named_objective(name, dim)?;
    } else if let Some(dim) = o.dim {
        config.objective = match &config.objective {
            ObjectiveSpec::Sphere { .. } => ObjectiveSpec::Sphere { dim },
            ObjectiveSpec::Rosenbrock { .. } => ObjectiveSpec::Rosenbrock { dim },
            ObjectiveSpec::Rastrigin { .. } => ObjectiveSpec::Rastrigin { dim },
            other => {
                return Err(Failure::config(format!(
                    "--dim does not apply to the configured objective {other:?}"
                )))
            }
        };
    }
    if let Some(v) = o.algo {
        config.algorithm = v;
    }
    if let Some(v) = o.population {
        config.population = v;
    }
    if let Some(v) = o.sigma {
        config.sigma = v;
    }
    if let Some(v) = o.rho {
        config.rho = v;
    }
    if let Some(v) = o.alpha {
        config.alpha = v;
    }
    if let Some(v) = o.delta {
        config.delta = v;
    }
    if let Some(v) = o.workers {
        config.workers = v;
    }
    if let Some(v) = o.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = o.seed {
        config.master_seed = v;
    }
    if let Some(v) = o.checkpoint_every {
        config.checkpoint_every = v;
    }
    Ok(())
}

/// Refuses any resume flag that disagrees with the stored config.
fn check_overrides(stored: &RunConfig, o: &Overrides) -> Result<(), Failure> {
    let mut checked = stored.clone();
    apply_overrides(&mut checked, o)?;
    if checked != *stored {
        return Err(Failure::config(
            "flags disagree with the config stored in the run directory; \
             resume continues a run exactly as configured"
                .to_string(),
        ));
    }
    Ok(())
}

fn print_outcome(outcome: &run::RunOutcome) {
    println!("run directory: {}", outcome.dir.display());
    println!("iterations completed: {}", outcome.iterations_completed);
    println!("final reward: {:.6e}", outcome.final_reward);
    println!("final digest: {}", outcome.final_digest);
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, Failure> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Failure::config(format!("cannot read config {}: {e}", path.display()))
            })?;
            serde_json::from_str(&text).map_err(|e| {
                Failure::config(format!("cannot parse config {}: {e}", path.display()))
            })?
        }
        None => default_config(),
    };
    if let Some(name) = &args.preset {
        let bundle = preset(name).ok_or_else(|| {
            Failure::config(format!(
                "unknown preset {name:?}; expected n40, n60, or synthetic"
            ))
        })?;
        bundle.apply(&mut config);
    }
    apply_overrides(&mut config, &args.overrides)?;
    if let Some(iters) = args.iters {
        config.iterations = iters;
    }
    if let Some(out) = args.out {
        config.out = out;
    }
    if config.out.as_os_str().is_empty() {
        return Err(Failure::config(
            "an output directory is required: pass --out or set it in the config file",
        ));
    }
    let outcome = run::run(&config).map_err(run_failure)?;
    print_outcome(&outcome);
    Ok(ExitCode::SUCCESS)
}

fn cmd_resume(args: ResumeArgs) -> Result<ExitCode, Failure> {
    let stored = run::load_config(&args.dir).map_err(run_failure)?;
    check_overrides(&stored, &args.overrides)?;
    let outcome = run::resume(&args.dir, args.iters).map_err(run_failure)?;
    print_outcome(&outcome);
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode, Failure> {
    let mut cfg = SuiteConfig::default();
    match (&args.g, args.dim) {
        (Some(g), Some(d)) if g.len() != d => {
            return Err(Failure::config(format!(
                "--g has {} coordinates but --d is {d}",
                g.len()
            )))
        }
        (Some(g), _) => cfg.g = g.clone(),
        (None, Some(d)) => cfg.g = vec![2.0; d],
        (None, None) => {}
    }
    if let Some(v) = args.trials {
        cfg.trials = v;
    }
    if let Some(v) = args.population {
        cfg.population = v;
    }
    if let Some(v) = args.sigma {
        cfg.sigma = v;
    }
    if let Some(v) = args.seed {
        cfg.master_seed = Seed(v);
    }
    if cfg.g.is_empty() || cfg.g.iter().any(|x| !x.is_finite()) {
        return Err(Failure::config("--g needs at least one finite coordinate"));
    }
    if cfg.population < 2 {
        return Err(Failure::config("population must be at least 2"));
    }
    if !(cfg.sigma.is_finite() && cfg.sigma > 0.0) {
        return Err(Failure::config("sigma must be finite and positive"));
    }
    if cfg.trials == 0 {
        return Err(Failure::config("at least one trial is required"));
    }

    let checks: Vec<Check> = if args.checks.is_empty() {
        ALL_CHECKS.to_vec()
    } else {
        args.checks.clone()
    };
    let reports = verify::run_suite(&cfg, &checks).map_err(es_failure)?;
    verify::write_reports(std::io::stdout().lock(), &reports)
        .map_err(|e| Failure::runtime(format!("cannot write reports: {e}")))?;
    if let Some(path) = &args.report {
        let file = std::fs::File::create(path).map_err(|e| {
            Failure::runtime(format!("cannot create {}: {e}", path.display()))
        })?;
        verify::write_reports(file, &reports)
            .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))?;
    }
    if verify::suite_passed(&reports) {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(3))
    }
}

fn cmd_score(args: ScoreArgs) -> Result<ExitCode, Failure> {
    let report = reward::score_corpus(&args.corpus)
        .map_err(|e| Failure::config(format!("{}: {e}", args.corpus.display())))?;
    for item in &report.items {
        println!(
            "line {}: accuracy {}, format {:.1}, total {:.2}",
            item.line, item.accuracy, item.format, item.total
        );
    }
    println!(
        "mean total {:.6} over {} responses",
        report.mean_total,
        report.items.len()
    );
    if let Some(path) = &args.report {
        let mut file = std::fs::File::create(path).map_err(|e| {
            Failure::runtime(format!("cannot create {}: {e}", path.display()))
        })?;
        reward::write_report(&report, &mut file)
            .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(error) => {
            let code = if error.use_stderr() { 1 } else { 0 };
            let _ = error.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Resume(args) => cmd_resume(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Score(args) => cmd_score(args),
    };
    match result {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
