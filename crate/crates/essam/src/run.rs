//! Run orchestration: validated configs, the training loop, metrics,
//! checkpoints, the replay log, and deterministic resume.
//!
//! A run directory is self-describing:
//!
//! * `config.json` -- the full [`RunConfig`], written before any work.
//! * `metrics.jsonl` -- one [`MetricsRow`] per phase per iteration.
//! * `replay.log` -- binary iteration records (seeds, weights, steps,
//!   digests); everything needed to re-apply the runs's updates.
//! * `params-<t>.bin` -- checkpoint after `t` iterations; `params-0.bin` is
//!   the initial state and `params-final.bin` the latest final state.
//!
//! [`resume`] loads the newest checkpoint, replays the logged records past
//! it (verifying digests as it goes), and continues the loop; a run of `T`
//! iterations split anywhere produces byte-identical metrics and digests
//! to an unbroken run, wall-clock fields aside.

use std::fs::{File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::es::{
    es_step_with, essam_step_with, replay_record, EsConfig, EsError, LocalPopulation,
};
use crate::noise::{derive_seed, Seed};
use crate::objectives::{
    make_objective, BatchRef, DatasetIterator, Objective, ObjectiveError, ObjectiveSpec,
};
use crate::parallel::WorkerPool;
use crate::params::{InitRule, ParamDigest, ParamStore, StoreError};
use crate::record::{self, IterationRecord, RecordError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("run directory {0} already contains a run")]
    AlreadyStarted(PathBuf),
    #[error("no usable checkpoint in {0}")]
    MissingCheckpoint(PathBuf),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error(transparent)]
    Es(#[from] EsError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Es,
    Essam,
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "es" => Ok(Algorithm::Es),
            "essam" => Ok(Algorithm::Essam),
            other => Err(format!("unknown algorithm {other:?}; expected es or essam")),
        }
    }
}

/// Serializable initialization rule; the config-file face of [`InitRule`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitSpec {
    Zeros,
    Constant { value: f64 },
    Gaussian { seed: u64, scale: f64 },
    FromFile { path: PathBuf },
}

impl InitSpec {
    fn rule(&self) -> InitRule {
        match self {
            InitSpec::Zeros => InitRule::Zeros,
            InitSpec::Constant { value } => InitRule::Constant(*value),
            InitSpec::Gaussian { seed, scale } => InitRule::SeededGaussian {
                seed: Seed(*seed),
                scale: *scale,
            },
            InitSpec::FromFile { path } => InitRule::FromFile(path.clone()),
        }
    }
}

/// Everything a run needs, serialized verbatim into the run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub objective: ObjectiveSpec,
    pub population: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub rho: f64,
    pub delta: f64,
    pub iterations: u64,
    pub master_seed: u64,
    pub workers: usize,
    /// Minibatch size for dataset objectives; 0 means the full dataset.
    pub batch_size: usize,
    pub init: InitSpec,
    pub out: PathBuf,
    /// Checkpoint every this many iterations; 0 disables periodic
    /// checkpoints (initial and final are always written).
    pub checkpoint_every: u64,
}

impl RunConfig {
    pub fn es_config(&self) -> EsConfig {
        EsConfig {
            population: self.population,
            sigma: self.sigma,
            alpha: self.alpha,
            rho: self.rho,
            delta: self.delta,
            iterations: self.iterations,
            master_seed: Seed(self.master_seed),
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        self.es_config().validate()?;
        if self.workers == 0 {
            return Err(RunError::Config("workers must be at least 1".into()));
        }
        let dataset = make_objective(&self.objective)?.dataset_size();
        match (dataset, self.batch_size) {
            (None, 0) => {}
            (None, _) => {
                return Err(RunError::Config(
                    "batch_size set but the objective has no dataset to batch".into(),
                ))
            }
            (Some(size), b) if b > size => {
                return Err(RunError::Config(format!(
                    "batch_size {b} exceeds the dataset size {size}"
                )))
            }
            (Some(_), _) => {}
        }
        Ok(())
    }
}

/// Fixed hyperparameter bundles. `n40` and `n60` carry the step sizes used
/// for large language-model fine-tuning runs; they are far too conservative
/// for the analytic objectives, where `synthetic` converges in minutes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperPreset {
    pub population: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub rho: f64,
    pub delta: f64,
}

pub const PRESET_N40: HyperPreset = HyperPreset {
    population: 40,
    sigma: 1.5e-3,
    alpha: 2.5e-4,
    rho: 1e-4,
    delta: 1e-8,
};

pub const PRESET_N60: HyperPreset = HyperPreset {
    population: 60,
    sigma: 2e-3,
    alpha: 2.5e-4,
    rho: 1e-4,
    delta: 1e-8,
};

pub const PRESET_SYNTHETIC: HyperPreset = HyperPreset {
    population: 40,
    sigma: 2e-3,
    alpha: 1e-2,
    rho: 5e-3,
    delta: 1e-8,
};

pub fn preset(name: &str) -> Option<HyperPreset> {
    match name {
        "n40" => Some(PRESET_N40),
        "n60" => Some(PRESET_N60),
        "synthetic" => Some(PRESET_SYNTHETIC),
        _ => None,
    }
}

impl HyperPreset {
    pub fn apply(&self, config: &mut RunConfig) {
        config.population = self.population;
        config.sigma = self.sigma;
        config.alpha = self.alpha;
        config.rho = self.rho;
        config.delta = self.delta;
    }
}

/// One metrics line: a phase of one iteration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsRow {
    pub t: u64,
    pub phase: String,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub reward_max: f64,
    pub wall_ms: f64,
    pub digest: String,
}

impl MetricsRow {
    fn from_phase(t: u64, phase: &str, record: &crate::record::PhaseRecord) -> Self {
        MetricsRow {
            t,
            phase: phase.to_string(),
            reward_mean: record.reward_mean,
            reward_std: record.reward_std,
            reward_max: record.reward_max,
            wall_ms: record.wall_ms,
            digest: record.digest.to_hex(),
        }
    }
}

/// Summary of a completed (or extended) run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub iterations_completed: u64,
    pub final_digest: ParamDigest,
    pub final_reward: f64,
}

enum Backend {
    Local {
        store: ParamStore,
        objective: Box<dyn Objective>,
    },
    Pool {
        pool: WorkerPool,
        objective: Arc<dyn Objective>,
    },
}

impl Backend {
    fn build(config: &RunConfig, store: ParamStore) -> Result<Self, RunError> {
        let objective = make_objective(&config.objective)?;
        if objective.dim() != store.dim() {
            return Err(RunError::Config(format!(
                "objective dimension {} does not match checkpoint dimension {}",
                objective.dim(),
                store.dim()
            )));
        }
        if config.workers > 1 {
            let objective: Arc<dyn Objective> = Arc::from(objective);
            let pool = WorkerPool::new(store, objective.clone(), config.workers)?;
            Ok(Backend::Pool { pool, objective })
        } else {
            Ok(Backend::Local { store, objective })
        }
    }

    fn step(
        &mut self,
        algorithm: Algorithm,
        cfg: &EsConfig,
        batch: &BatchRef,
        t: u64,
    ) -> Result<IterationRecord, EsError> {
        match self {
            Backend::Local { store, objective } => {
                let mut pop = LocalPopulation {
                    store,
                    objective: objective.as_ref(),
                };
                match algorithm {
                    Algorithm::Es => es_step_with(&mut pop, cfg, batch, t),
                    Algorithm::Essam => essam_step_with(&mut pop, cfg, batch, t),
                }
            }
            Backend::Pool { pool, .. } => match algorithm {
                Algorithm::Es => es_step_with(pool, cfg, batch, t),
                Algorithm::Essam => essam_step_with(pool, cfg, batch, t),
            },
        }
    }

    fn params(&self) -> &ParamStore {
        match self {
            Backend::Local { store, .. } => store,
            Backend::Pool { pool, .. } => pool.master(),
        }
    }

    fn evaluate(&self, batch: &BatchRef) -> f64 {
        match self {
            Backend::Local { store, objective } => objective.evaluate(store, batch),
            Backend::Pool { pool, objective } => objective.evaluate(pool.master(), batch),
        }
    }
}

fn batcher(config: &RunConfig) -> Result<Option<DatasetIterator>, RunError> {
    let dataset = make_objective(&config.objective)?.dataset_size();
    match dataset {
        Some(size) if config.batch_size > 0 => Ok(Some(DatasetIterator::new(
            size,
            config.batch_size,
            derive_seed(Seed(config.master_seed), 0, 4, 0),
        )?)),
        _ => Ok(None),
    }
}

fn checkpoint_path(dir: &Path, iterations_done: u64) -> PathBuf {
    dir.join(format!("params-{iterations_done}.bin"))
}

/// Executes the main loop for `count` iterations starting at `start`,
/// appending to the run directory's metrics and replay log.
fn drive(
    dir: &Path,
    config: &RunConfig,
    mut backend: Backend,
    start: u64,
    count: u64,
) -> Result<RunOutcome, RunError> {
    let cfg = config.es_config();
    let mut metrics = BufWriter::new(
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join("metrics.jsonl"))?,
    );
    let mut replay = BufWriter::new(
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join("replay.log"))?,
    );
    let mut batches = batcher(config)?;
    if let Some(it) = batches.as_mut() {
        it.skip_batches(start);
    }

    for t in start..start + count {
        let batch = match batches.as_mut() {
            Some(it) => it.next_batch(),
            None => BatchRef::empty(),
        };
        let record = backend.step(config.algorithm, &cfg, &batch, t)?;
        if let Some(probe) = &record.probe {
            serde_json::to_writer(&mut metrics, &MetricsRow::from_phase(t, "probe", probe))?;
            metrics.write_all(b"\n")?;
        }
        serde_json::to_writer(
            &mut metrics,
            &MetricsRow::from_phase(t, "update", &record.update),
        )?;
        metrics.write_all(b"\n")?;
        record::write_record(&mut replay, &record)?;
        metrics.flush()?;
        replay.flush()?;

        let done = t + 1;
        if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 {
            backend.params().save(&checkpoint_path(dir, done))?;
        }
    }

    backend.params().save(&dir.join("params-final.bin"))?;
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        iterations_completed: start + count,
        final_digest: backend.params().digest(),
        final_reward: backend.evaluate(&BatchRef::empty()),
    })
}

/// Starts a fresh run in `config.out`, which must not already hold one.
pub fn run(config: &RunConfig) -> Result<RunOutcome, RunError> {
    config.validate()?;
    let dir = config.out.clone();
    std::fs::create_dir_all(&dir)?;
    let config_path = dir.join("config.json");
    if config_path.exists() {
        return Err(RunError::AlreadyStarted(dir));
    }
    let mut file = File::create(&config_path)?;
    serde_json::to_writer_pretty(&mut file, config)?;
    file.write_all(b"\n")?;

    let layout = config.objective.layer_layout();
    let refs: Vec<(&str, usize)> = layout.iter().map(|(n, l)| (n.as_str(), *l)).collect();
    let store = ParamStore::create(&refs, config.init.rule())?;
    store.save(&checkpoint_path(&dir, 0))?;

    let backend = Backend::build(config, store)?;
    drive(&dir, config, backend, 0, config.iterations)
}

/// Reads the config stored in a run directory.
pub fn load_config(dir: &Path) -> Result<RunConfig, RunError> {
    let file = File::open(dir.join("config.json"))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

fn latest_checkpoint(dir: &Path, up_to: u64) -> Option<(u64, PathBuf)> {
    let mut best: Option<(u64, PathBuf)> = None;
    let entries = std::fs::read_dir(dir).ok()?;
    for entry in entries.flatten() {
        let name = entry.file_name();
        let name = name.to_string_lossy();
        let Some(number) = name
            .strip_prefix("params-")
            .and_then(|rest| rest.strip_suffix(".bin"))
            .and_then(|digits| digits.parse::<u64>().ok())
        else {
            continue;
        };
        if number <= up_to && best.as_ref().is_none_or(|(b, _)| number > *b) {
            best = Some((number, entry.path()));
        }
    }
    best
}

/// Continues a run for `additional` iterations. The newest on-disk
/// checkpoint is loaded and the replay log's remaining records are
/// re-applied to it, with every recorded digest verified, before any new
/// iteration executes.
pub fn resume(dir: &Path, additional: u64) -> Result<RunOutcome, RunError> {
    let config = load_config(dir)?;
    config.validate()?;

    let mut replay_file = BufReader::new(File::open(dir.join("replay.log"))?);
    let records = record::read_all(&mut replay_file)?;
    let done = records.len() as u64;
    for (index, record) in records.iter().enumerate() {
        if record.iteration != index as u64 {
            return Err(RunError::Config(format!(
                "replay log records iteration {} at position {index}",
                record.iteration
            )));
        }
    }

    let (at, path) =
        latest_checkpoint(dir, done).ok_or_else(|| RunError::MissingCheckpoint(dir.into()))?;
    let mut store = ParamStore::load_with_dim(&path, config.objective.dim())?;
    for record in &records[at as usize..] {
        replay_record(&mut store, record, config.sigma)?;
    }

    let backend = Backend::build(&config, store)?;
    drive(dir, &config, backend, done, additional)
}
