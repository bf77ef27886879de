//! Evolution-strategy optimizers built on seed replay.
//!
//! The building blocks:
//!
//! * [`perturb_in_place`] adds `scale * noise(seed)` to the parameters one
//!   layer at a time, regenerating the noise from the seed as it goes.
//! * [`sre`] (seeded rollout evaluation) scores a population by perturbing,
//!   evaluating, and restoring in place, so the full noise matrix never
//!   exists in memory.
//! * [`zscore`] normalizes raw rewards to the weights used by updates.
//! * [`dipu`] (decomposed in-place parameter update) applies
//!   `eta * (1/N) * sum_n w_n * noise(seed_n)` seed by seed, layer by layer.
//!
//! [`es_step`] composes these into the vanilla update. [`essam_step`] first
//! evaluates a probe population and moves *against* its estimated gradient
//! by `rho` (toward higher sharpness), evaluates a fresh population there,
//! then undoes the probe and applies the update measured at the probe point.
//!
//! Every mutation of the parameters is one of these replayable operations,
//! in a fixed documented order:
//!
//! * ES iteration `t`: perturb/restore sweep over the update-phase seeds
//!   (interleaved with evaluations), then `dipu(seeds, weights, alpha)`.
//! * ESSAM iteration `t`: sweep over probe seeds, `dipu(probe, -rho)`,
//!   sweep over update seeds, `dipu(probe, +rho)`, `dipu(update, alpha)`.
//!
//! [`replay_record`] re-applies exactly this sequence from an
//! [`IterationRecord`], which is what makes checkpoint resume and replica
//! synchronization bit-exact. With `rho = 0` the probe would be a pure
//! drift source, so [`essam_step`] collapses to the ES path and produces an
//! ES-shaped record; both algorithms draw their update population from the
//! same phase slot of the seed schedule, which makes the collapse
//! digest-identical to vanilla ES.

use std::time::Instant;

use thiserror::Error;

use crate::noise::{derive_seed, NoiseStream, Seed};
use crate::objectives::{alloc, BatchRef, Objective};
use crate::params::{ParamDigest, ParamStore, StoreError};
use crate::record::{IterationRecord, PhaseRecord};

/// Seed-schedule slot for a population draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// ESSAM's sharpness probe.
    Probe = 0,
    /// The update population. Vanilla ES draws only from this slot.
    Update = 1,
}

#[derive(Debug, Error)]
pub enum EsError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("population must have at least 2 members, got {0}")]
    PopulationTooSmall(usize),
    #[error("non-finite reward from objective at seed {seed:?}")]
    NonFiniteReward { seed: Seed },
    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),
    #[error("seeds ({seeds}) and weights ({weights}) differ in length")]
    LengthMismatch { seeds: usize, weights: usize },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("worker pool failure: {0}")]
    Worker(String),
    #[error("replay diverged at iteration {iteration} ({phase} phase digest mismatch)")]
    ReplayDivergence { iteration: u64, phase: &'static str },
}

/// Optimizer hyperparameters shared by ES and ESSAM.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EsConfig {
    /// Population size N.
    pub population: usize,
    /// Perturbation scale sigma.
    pub sigma: f64,
    /// Update step size alpha.
    pub alpha: f64,
    /// Probe step size rho; zero collapses ESSAM to vanilla ES.
    pub rho: f64,
    /// Stabilizer added to the reward standard deviation before dividing.
    pub delta: f64,
    /// Number of iterations a run should perform.
    pub iterations: u64,
    /// Root of the deterministic seed schedule.
    pub master_seed: Seed,
}

impl EsConfig {
    pub fn validate(&self) -> Result<(), EsError> {
        if self.population < 2 {
            return Err(EsError::PopulationTooSmall(self.population));
        }
        let positive = [("sigma", self.sigma), ("delta", self.delta)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(EsError::InvalidConfig(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        let non_negative = [("alpha", self.alpha), ("rho", self.rho)];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(EsError::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Seeds of the population draw for one iteration and phase.
    pub fn population_seeds(&self, iteration: u64, phase: Phase) -> Vec<Seed> {
        (0..self.population)
            .map(|member| derive_seed(self.master_seed, iteration, phase as u32, member as u32))
            .collect()
    }
}

/// Result of normalizing a reward vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ZScore {
    pub mean: f64,
    /// Sample standard deviation (the 1/(N-1) form).
    pub std: f64,
    pub normalized: Vec<f64>,
}

/// Centers rewards and divides by `std + delta`. Equal rewards produce an
/// all-zero weight vector, which makes the subsequent update a no-op.
pub fn zscore(rewards: &[f64], delta: f64) -> Result<ZScore, EsError> {
    if rewards.len() < 2 {
        return Err(EsError::PopulationTooSmall(rewards.len()));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(EsError::NonFiniteInput("rewards"));
    }
    if !(delta.is_finite() && delta > 0.0) {
        return Err(EsError::InvalidConfig(format!("delta must be > 0, got {delta}")));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    let normalized = rewards.iter().map(|r| (r - mean) / (std + delta)).collect();
    Ok(ZScore {
        mean,
        std,
        normalized,
    })
}

/// Reusable noise buffer sized to the largest layer, registered with the
/// transient-allocation counters so tests can assert the memory bound.
struct NoiseScratch {
    buf: Vec<f64>,
}

impl NoiseScratch {
    fn for_store(store: &ParamStore) -> Self {
        let capacity = store.max_layer_len();
        alloc::on_alloc(capacity as u64);
        NoiseScratch {
            buf: vec![0.0; capacity],
        }
    }

    fn chunk(&mut self, stream: &mut NoiseStream, len: usize) -> &[f64] {
        stream.fill(&mut self.buf[..len]);
        &self.buf[..len]
    }
}

impl Drop for NoiseScratch {
    fn drop(&mut self) {
        alloc::on_free(self.buf.len() as u64);
    }
}

fn perturb_with(
    store: &mut ParamStore,
    seed: Seed,
    scale: f64,
    scratch: &mut NoiseScratch,
) -> Result<(), EsError> {
    if !scale.is_finite() {
        return Err(EsError::NonFiniteInput("perturbation scale"));
    }
    let mut stream = NoiseStream::open(seed);
    for index in 0..store.layers().len() {
        let len = store.layers()[index].len;
        let chunk = scratch.chunk(&mut stream, len);
        store.axpy_layer_at(index, scale, chunk)?;
    }
    Ok(())
}

/// Adds `scale * noise(seed)` to every layer, in layer order, consuming
/// exactly one variate per parameter element from a single stream. Never
/// materializes more noise than the largest layer.
pub fn perturb_in_place(store: &mut ParamStore, seed: Seed, scale: f64) -> Result<(), EsError> {
    let mut scratch = NoiseScratch::for_store(store);
    perturb_with(store, seed, scale, &mut scratch)
}

/// Shared sweep behind local and distributed evaluation. Every seed's
/// perturbation is applied and undone on this store in seed order, while
/// only the seeds with `index % stride == rank` are evaluated. Replicas
/// that run the identical float-operation sequence stay bit-identical, so
/// a worker sweeps through all seeds even though it scores only its own.
pub(crate) fn sre_assigned(
    store: &mut ParamStore,
    objective: &dyn Objective,
    sigma: f64,
    seeds: &[Seed],
    batch: &BatchRef,
    rank: usize,
    stride: usize,
) -> Result<Vec<(u32, f64)>, EsError> {
    if stride == 0 || rank >= stride {
        return Err(EsError::InvalidConfig(format!(
            "evaluation rank {rank} out of range for stride {stride}"
        )));
    }
    let mut scratch = NoiseScratch::for_store(store);
    let mut rewards = Vec::with_capacity(seeds.len().div_ceil(stride));
    for (index, &seed) in seeds.iter().enumerate() {
        perturb_with(store, seed, sigma, &mut scratch)?;
        let mine = index % stride == rank;
        let reward = if mine {
            Some(objective.evaluate(store, batch))
        } else {
            None
        };
        perturb_with(store, seed, -sigma, &mut scratch)?;
        if let Some(reward) = reward {
            if !reward.is_finite() {
                return Err(EsError::NonFiniteReward { seed });
            }
            rewards.push((index as u32, reward));
        }
    }
    Ok(rewards)
}

/// Seeded rollout evaluation: for each seed, perturb by `+sigma`, evaluate,
/// and restore by re-applying the same noise with `-sigma`. Returns raw
/// rewards in seed order. A non-finite reward aborts with the offending
/// seed after restoring the current perturbation.
pub fn sre(
    store: &mut ParamStore,
    objective: &dyn Objective,
    sigma: f64,
    seeds: &[Seed],
    batch: &BatchRef,
) -> Result<Vec<f64>, EsError> {
    let pairs = sre_assigned(store, objective, sigma, seeds, batch, 0, 1)?;
    Ok(pairs.into_iter().map(|(_, reward)| reward).collect())
}

/// Applies the perturb/restore float operations of an [`sre`] pass without
/// evaluating anything. Replay and replica synchronization use this to
/// reproduce the exact drift sequence of a live evaluation.
pub fn noise_sweep(store: &mut ParamStore, seeds: &[Seed], sigma: f64) -> Result<(), EsError> {
    let mut scratch = NoiseScratch::for_store(store);
    for &seed in seeds {
        perturb_with(store, seed, sigma, &mut scratch)?;
        perturb_with(store, seed, -sigma, &mut scratch)?;
    }
    Ok(())
}

/// Decomposed in-place parameter update:
/// `theta += eta * (1/N) * sum_n weights[n] * noise(seeds[n])`,
/// applied one seed and one layer at a time.
pub fn dipu(
    store: &mut ParamStore,
    seeds: &[Seed],
    weights: &[f64],
    eta: f64,
) -> Result<(), EsError> {
    if seeds.len() != weights.len() {
        return Err(EsError::LengthMismatch {
            seeds: seeds.len(),
            weights: weights.len(),
        });
    }
    if seeds.is_empty() {
        return Err(EsError::PopulationTooSmall(0));
    }
    if !eta.is_finite() {
        return Err(EsError::NonFiniteInput("step size"));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(EsError::NonFiniteInput("weights"));
    }
    let mut scratch = NoiseScratch::for_store(store);
    let n = seeds.len() as f64;
    for (&seed, &w) in seeds.iter().zip(weights) {
        perturb_with(store, seed, eta * w / n, &mut scratch)?;
    }
    Ok(())
}

/// A population that can be evaluated and updated. [`LocalPopulation`]
/// drives one in-process store; the worker pool implements the same trait
/// over replicated stores, so the optimizer steps are written once.
pub trait Population {
    /// Rewards for the given seeds at the current parameters, in seed
    /// order, leaving the parameters restored.
    fn eval(&mut self, sigma: f64, seeds: &[Seed], batch: &BatchRef) -> Result<Vec<f64>, EsError>;

    /// Applies one decomposed update.
    fn update(&mut self, seeds: &[Seed], weights: &[f64], eta: f64) -> Result<(), EsError>;

    /// Content digest of the current parameters.
    fn digest(&mut self) -> Result<ParamDigest, EsError>;
}

/// Single-store, single-process population.
pub struct LocalPopulation<'a> {
    pub store: &'a mut ParamStore,
    pub objective: &'a dyn Objective,
}

impl Population for LocalPopulation<'_> {
    fn eval(&mut self, sigma: f64, seeds: &[Seed], batch: &BatchRef) -> Result<Vec<f64>, EsError> {
        sre(self.store, self.objective, sigma, seeds, batch)
    }

    fn update(&mut self, seeds: &[Seed], weights: &[f64], eta: f64) -> Result<(), EsError> {
        dipu(self.store, seeds, weights, eta)
    }

    fn digest(&mut self) -> Result<ParamDigest, EsError> {
        Ok(self.store.digest())
    }
}

fn reward_max(rewards: &[f64]) -> f64 {
    rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// One vanilla ES iteration over any population backend.
pub fn es_step_with<P: Population>(
    pop: &mut P,
    cfg: &EsConfig,
    batch: &BatchRef,
    iteration: u64,
) -> Result<IterationRecord, EsError> {
    cfg.validate()?;
    let started = Instant::now();
    let seeds = cfg.population_seeds(iteration, Phase::Update);
    let raw = pop.eval(cfg.sigma, &seeds, batch)?;
    let stats = zscore(&raw, cfg.delta)?;
    pop.update(&seeds, &stats.normalized, cfg.alpha)?;
    let digest = pop.digest()?;
    Ok(IterationRecord {
        iteration,
        probe: None,
        update: PhaseRecord {
            seeds,
            weights: stats.normalized,
            step: cfg.alpha,
            reward_mean: stats.mean,
            reward_std: stats.std,
            reward_max: reward_max(&raw),
            digest,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        },
    })
}

/// One ESSAM iteration over any population backend.
///
/// With `rho > 0`: evaluate the probe population, step by `-rho` along its
/// normalized-reward update (toward the sharpest nearby point), evaluate a
/// fresh population there, step back by `+rho`, and apply the update
/// measured at the probe point with `alpha`. With `rho = 0` the probe phase
/// is skipped entirely and the iteration is exactly [`es_step_with`].
pub fn essam_step_with<P: Population>(
    pop: &mut P,
    cfg: &EsConfig,
    batch: &BatchRef,
    iteration: u64,
) -> Result<IterationRecord, EsError> {
    cfg.validate()?;
    if cfg.rho == 0.0 {
        return es_step_with(pop, cfg, batch, iteration);
    }

    let probe_started = Instant::now();
    let probe_seeds = cfg.population_seeds(iteration, Phase::Probe);
    let probe_raw = pop.eval(cfg.sigma, &probe_seeds, batch)?;
    let probe_stats = zscore(&probe_raw, cfg.delta)?;
    pop.update(&probe_seeds, &probe_stats.normalized, -cfg.rho)?;
    let probe_digest = pop.digest()?;
    let probe_wall = probe_started.elapsed().as_secs_f64() * 1e3;

    let update_started = Instant::now();
    let update_seeds = cfg.population_seeds(iteration, Phase::Update);
    let update_raw = pop.eval(cfg.sigma, &update_seeds, batch)?;
    let update_stats = zscore(&update_raw, cfg.delta)?;
    pop.update(&probe_seeds, &probe_stats.normalized, cfg.rho)?;
    pop.update(&update_seeds, &update_stats.normalized, cfg.alpha)?;
    let update_digest = pop.digest()?;

    Ok(IterationRecord {
        iteration,
        probe: Some(PhaseRecord {
            seeds: probe_seeds,
            weights: probe_stats.normalized,
            step: -cfg.rho,
            reward_mean: probe_stats.mean,
            reward_std: probe_stats.std,
            reward_max: reward_max(&probe_raw),
            digest: probe_digest,
            wall_ms: probe_wall,
        }),
        update: PhaseRecord {
            seeds: update_seeds,
            weights: update_stats.normalized,
            step: cfg.alpha,
            reward_mean: update_stats.mean,
            reward_std: update_stats.std,
            reward_max: reward_max(&update_raw),
            digest: update_digest,
            wall_ms: update_started.elapsed().as_secs_f64() * 1e3,
        },
    })
}

/// One vanilla ES iteration on a single store.
pub fn es_step(
    store: &mut ParamStore,
    cfg: &EsConfig,
    objective: &dyn Objective,
    batch: &BatchRef,
    iteration: u64,
) -> Result<IterationRecord, EsError> {
    let mut pop = LocalPopulation { store, objective };
    es_step_with(&mut pop, cfg, batch, iteration)
}

/// One ESSAM iteration on a single store.
pub fn essam_step(
    store: &mut ParamStore,
    cfg: &EsConfig,
    objective: &dyn Objective,
    batch: &BatchRef,
    iteration: u64,
) -> Result<IterationRecord, EsError> {
    let mut pop = LocalPopulation { store, objective };
    essam_step_with(&mut pop, cfg, batch, iteration)
}

/// Re-applies a recorded iteration to a store positioned at the pre-step
/// parameters, reproducing the live step's float operations exactly,
/// evaluations aside. Verifies the store digest against the record after
/// each phase and fails on any mismatch.
pub fn replay_record(
    store: &mut ParamStore,
    record: &IterationRecord,
    sigma: f64,
) -> Result<(), EsError> {
    if let Some(probe) = &record.probe {
        noise_sweep(store, &probe.seeds, sigma)?;
        dipu(store, &probe.seeds, &probe.weights, probe.step)?;
        if store.digest() != probe.digest {
            return Err(EsError::ReplayDivergence {
                iteration: record.iteration,
                phase: "probe",
            });
        }
        noise_sweep(store, &record.update.seeds, sigma)?;
        dipu(store, &probe.seeds, &probe.weights, -probe.step)?;
    } else {
        noise_sweep(store, &record.update.seeds, sigma)?;
    }
    dipu(store, &record.update.seeds, &record.update.weights, record.update.step)?;
    if store.digest() != record.update.digest {
        return Err(EsError::ReplayDivergence {
            iteration: record.iteration,
            phase: "update",
        });
    }
    Ok(())
}
