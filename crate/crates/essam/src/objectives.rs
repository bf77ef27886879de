//! Objective functions scored by the optimizers.
//!
//! An [`Objective`] maps a parameter store (and optionally a data batch) to a
//! scalar reward, higher is better. Objectives must be deterministic: the
//! same parameters and batch always produce the same bits, because rewards
//! feed digest-checked replay.
//!
//! The analytic objectives (linear, sphere, rosenbrock, rastrigin) are
//! batch-free. The MLP objective is a seeded synthetic regression task, and
//! the rule-corpus objective scores a fixed response corpus with the
//! [`crate::reward`] rules, standing in for an LLM reward pipeline.
//!
//! This module also hosts the transient-allocation counter used to verify
//! the noise memory bound, and the deterministic [`DatasetIterator`] that
//! produces batches.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise::{derive_seed, NoiseStream, RawStream, Seed};
use crate::params::ParamStore;

/// Accounting for transient noise buffers.
///
/// The evaluation and update paths route every noise scratch allocation
/// through these counters, so tests can assert that peak transient noise
/// memory never exceeds the largest layer regardless of population size or
/// total dimension. The counters are per thread: each worker accounts for
/// its own scratch, and a measurement on one thread is not disturbed by
/// allocations on another.
pub mod alloc {
    use std::cell::Cell;

    thread_local! {
        static LIVE_ELEMS: Cell<u64> = const { Cell::new(0) };
        static PEAK_ELEMS: Cell<u64> = const { Cell::new(0) };
    }

    pub fn reset() {
        LIVE_ELEMS.with(|c| c.set(0));
        PEAK_ELEMS.with(|c| c.set(0));
    }

    pub fn on_alloc(elems: u64) {
        let live = LIVE_ELEMS.with(|c| {
            c.set(c.get() + elems);
            c.get()
        });
        PEAK_ELEMS.with(|c| c.set(c.get().max(live)));
    }

    pub fn on_free(elems: u64) {
        LIVE_ELEMS.with(|c| c.set(c.get().saturating_sub(elems)));
    }

    pub fn live_elems() -> u64 {
        LIVE_ELEMS.with(Cell::get)
    }

    /// High-water mark of live noise elements since the last reset.
    pub fn peak_elems() -> u64 {
        PEAK_ELEMS.with(Cell::get)
    }
}

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("invalid objective configuration: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("corpus error: {0}")]
    Corpus(#[from] crate::reward::RewardError),
}

/// A reference to the samples an evaluation should use. An empty index list
/// means the full dataset (and is the canonical batch for batch-free
/// objectives).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchRef {
    pub epoch: u64,
    pub indices: Vec<u32>,
}

impl BatchRef {
    pub fn empty() -> Self {
        BatchRef {
            epoch: 0,
            indices: Vec::new(),
        }
    }

    /// Logical wire size of this batch reference in bytes.
    pub fn encoded_len(&self) -> u64 {
        8 + 4 + self.indices.len() as u64 * 4
    }
}

/// A deterministic reward function over parameters.
pub trait Objective: Send + Sync {
    /// Expected total parameter dimension.
    fn dim(&self) -> usize;

    /// Reward at the given parameters, higher is better. Must be a pure
    /// function of the parameter bits and the batch.
    fn evaluate(&self, params: &ParamStore, batch: &BatchRef) -> f64;

    /// Human-readable identifier with the objective's own parameters.
    fn descriptor(&self) -> String;

    /// Number of samples available for batching, if the objective is
    /// data-backed.
    fn dataset_size(&self) -> Option<usize> {
        None
    }
}

/// `R(theta) = g . theta`. Linear reward with a known exact gradient,
/// used by the statistical verification suite.
pub struct Linear {
    g: Vec<f64>,
}

impl Linear {
    pub fn new(g: Vec<f64>) -> Self {
        assert!(!g.is_empty(), "gradient vector must be non-empty");
        assert!(g.iter().all(|x| x.is_finite()));
        Linear { g }
    }

    pub fn gradient(&self) -> &[f64] {
        &self.g
    }
}

impl Objective for Linear {
    fn dim(&self) -> usize {
        self.g.len()
    }

    fn evaluate(&self, params: &ParamStore, _batch: &BatchRef) -> f64 {
        params.iter().zip(&self.g).map(|(x, g)| g * x).sum()
    }

    fn descriptor(&self) -> String {
        format!("linear(g={:?})", self.g)
    }
}

/// `R(theta) = -sum(theta_i^2)`, maximum 0 at the origin.
pub struct Sphere {
    dim: usize,
}

impl Sphere {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1);
        Sphere { dim }
    }
}

impl Objective for Sphere {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, params: &ParamStore, _batch: &BatchRef) -> f64 {
        -params.iter().map(|x| x * x).sum::<f64>()
    }

    fn descriptor(&self) -> String {
        format!("sphere(dim={})", self.dim)
    }
}

/// Negated Rosenbrock valley, maximum 0 at the all-ones point.
pub struct Rosenbrock {
    dim: usize,
}

impl Rosenbrock {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 2, "rosenbrock needs dim >= 2");
        Rosenbrock { dim }
    }
}

impl Objective for Rosenbrock {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, params: &ParamStore, _batch: &BatchRef) -> f64 {
        let x = params.values();
        let mut total = 0.0;
        for i in 0..self.dim - 1 {
            let a = x[i + 1] - x[i] * x[i];
            let b = 1.0 - x[i];
            total += 100.0 * a * a + b * b;
        }
        -total
    }

    fn descriptor(&self) -> String {
        format!("rosenbrock(dim={})", self.dim)
    }
}

/// Negated Rastrigin (A = 10), maximum 0 at the origin.
pub struct Rastrigin {
    dim: usize,
}

impl Rastrigin {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1);
        Rastrigin { dim }
    }
}

impl Objective for Rastrigin {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, params: &ParamStore, _batch: &BatchRef) -> f64 {
        const A: f64 = 10.0;
        let mut sum = 0.0;
        for x in params.iter() {
            sum += x * x - A * (std::f64::consts::TAU * x).cos();
        }
        -(A * self.dim as f64 + sum)
    }

    fn descriptor(&self) -> String {
        format!("rastrigin(dim={})", self.dim)
    }
}

/// Layer names and sizes for an MLP with the given architecture, in the
/// order the parameter buffer expects: `w0, b0, w1, b1, ...` with row-major
/// `out x in` weight matrices.
pub fn mlp_layer_layout(arch: &[usize]) -> Vec<(String, usize)> {
    assert!(arch.len() >= 2, "mlp needs at least input and output widths");
    let mut layers = Vec::new();
    for i in 0..arch.len() - 1 {
        layers.push((format!("w{i}"), arch[i + 1] * arch[i]));
        layers.push((format!("b{i}"), arch[i + 1]));
    }
    layers
}

/// Forward pass for the flat parameter layout of [`mlp_layer_layout`]:
/// tanh on hidden layers, linear output.
pub fn mlp_forward(arch: &[usize], params: &[f64], input: &[f64]) -> Vec<f64> {
    assert_eq!(input.len(), arch[0], "input width mismatch");
    let expected: usize = mlp_layer_layout(arch).iter().map(|(_, n)| n).sum();
    assert_eq!(params.len(), expected, "parameter length mismatch");

    let mut current = input.to_vec();
    let mut offset = 0usize;
    for i in 0..arch.len() - 1 {
        let (fan_in, fan_out) = (arch[i], arch[i + 1]);
        let weights = &params[offset..offset + fan_out * fan_in];
        offset += fan_out * fan_in;
        let biases = &params[offset..offset + fan_out];
        offset += fan_out;
        let mut next = vec![0.0; fan_out];
        for (o, out) in next.iter_mut().enumerate() {
            let row = &weights[o * fan_in..(o + 1) * fan_in];
            let mut acc = biases[o];
            for (w, x) in row.iter().zip(&current) {
                acc += w * x;
            }
            *out = if i + 1 < arch.len() - 1 { acc.tanh() } else { acc };
        }
        current = next;
    }
    current
}

/// Seeded synthetic regression: inputs are standard normal draws and targets
/// come from a fixed random teacher network of the same architecture. Reward
/// is the negated mean squared error over the batch.
pub struct Mlp {
    arch: Vec<usize>,
    task_seed: u64,
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    dim: usize,
}

impl Mlp {
    pub fn new(arch: Vec<usize>, task_seed: u64, samples: usize) -> Self {
        assert!(arch.len() >= 2, "mlp needs at least input and output widths");
        assert!(arch.iter().all(|w| *w >= 1));
        assert!(samples >= 1);
        let dim = mlp_layer_layout(&arch).iter().map(|(_, n)| n).sum();

        let mut teacher = vec![0.0; dim];
        let mut stream = NoiseStream::open(derive_seed(Seed(task_seed), 0, 1, 0));
        let mut offset = 0usize;
        for i in 0..arch.len() - 1 {
            let (fan_in, fan_out) = (arch[i], arch[i + 1]);
            let w_scale = 1.0 / (fan_in as f64).sqrt();
            for w in &mut teacher[offset..offset + fan_out * fan_in] {
                *w = w_scale * stream.next();
            }
            offset += fan_out * fan_in;
            for b in &mut teacher[offset..offset + fan_out] {
                *b = 0.1 * stream.next();
            }
            offset += fan_out;
        }

        let mut input_stream = NoiseStream::open(derive_seed(Seed(task_seed), 0, 0, 0));
        let mut inputs = Vec::with_capacity(samples);
        let mut targets = Vec::with_capacity(samples);
        for _ in 0..samples {
            let mut x = vec![0.0; arch[0]];
            input_stream.fill(&mut x);
            let y = mlp_forward(&arch, &teacher, &x);
            inputs.push(x);
            targets.push(y);
        }

        Mlp {
            arch,
            task_seed,
            inputs,
            targets,
            dim,
        }
    }

    pub fn layer_layout(&self) -> Vec<(String, usize)> {
        mlp_layer_layout(&self.arch)
    }
}

impl Objective for Mlp {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, params: &ParamStore, batch: &BatchRef) -> f64 {
        let flat = params.values();
        let all: Vec<u32>;
        let indices: &[u32] = if batch.indices.is_empty() {
            all = (0..self.inputs.len() as u32).collect();
            &all
        } else {
            &batch.indices
        };
        let mut total = 0.0;
        for &idx in indices {
            let i = idx as usize;
            let out = mlp_forward(&self.arch, &flat, &self.inputs[i]);
            let err: f64 = out
                .iter()
                .zip(&self.targets[i])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += err;
        }
        -(total / indices.len() as f64)
    }

    fn descriptor(&self) -> String {
        format!(
            "mlp(arch={:?}, task_seed={}, samples={})",
            self.arch,
            self.task_seed,
            self.inputs.len()
        )
    }

    fn dataset_size(&self) -> Option<usize> {
        Some(self.inputs.len())
    }
}

/// Scores a fixed corpus of (response, gold) rows with the rule-based
/// reward. The reward ignores the parameters; this objective exercises the
/// scoring path inside the training machinery.
pub struct RuleCorpus {
    path: PathBuf,
    rows: Vec<(String, String)>,
    dim: usize,
}

impl RuleCorpus {
    pub fn from_path(path: PathBuf, dim: usize) -> Result<Self, ObjectiveError> {
        if dim == 0 {
            return Err(ObjectiveError::BadSpec("dim must be >= 1".into()));
        }
        let rows = crate::reward::read_corpus(&path)?;
        Ok(RuleCorpus { path, rows, dim })
    }
}

impl Objective for RuleCorpus {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, _params: &ParamStore, batch: &BatchRef) -> f64 {
        let all: Vec<u32>;
        let indices: &[u32] = if batch.indices.is_empty() {
            all = (0..self.rows.len() as u32).collect();
            &all
        } else {
            &batch.indices
        };
        let mut total = 0.0;
        for &idx in indices {
            let (response, gold) = &self.rows[idx as usize];
            total += crate::reward::score(response, gold)
                .map(|s| s.total)
                .unwrap_or(0.0);
        }
        total / indices.len() as f64
    }

    fn descriptor(&self) -> String {
        format!("rule_corpus(path={:?}, rows={})", self.path, self.rows.len())
    }

    fn dataset_size(&self) -> Option<usize> {
        Some(self.rows.len())
    }
}

/// Serializable objective selection, the form used in run configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveSpec {
    Linear { g: Vec<f64> },
    Sphere { dim: usize },
    Rosenbrock { dim: usize },
    Rastrigin { dim: usize },
    Mlp { arch: Vec<usize>, task_seed: u64, samples: usize },
    RuleCorpus { path: PathBuf, dim: usize },
}

impl ObjectiveSpec {
    pub fn dim(&self) -> usize {
        match self {
            ObjectiveSpec::Linear { g } => g.len(),
            ObjectiveSpec::Sphere { dim }
            | ObjectiveSpec::Rosenbrock { dim }
            | ObjectiveSpec::Rastrigin { dim }
            | ObjectiveSpec::RuleCorpus { dim, .. } => *dim,
            ObjectiveSpec::Mlp { arch, .. } => {
                mlp_layer_layout(arch).iter().map(|(_, n)| n).sum()
            }
        }
    }

    /// Layer partition a parameter store should use for this objective.
    pub fn layer_layout(&self) -> Vec<(String, usize)> {
        match self {
            ObjectiveSpec::Mlp { arch, .. } => mlp_layer_layout(arch),
            other => vec![("theta".to_string(), other.dim())],
        }
    }
}

/// Builds the runtime objective for a spec, validating its parameters.
pub fn make_objective(spec: &ObjectiveSpec) -> Result<Box<dyn Objective>, ObjectiveError> {
    match spec {
        ObjectiveSpec::Linear { g } => {
            if g.is_empty() {
                return Err(ObjectiveError::BadSpec("linear needs a non-empty g".into()));
            }
            if !g.iter().all(|x| x.is_finite()) {
                return Err(ObjectiveError::BadSpec("linear g must be finite".into()));
            }
            Ok(Box::new(Linear::new(g.clone())))
        }
        ObjectiveSpec::Sphere { dim } => {
            if *dim == 0 {
                return Err(ObjectiveError::BadSpec("sphere dim must be >= 1".into()));
            }
            Ok(Box::new(Sphere::new(*dim)))
        }
        ObjectiveSpec::Rosenbrock { dim } => {
            if *dim < 2 {
                return Err(ObjectiveError::BadSpec("rosenbrock dim must be >= 2".into()));
            }
            Ok(Box::new(Rosenbrock::new(*dim)))
        }
        ObjectiveSpec::Rastrigin { dim } => {
            if *dim == 0 {
                return Err(ObjectiveError::BadSpec("rastrigin dim must be >= 1".into()));
            }
            Ok(Box::new(Rastrigin::new(*dim)))
        }
        ObjectiveSpec::Mlp {
            arch,
            task_seed,
            samples,
        } => {
            if arch.len() < 2 || arch.contains(&0) {
                return Err(ObjectiveError::BadSpec(
                    "mlp arch needs >= 2 positive widths".into(),
                ));
            }
            if *samples == 0 {
                return Err(ObjectiveError::BadSpec("mlp needs >= 1 sample".into()));
            }
            Ok(Box::new(Mlp::new(arch.clone(), *task_seed, *samples)))
        }
        ObjectiveSpec::RuleCorpus { path, dim } => {
            Ok(Box::new(RuleCorpus::from_path(path.clone(), *dim)?))
        }
    }
}

/// Central-difference gradient of an objective's reward, used as the oracle
/// in smoothness and bias checks.
pub fn central_difference_gradient(
    objective: &dyn Objective,
    params: &ParamStore,
    batch: &BatchRef,
    h: f64,
) -> Vec<f64> {
    let mut probe = params.clone();
    let mut grad = vec![0.0; params.dim()];
    for (i, slot) in grad.iter_mut().enumerate() {
        let x = params.get(i);
        probe.poke(i, x + h).unwrap();
        let up = objective.evaluate(&probe, batch);
        probe.poke(i, x - h).unwrap();
        let down = objective.evaluate(&probe, batch);
        probe.poke(i, x).unwrap();
        *slot = (up - down) / (2.0 * h);
    }
    grad
}

/// Deterministic epoch-shuffled batch source.
///
/// Every epoch visits each sample exactly once in an order derived from the
/// shuffle seed and the epoch index alone, so a resumed run can fast-forward
/// to any batch without replaying history. The final batch of an epoch is
/// short when the batch size does not divide the dataset.
#[derive(Clone, Debug)]
pub struct DatasetIterator {
    size: usize,
    batch_size: usize,
    seed: Seed,
    epoch: u64,
    cursor: usize,
    order: Vec<u32>,
}

impl DatasetIterator {
    pub fn new(size: usize, batch_size: usize, seed: Seed) -> Result<Self, ObjectiveError> {
        if size == 0 {
            return Err(ObjectiveError::BadSpec("dataset size must be >= 1".into()));
        }
        if batch_size == 0 {
            return Err(ObjectiveError::BadSpec("batch size must be >= 1".into()));
        }
        let mut it = DatasetIterator {
            size,
            batch_size,
            seed,
            epoch: 0,
            cursor: 0,
            order: Vec::new(),
        };
        it.shuffle_for_epoch();
        Ok(it)
    }

    fn shuffle_for_epoch(&mut self) {
        let mut order: Vec<u32> = (0..self.size as u32).collect();
        let mut raw = RawStream::open(derive_seed(self.seed, self.epoch, 0, 0));
        for i in (1..order.len()).rev() {
            let j = raw.next_below(i as u64 + 1) as usize;
            order.swap(i, j);
        }
        self.order = order;
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn batches_per_epoch(&self) -> u64 {
        self.size.div_ceil(self.batch_size) as u64
    }

    pub fn next_batch(&mut self) -> BatchRef {
        let end = (self.cursor + self.batch_size).min(self.size);
        let batch = BatchRef {
            epoch: self.epoch,
            indices: self.order[self.cursor..end].to_vec(),
        };
        self.cursor = end;
        if self.cursor >= self.size {
            self.cursor = 0;
            self.epoch += 1;
            self.shuffle_for_epoch();
        }
        batch
    }

    /// Positions the iterator as if `batches` batches had been consumed.
    pub fn skip_batches(&mut self, batches: u64) {
        let per_epoch = self.batches_per_epoch();
        self.epoch = batches / per_epoch;
        self.cursor = (batches % per_epoch) as usize * self.batch_size;
        self.shuffle_for_epoch();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::InitRule;
    use proptest::prelude::*;

    fn store_from(values: &[f64]) -> ParamStore {
        let mut store = ParamStore::create(&[("theta", values.len())], InitRule::Zeros).unwrap();
        store.axpy_layer("theta", 1.0, values).unwrap();
        store
    }

    #[test]
    fn linear_is_a_dot_product() {
        let obj = Linear::new(vec![3.0, 4.0]);
        assert_eq!(obj.evaluate(&store_from(&[1.0, 1.0]), &BatchRef::empty()), 7.0);
    }

    #[test]
    fn sphere_peaks_at_origin() {
        let obj = Sphere::new(3);
        assert_eq!(obj.evaluate(&store_from(&[0.0, 0.0, 0.0]), &BatchRef::empty()), 0.0);
        assert_eq!(obj.evaluate(&store_from(&[1.0, 2.0, 2.0]), &BatchRef::empty()), -9.0);
    }

    #[test]
    fn rosenbrock_peaks_at_ones() {
        let obj = Rosenbrock::new(4);
        let at_opt = obj.evaluate(&store_from(&[1.0; 4]), &BatchRef::empty());
        assert!(at_opt.abs() <= 1e-12);
        assert!(obj.evaluate(&store_from(&[0.0; 4]), &BatchRef::empty()) < -1.0);
    }

    #[test]
    fn rastrigin_reference_points() {
        let obj = Rastrigin::new(10);
        let at_opt = obj.evaluate(&store_from(&[0.0; 10]), &BatchRef::empty());
        assert!(at_opt.abs() <= 1e-12);
        let mut off = [0.0; 10];
        off[0] = 1.0;
        let at_unit = obj.evaluate(&store_from(&off), &BatchRef::empty());
        assert!((at_unit - (-1.0)).abs() <= 1e-12, "got {at_unit}");
    }

    #[test]
    fn objectives_are_deterministic() {
        let mlp = Mlp::new(vec![3, 5, 2], 42, 16);
        let layout = mlp.layer_layout();
        let refs: Vec<(&str, usize)> = layout.iter().map(|(n, l)| (n.as_str(), *l)).collect();
        let store = ParamStore::create(
            &refs,
            InitRule::SeededGaussian {
                seed: Seed(9),
                scale: 0.3,
            },
        )
        .unwrap();
        let batch = BatchRef {
            epoch: 0,
            indices: vec![0, 3, 7],
        };
        let first = mlp.evaluate(&store, &batch);
        for _ in 0..10 {
            assert_eq!(mlp.evaluate(&store, &batch).to_bits(), first.to_bits());
        }
    }

    #[test]
    fn mlp_zero_params_zero_outputs() {
        let arch = [4, 8, 3];
        let dim: usize = mlp_layer_layout(&arch).iter().map(|(_, n)| n).sum();
        let out = mlp_forward(&arch, &vec![0.0; dim], &[1.0, -2.0, 0.5, 3.0]);
        assert_eq!(out, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn mlp_identity_layer_passes_input_through() {
        let arch = [3, 3];
        let mut params = vec![0.0; 3 * 3 + 3];
        for i in 0..3 {
            params[i * 3 + i] = 1.0;
        }
        let input = [0.25, -1.5, 2.0];
        let out = mlp_forward(&arch, &params, &input);
        assert_eq!(out, input.to_vec());
    }

    #[test]
    fn mlp_reward_is_smooth() {
        let mlp = Mlp::new(vec![2, 4, 1], 7, 12);
        let layout = mlp.layer_layout();
        let refs: Vec<(&str, usize)> = layout.iter().map(|(n, l)| (n.as_str(), *l)).collect();
        let store = ParamStore::create(
            &refs,
            InitRule::SeededGaussian {
                seed: Seed(31),
                scale: 0.4,
            },
        )
        .unwrap();
        let batch = BatchRef::empty();
        let coarse = central_difference_gradient(&mlp, &store, &batch, 1e-4);
        let fine = central_difference_gradient(&mlp, &store, &batch, 1e-5);
        let norm: f64 = coarse.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: f64 = coarse
            .iter()
            .zip(&fine)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(norm > 0.0);
        assert!(
            diff / norm <= 1e-5,
            "central differences disagree: rel {}",
            diff / norm
        );
    }

    #[test]
    fn dataset_iterator_partitions_each_epoch() {
        let mut it = DatasetIterator::new(4, 2, Seed(5)).unwrap();
        let a = it.next_batch();
        let b = it.next_batch();
        assert_eq!(a.indices.len(), 2);
        assert_eq!(b.indices.len(), 2);
        assert_eq!(a.epoch, 0);
        assert_eq!(b.epoch, 0);
        let mut seen: Vec<u32> = a.indices.iter().chain(&b.indices).copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3]);
        assert_eq!(it.next_batch().epoch, 1);
    }

    #[test]
    fn dataset_iterator_short_final_batch() {
        let mut it = DatasetIterator::new(5, 2, Seed(8)).unwrap();
        assert_eq!(it.next_batch().indices.len(), 2);
        assert_eq!(it.next_batch().indices.len(), 2);
        let last = it.next_batch();
        assert_eq!(last.indices.len(), 1);
        assert_eq!(last.epoch, 0);
        let next = it.next_batch();
        assert_eq!(next.epoch, 1);
        assert_eq!(next.indices.len(), 2);
    }

    #[test]
    fn dataset_iterator_is_deterministic_and_skippable() {
        let mut a = DatasetIterator::new(17, 4, Seed(99)).unwrap();
        let mut b = DatasetIterator::new(17, 4, Seed(99)).unwrap();
        for _ in 0..23 {
            assert_eq!(a.next_batch(), b.next_batch());
        }
        let mut c = DatasetIterator::new(17, 4, Seed(99)).unwrap();
        c.skip_batches(23);
        for _ in 0..10 {
            assert_eq!(a.next_batch(), c.next_batch());
        }
    }

    #[test]
    fn make_objective_validates_specs() {
        assert!(make_objective(&ObjectiveSpec::Sphere { dim: 0 }).is_err());
        assert!(make_objective(&ObjectiveSpec::Rosenbrock { dim: 1 }).is_err());
        assert!(make_objective(&ObjectiveSpec::Linear { g: vec![] }).is_err());
        assert!(make_objective(&ObjectiveSpec::Mlp {
            arch: vec![3],
            task_seed: 0,
            samples: 4
        })
        .is_err());
        let obj = make_objective(&ObjectiveSpec::Sphere { dim: 7 }).unwrap();
        assert_eq!(obj.dim(), 7);
    }

    #[test]
    fn alloc_hook_tracks_peak() {
        alloc::reset();
        alloc::on_alloc(100);
        alloc::on_alloc(50);
        alloc::on_free(100);
        alloc::on_alloc(20);
        assert_eq!(alloc::peak_elems(), 150);
        assert_eq!(alloc::live_elems(), 70);
        alloc::reset();
        assert_eq!(alloc::peak_elems(), 0);
    }

    proptest! {
        #[test]
        fn every_epoch_is_a_permutation(size in 1usize..40, batch in 1usize..10, seed in any::<u64>()) {
            let mut it = DatasetIterator::new(size, batch, Seed(seed)).unwrap();
            for epoch in 0..3u64 {
                let mut seen = Vec::new();
                while seen.len() < size {
                    let b = it.next_batch();
                    prop_assert_eq!(b.epoch, epoch);
                    prop_assert!(b.indices.len() <= batch);
                    seen.extend(b.indices);
                }
                seen.sort_unstable();
                let want: Vec<u32> = (0..size as u32).collect();
                prop_assert_eq!(seen, want);
            }
        }
    }
}
