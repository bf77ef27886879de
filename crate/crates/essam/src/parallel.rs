//! Replicated worker pool.
//!
//! Each worker thread owns a full copy of the parameters and the shared
//! objective. Evaluation requests carry only seeds, a scale, and a batch
//! reference; updates carry only seeds, weights, and a step size. Nothing
//! proportional to the parameter dimension ever crosses a channel, which is
//! the point: replicas regenerate all noise locally and synchronize purely
//! by replaying the same decomposed operations.
//!
//! Two rules keep every replica bit-identical to the driver's master copy:
//!
//! * A worker sweeps the perturb/restore pair over *all* population seeds
//!   in seed order, evaluating only the seeds assigned to it round-robin.
//! * Updates are broadcast as [`SyncDirective`]s and applied by the driver
//!   and every worker as the same [`dipu`](crate::es::dipu) calls.
//!
//! [`WorkerPool::verify_replicas`] then has a strong guarantee to check:
//! every replica digest must equal the master digest exactly, at every
//! sync point, at any population size or dimension.

use std::panic::{self, AssertUnwindSafe};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;

use crate::es::{dipu, noise_sweep, sre_assigned, EsError, Population};
use crate::noise::Seed;
use crate::objectives::{BatchRef, Objective};
use crate::params::{ParamDigest, ParamStore};

/// One decomposed update: `theta += eta * (1/N) * sum_n w_n * noise(s_n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DipuStep {
    pub seeds: Vec<Seed>,
    pub weights: Vec<f64>,
    pub eta: f64,
}

impl DipuStep {
    /// Logical wire size: a count, the seeds, the weights, and the step.
    pub fn encoded_len(&self) -> u64 {
        4 + self.seeds.len() as u64 * 8 + self.weights.len() as u64 * 8 + 8
    }
}

/// A batch of updates broadcast to every replica at a sync point.
#[derive(Clone, Debug, PartialEq)]
pub struct SyncDirective {
    pub steps: Vec<DipuStep>,
}

impl SyncDirective {
    pub fn encoded_len(&self) -> u64 {
        4 + self.steps.iter().map(DipuStep::encoded_len).sum::<u64>()
    }
}

/// Logical traffic counters, in bytes. `broadcast` counts driver-to-worker
/// payloads (once per worker), `gathered` counts worker-to-driver payloads.
/// Neither ever depends on the parameter dimension.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ByteCounters {
    pub broadcast: u64,
    pub gathered: u64,
}

enum WorkerMsg {
    Eval {
        sigma: f64,
        seeds: Arc<Vec<Seed>>,
        batch: BatchRef,
    },
    Sync {
        directive: Arc<SyncDirective>,
    },
    Digest,
    Poke {
        index: usize,
        value: f64,
    },
    Shutdown,
}

enum WorkerReply {
    Rewards(Vec<(u32, f64)>),
    Synced,
    Digest(ParamDigest),
    Poked,
    Failed(EsError),
}

fn disconnected(rank: usize) -> EsError {
    EsError::Worker(format!("worker {rank} disconnected"))
}

fn protocol_violation(rank: usize) -> EsError {
    EsError::Worker(format!("unexpected reply from worker {rank}"))
}

/// Driver handle over a set of replica threads plus the master parameters.
pub struct WorkerPool {
    master: ParamStore,
    txs: Vec<Sender<WorkerMsg>>,
    handles: Vec<JoinHandle<()>>,
    replies: Receiver<(usize, WorkerReply)>,
    bytes: ByteCounters,
}

impl WorkerPool {
    /// Spawns `workers` replica threads, each holding a copy of `store` and
    /// a handle to `objective`. The pool keeps `store` as the master copy.
    pub fn new(
        store: ParamStore,
        objective: Arc<dyn Objective>,
        workers: usize,
    ) -> Result<Self, EsError> {
        if workers == 0 {
            return Err(EsError::InvalidConfig("worker count must be at least 1".into()));
        }
        if objective.dim() != store.dim() {
            return Err(EsError::InvalidConfig(format!(
                "objective dimension {} does not match parameter dimension {}",
                objective.dim(),
                store.dim()
            )));
        }
        let (reply_tx, replies) = mpsc::channel();
        let mut txs = Vec::with_capacity(workers);
        let mut handles = Vec::with_capacity(workers);
        for rank in 0..workers {
            let (tx, rx) = mpsc::channel();
            let replica = store.clone();
            let objective = objective.clone();
            let reply_tx = reply_tx.clone();
            let handle = std::thread::Builder::new()
                .name(format!("essam-worker-{rank}"))
                .spawn(move || worker_main(rank, workers, replica, objective, rx, reply_tx))
                .map_err(|e| EsError::Worker(format!("failed to spawn worker {rank}: {e}")))?;
            txs.push(tx);
            handles.push(handle);
        }
        Ok(WorkerPool {
            master: store,
            txs,
            handles,
            replies,
            bytes: ByteCounters::default(),
        })
    }

    pub fn workers(&self) -> usize {
        self.txs.len()
    }

    /// The driver-side copy of the parameters, kept in lockstep with every
    /// replica. Checkpoints are written from here.
    pub fn master(&self) -> &ParamStore {
        &self.master
    }

    pub fn bytes(&self) -> ByteCounters {
        self.bytes
    }

    pub fn reset_bytes(&mut self) {
        self.bytes = ByteCounters::default();
    }

    /// Overwrites one element of one replica, leaving the master and the
    /// other replicas untouched. Exists to let tests and demos inject the
    /// divergence that [`verify_replicas`](Self::verify_replicas) catches.
    pub fn poke_replica(&mut self, rank: usize, index: usize, value: f64) -> Result<(), EsError> {
        if rank >= self.txs.len() {
            return Err(EsError::InvalidConfig(format!(
                "no worker with rank {rank} in a pool of {}",
                self.txs.len()
            )));
        }
        self.txs[rank]
            .send(WorkerMsg::Poke { index, value })
            .map_err(|_| disconnected(rank))?;
        match self.replies.recv() {
            Ok((_, WorkerReply::Poked)) => Ok(()),
            Ok((_, WorkerReply::Failed(e))) => Err(e),
            Ok((from, _)) => Err(protocol_violation(from)),
            Err(_) => Err(disconnected(rank)),
        }
    }

    /// Applies a directive to the master and every replica.
    pub fn broadcast(&mut self, directive: &SyncDirective) -> Result<(), EsError> {
        self.bytes.broadcast += self.txs.len() as u64 * directive.encoded_len();
        let shared = Arc::new(directive.clone());
        for (rank, tx) in self.txs.iter().enumerate() {
            tx.send(WorkerMsg::Sync {
                directive: shared.clone(),
            })
            .map_err(|_| disconnected(rank))?;
        }
        let mut master_failure = None;
        for step in &directive.steps {
            if let Err(e) = dipu(&mut self.master, &step.seeds, &step.weights, step.eta) {
                master_failure = Some(e);
                break;
            }
        }
        let collected = self.collect(|rank, reply| match reply {
            WorkerReply::Synced => Ok(()),
            _ => Err(protocol_violation(rank)),
        });
        match master_failure {
            Some(e) => Err(e),
            None => collected,
        }
    }

    /// Checks that every replica digest equals the master digest and
    /// returns it.
    pub fn verify_replicas(&mut self) -> Result<ParamDigest, EsError> {
        self.bytes.broadcast += self.txs.len() as u64;
        for (rank, tx) in self.txs.iter().enumerate() {
            tx.send(WorkerMsg::Digest).map_err(|_| disconnected(rank))?;
        }
        let expected = self.master.digest();
        let mut gathered = 0u64;
        let result = self.collect(|rank, reply| match reply {
            WorkerReply::Digest(digest) => {
                gathered += 32;
                if digest == expected {
                    Ok(())
                } else {
                    Err(EsError::Worker(format!(
                        "replica {rank} diverged from the master parameters: {digest} != {expected}"
                    )))
                }
            }
            _ => Err(protocol_violation(rank)),
        });
        self.bytes.gathered += gathered;
        result.map(|()| expected)
    }

    fn collect<F>(&mut self, mut on_reply: F) -> Result<(), EsError>
    where
        F: FnMut(usize, WorkerReply) -> Result<(), EsError>,
    {
        let mut failure: Option<EsError> = None;
        for _ in 0..self.txs.len() {
            match self.replies.recv() {
                Ok((_, WorkerReply::Failed(e))) => {
                    failure.get_or_insert(e);
                }
                Ok((rank, reply)) => {
                    if let Err(e) = on_reply(rank, reply) {
                        failure.get_or_insert(e);
                    }
                }
                Err(_) => {
                    failure.get_or_insert(EsError::Worker(
                        "a worker thread disconnected before replying".into(),
                    ));
                    break;
                }
            }
        }
        match failure {
            None => Ok(()),
            Some(e) => Err(e),
        }
    }
}

impl Population for WorkerPool {
    fn eval(&mut self, sigma: f64, seeds: &[Seed], batch: &BatchRef) -> Result<Vec<f64>, EsError> {
        let payload = 8 + 4 + seeds.len() as u64 * 8 + batch.encoded_len();
        self.bytes.broadcast += self.txs.len() as u64 * payload;
        let shared = Arc::new(seeds.to_vec());
        for (rank, tx) in self.txs.iter().enumerate() {
            tx.send(WorkerMsg::Eval {
                sigma,
                seeds: shared.clone(),
                batch: batch.clone(),
            })
            .map_err(|_| disconnected(rank))?;
        }
        noise_sweep(&mut self.master, seeds, sigma)?;

        let mut rewards: Vec<Option<f64>> = vec![None; seeds.len()];
        let mut gathered = 0u64;
        self.collect(|rank, reply| match reply {
            WorkerReply::Rewards(pairs) => {
                gathered += 4 + pairs.len() as u64 * 8;
                for (index, reward) in pairs {
                    rewards[index as usize] = Some(reward);
                }
                Ok(())
            }
            _ => Err(protocol_violation(rank)),
        })?;
        self.bytes.gathered += gathered;
        rewards
            .into_iter()
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| EsError::Worker("incomplete reward gather".into()))
    }

    fn update(&mut self, seeds: &[Seed], weights: &[f64], eta: f64) -> Result<(), EsError> {
        self.broadcast(&SyncDirective {
            steps: vec![DipuStep {
                seeds: seeds.to_vec(),
                weights: weights.to_vec(),
                eta,
            }],
        })
    }

    fn digest(&mut self) -> Result<ParamDigest, EsError> {
        self.verify_replicas()
    }
}

impl Drop for WorkerPool {
    fn drop(&mut self) {
        for tx in &self.txs {
            let _ = tx.send(WorkerMsg::Shutdown);
        }
        for handle in self.handles.drain(..) {
            let _ = handle.join();
        }
    }
}

fn worker_main(
    rank: usize,
    stride: usize,
    mut store: ParamStore,
    objective: Arc<dyn Objective>,
    rx: Receiver<WorkerMsg>,
    tx: Sender<(usize, WorkerReply)>,
) {
    while let Ok(msg) = rx.recv() {
        let reply = match msg {
            WorkerMsg::Shutdown => break,
            WorkerMsg::Eval { sigma, seeds, batch } => {
                let outcome = panic::catch_unwind(AssertUnwindSafe(|| {
                    sre_assigned(&mut store, objective.as_ref(), sigma, &seeds, &batch, rank, stride)
                }));
                match outcome {
                    Ok(Ok(pairs)) => WorkerReply::Rewards(pairs),
                    Ok(Err(e)) => WorkerReply::Failed(e),
                    Err(_) => WorkerReply::Failed(EsError::Worker(format!(
                        "worker {rank} panicked during evaluation"
                    ))),
                }
            }
            WorkerMsg::Sync { directive } => {
                let mut failed = None;
                for step in &directive.steps {
                    if let Err(e) = dipu(&mut store, &step.seeds, &step.weights, step.eta) {
                        failed = Some(e);
                        break;
                    }
                }
                match failed {
                    None => WorkerReply::Synced,
                    Some(e) => WorkerReply::Failed(e),
                }
            }
            WorkerMsg::Digest => WorkerReply::Digest(store.digest()),
            WorkerMsg::Poke { index, value } => match store.poke(index, value) {
                Ok(()) => WorkerReply::Poked,
                Err(e) => WorkerReply::Failed(e.into()),
            },
        };
        if tx.send((rank, reply)).is_err() {
            break;
        }
    }
}
