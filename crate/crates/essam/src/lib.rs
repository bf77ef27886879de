//! Zero-order optimization with evolution strategies, including a
//! sharpness-aware variant (ESSAM) that probes a worst-case perturbation
//! before each update.
//!
//! The crate is built around three ideas:
//!
//! * **Seed-replay evaluation.** Perturbations are never stored. Each
//!   population member is a PRNG seed; noise is regenerated layer by layer
//!   whenever it is needed, so peak transient memory for noise is bounded by
//!   the largest layer, not the model dimension.
//! * **Decomposed in-place updates.** Parameter updates are applied one seed
//!   and one layer at a time ([`es::dipu`]), which composes with seed replay
//!   to keep memory flat and makes every update a deterministic, replayable
//!   sequence of float operations.
//! * **Replay-based synchronization.** Distributed replicas exchange only
//!   `(seed, weight, step)` tuples plus digests, never parameters. Message
//!   size is independent of model dimension, and replica agreement is checked
//!   with exact content digests.
//!
//! Two optimizers are provided: vanilla ES ([`es::es_step`]) and ESSAM
//! ([`es::essam_step`]), which evaluates a probe population, steps *against*
//! its estimated gradient to a sharpness point, evaluates a fresh population
//! there, and applies the resulting update from the original parameters.
//!
//! The [`verify`] module contains Monte-Carlo checks for the statistical
//! identities the optimizers rely on (bias of the gradient estimate, the
//! reward-variance identity, and the gradient-norm identity), and the
//! [`reward`] module implements the rule-based scorer used for text corpora
//! (`<think>` sections and `####` answer markers).
//!
//! # Quick start
//!
//! ```
//! use essam::es::{es_step, EsConfig};
//! use essam::noise::Seed;
//! use essam::objectives::{BatchRef, Sphere};
//! use essam::params::{InitRule, ParamStore};
//!
//! let cfg = EsConfig {
//!     population: 16,
//!     sigma: 2e-3,
//!     alpha: 1e-2,
//!     rho: 0.0,
//!     delta: 1e-8,
//!     iterations: 100,
//!     master_seed: Seed(7),
//! };
//! cfg.validate().unwrap();
//! let objective = Sphere::new(10);
//! let mut store = ParamStore::create(&[("theta", 10)], InitRule::Constant(0.5)).unwrap();
//! for t in 0..cfg.iterations {
//!     es_step(&mut store, &cfg, &objective, &BatchRef::empty(), t).unwrap();
//! }
//! ```
//!
//! Runnable demonstrations live in `examples/`:
//!
//! * `train_sphere` -- vanilla ES on a quadratic bowl
//! * `train_essam_vs_es` -- ESSAM and ES side by side, iterations to threshold
//! * `seed_replay` -- perturb/restore round trips and the noise memory bound
//! * `parallel_workers` -- worker-pool transparency and message accounting
//! * `verify_identities` -- the Monte-Carlo identity suite
//! * `score_corpus` -- rule-based reward scoring of model responses
//! * `checkpoint_resume` -- split a run in two and land on identical digests
//!
//! The `essam` binary wraps the same functionality as subcommands
//! (`run`, `resume`, `verify`, `score`).

pub mod es;
pub mod noise;
pub mod objectives;
pub mod parallel;
pub mod params;
pub mod record;
pub mod reward;
pub mod run;
pub mod verify;
