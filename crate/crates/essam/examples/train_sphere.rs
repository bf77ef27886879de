//! Vanilla ES on a 100-dimensional quadratic bowl.
//!
//! The store starts at distance 1 from the optimum and the loop stops once
//! the reward (negative squared distance) passes -1e-3.

use essam::es::{es_step, EsConfig};
use essam::noise::Seed;
use essam::objectives::{BatchRef, Objective, Sphere};
use essam::params::{InitRule, ParamStore};

fn main() {
    let cfg = EsConfig {
        population: 40,
        sigma: 2e-3,
        alpha: 1e-2,
        rho: 0.0,
        delta: 1e-8,
        iterations: 5000,
        master_seed: Seed(7),
    };
    cfg.validate().unwrap();

    let dim = 100;
    let objective = Sphere::new(dim);
    let mut store = ParamStore::create(&[("theta", dim)], InitRule::Constant(0.1)).unwrap();
    let batch = BatchRef::empty();

    println!("initial reward {:+.6e}", objective.evaluate(&store, &batch));
    for t in 0..cfg.iterations {
        let record = es_step(&mut store, &cfg, &objective, &batch, t).unwrap();
        if (t + 1) % 500 == 0 {
            println!(
                "iter {:>4}  mean reward {:+.6e}  digest {}",
                t + 1,
                record.update.reward_mean,
                &record.update.digest.to_hex()[..12]
            );
        }
        let reward = objective.evaluate(&store, &batch);
        if reward >= -1e-3 {
            println!("reached {reward:+.6e} after {} iterations", t + 1);
            return;
        }
    }
    println!("threshold not reached; final reward {:+.6e}", objective.evaluate(&store, &batch));
}
