//! ES and ESSAM side by side on the same objective and seed schedule.
//!
//! Both optimizers start from the same parameters; the run reports how many
//! iterations each needs to push the sphere reward above -1e-3. The
//! comparison is informative, not a guarantee: which one is earlier depends
//! on the objective and the hyperparameters.

use essam::es::{es_step, essam_step, EsConfig};
use essam::noise::Seed;
use essam::objectives::{BatchRef, Objective, Sphere};
use essam::params::{InitRule, ParamStore};

fn iterations_to_threshold(cfg: &EsConfig, use_probe: bool) -> Option<u64> {
    let dim = 100;
    let objective = Sphere::new(dim);
    let mut store = ParamStore::create(&[("theta", dim)], InitRule::Constant(0.1)).unwrap();
    let batch = BatchRef::empty();
    for t in 0..cfg.iterations {
        if use_probe {
            essam_step(&mut store, cfg, &objective, &batch, t).unwrap();
        } else {
            es_step(&mut store, cfg, &objective, &batch, t).unwrap();
        }
        if objective.evaluate(&store, &batch) >= -1e-3 {
            return Some(t + 1);
        }
    }
    None
}

fn main() {
    let mut cfg = EsConfig {
        population: 40,
        sigma: 2e-3,
        alpha: 1e-2,
        rho: 5e-3,
        delta: 1e-8,
        iterations: 5000,
        master_seed: Seed(7),
    };
    cfg.validate().unwrap();

    let essam_iters = iterations_to_threshold(&cfg, true);
    cfg.rho = 0.0;
    let es_iters = iterations_to_threshold(&cfg, false);

    match (es_iters, essam_iters) {
        (Some(es), Some(sam)) => {
            println!("es    reached -1e-3 after {es} iterations");
            println!("essam reached -1e-3 after {sam} iterations");
            if sam < es {
                println!("essam converged earlier ({sam} vs {es})");
            } else if es < sam {
                println!("es converged earlier ({es} vs {sam})");
            } else {
                println!("both converged at the same iteration");
            }
        }
        other => println!("threshold not reached by both: {other:?}"),
    }
}
