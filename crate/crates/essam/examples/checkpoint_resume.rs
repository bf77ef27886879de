//! Checkpoint and resume determinism: a run split in two lands on exactly
//! the digest of an unbroken run, because resuming replays the logged
//! records from the latest checkpoint and then continues the same seed
//! schedule.

use std::path::Path;

use essam::objectives::ObjectiveSpec;
use essam::run::{resume, run, Algorithm, InitSpec, RunConfig};

fn config(dir: &Path, iterations: u64) -> RunConfig {
    RunConfig {
        algorithm: Algorithm::Essam,
        objective: ObjectiveSpec::Sphere { dim: 64 },
        population: 16,
        sigma: 2e-3,
        alpha: 1e-2,
        rho: 5e-3,
        delta: 1e-8,
        iterations,
        master_seed: 2026,
        workers: 1,
        batch_size: 0,
        init: InitSpec::Constant { value: 0.125 },
        out: dir.to_path_buf(),
        checkpoint_every: 25,
    }
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let whole_dir = tmp.path().join("whole");
    let split_dir = tmp.path().join("split");

    let whole = run(&config(&whole_dir, 100)).unwrap();
    println!("unbroken 100 iterations: digest {}", whole.final_digest);

    let first = run(&config(&split_dir, 60)).unwrap();
    println!("first 60 iterations:     digest {}", first.final_digest);
    let second = resume(&split_dir, 40).unwrap();
    println!("resumed to 100:          digest {}", second.final_digest);

    assert_eq!(whole.final_digest, second.final_digest);
    println!("split and unbroken runs agree");
}
