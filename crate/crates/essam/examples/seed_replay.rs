//! Seed-replay evaluation: perturb in place, score, regenerate the noise,
//! restore. No perturbation vector is ever stored, so peak transient memory
//! stays bounded by the largest layer no matter how many seeds are swept.

use essam::es::{dipu, perturb_in_place, sre};
use essam::noise::{derive_seed, Seed};
use essam::objectives::{alloc, BatchRef, Sphere};
use essam::params::{InitRule, ParamStore};

fn main() {
    let layers: &[(&str, usize)] = &[("embed", 60_000), ("body", 30_000), ("head", 10_000)];
    let dim: usize = layers.iter().map(|(_, len)| len).sum();
    let objective = Sphere::new(dim);
    let batch = BatchRef::empty();
    let mut store = ParamStore::create(
        layers,
        InitRule::SeededGaussian {
            seed: Seed(3),
            scale: 0.5,
        },
    )
    .unwrap();

    let before = store.digest();
    println!("dim {dim}, max layer {} elements", store.max_layer_len());
    println!("digest before  {before}");

    let seed = derive_seed(Seed(42), 0, 1, 0);
    perturb_in_place(&mut store, seed, 2e-3).unwrap();
    println!("perturbed      {}", store.digest());
    perturb_in_place(&mut store, seed, -2e-3).unwrap();
    let drift: f64 = store
        .values()
        .iter()
        .zip(ParamStore::create(layers, InitRule::SeededGaussian { seed: Seed(3), scale: 0.5 }).unwrap().values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("restored       {}  (max drift {drift:.3e})", store.digest());

    let seeds: Vec<Seed> = (0..64).map(|m| derive_seed(Seed(42), 1, 1, m)).collect();
    alloc::reset();
    let rewards = sre(&mut store, &objective, 2e-3, &seeds, &batch).unwrap();
    let weights = vec![1.0 / seeds.len() as f64; seeds.len()];
    dipu(&mut store, &seeds, &weights, 1e-3).unwrap();
    println!(
        "swept {} seeds: mean reward {:+.4e}",
        rewards.len(),
        rewards.iter().sum::<f64>() / rewards.len() as f64
    );
    println!(
        "peak transient noise {} elements (bound {} = max layer)",
        alloc::peak_elems(),
        store.max_layer_len()
    );
}
