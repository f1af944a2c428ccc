//! End-to-end training sanity on the preset worlds, at reduced scale.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dronecov_core::presets::{coordination, paper_tiny};
use dronecov_core::sim::enumerate_optimal;
use dronecov_core::vdrl::{train, ParamSet, TrainTask};
use dronecov_core::world::sample_realization;
use dronecov_core::World;

/// One seed of the tiny world reaches the brute-force optimum's
/// neighborhood; the full ten-seed version lives in the acceptance suite.
#[test]
fn tiny_world_training_approaches_the_oracle() {
    let preset = paper_tiny();
    let world = World::new(preset.world.clone()).unwrap();
    let mut zrng = ChaCha8Rng::seed_from_u64(777);
    let z = sample_realization(&preset.tasks, &world, &mut zrng).unwrap();
    let oracle = enumerate_optimal(&world, &z, 4096).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let init = ParamSet::init(&world, &preset.arch, &mut rng);
    let result = train(&world, TrainTask::Fixed(&z), init, &preset.train, &mut rng).unwrap();
    let hit = result.first_window_mean_reaching(0.98 * oracle.best_utility, 100);
    assert!(
        hit.is_some(),
        "never reached 98% of G* = {}; final {:?}",
        oracle.best_utility,
        result.final_window_mean(100)
    );
}

/// Training on resampled tasks stays finite and reproducible.
#[test]
fn resampled_task_training_is_reproducible() {
    let preset = coordination();
    let world = World::new(preset.world.clone()).unwrap();
    let cfg = dronecov_core::vdrl::TrainConfig {
        max_iterations: 150,
        stop_on_convergence: false,
        ..preset.train.clone()
    };
    let run = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = ParamSet::init(&world, &preset.arch, &mut rng);
        train(
            &world,
            TrainTask::Resample(&preset.tasks),
            init,
            &cfg,
            &mut rng,
        )
        .unwrap()
    };
    let a = run(3);
    let b = run(3);
    assert_eq!(a.params, b.params);
    assert_eq!(a.metrics.len(), 150);
}
