//! Shared fixtures for the benchmark suite.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dronecov_core::presets::{paper_like, paper_tiny, Preset};
use dronecov_core::world::{sample_realization, RequestRealization};
use dronecov_core::World;

pub struct Fixture {
    pub preset: Preset,
    pub world: World,
    pub realization: RequestRealization,
}

pub fn tiny() -> Fixture {
    fixture(paper_tiny())
}

pub fn large() -> Fixture {
    fixture(paper_like(5))
}

fn fixture(preset: Preset) -> Fixture {
    let world = World::new(preset.world.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(777);
    let realization = sample_realization(&preset.tasks, &world, &mut rng).unwrap();
    Fixture {
        preset,
        world,
        realization,
    }
}
