use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dronecov_bench::{large, tiny};
use dronecov_core::approx::{
    grad_log_prob, grad_value, hvp_value, NetArch, ParamVector, StateEncoding,
};
use dronecov_core::sim::{enumerate_optimal, rollout, run_episode, JointTrajectory};
use dronecov_core::vdrl::{train, ParamSet, TrainConfig, TrainTask};
use dronecov_core::world::{link_budget, Location};

fn bench_channel(c: &mut Criterion) {
    let f = tiny();
    let radio = f.world.radio().clone();
    c.bench_function("link_budget", |b| {
        b.iter(|| link_budget(&radio, [12.0, -31.0], [0.0, 0.0], 100.0).unwrap())
    });
}

fn bench_episode(c: &mut Criterion) {
    let f = tiny();
    let traj = JointTrajectory::new(
        vec![
            vec![Location::Cluster(0), Location::Cluster(1), Location::Origin],
            vec![Location::Cluster(2), Location::Origin, Location::Origin],
        ],
        &f.world,
    )
    .unwrap();
    c.bench_function("run_episode_tiny", |b| {
        b.iter(|| run_episode(&f.world, &f.realization, &traj).unwrap())
    });

    let big = large();
    let rows: Vec<Vec<Location>> = (0..big.world.num_dbs())
        .map(|n| {
            vec![
                Location::Cluster(n % 6),
                Location::Cluster((n + 1) % 6),
                Location::Cluster((n + 2) % 6),
                Location::Origin,
            ]
        })
        .collect();
    let traj = JointTrajectory::new(rows, &big.world).unwrap();
    c.bench_function("run_episode_large", |b| {
        b.iter(|| run_episode(&big.world, &big.realization, &traj).unwrap())
    });
}

fn bench_gradients(c: &mut Criterion) {
    let arch = NetArch::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let policy = ParamVector::init_uniform(arch.policy_shape(4), &mut rng);
    let value = ParamVector::init_uniform(arch.value_shape(4), &mut rng);
    let dir = ParamVector::init_uniform(arch.value_shape(4), &mut rng);
    let enc = StateEncoding::new(1, 4, 0.6).unwrap();
    let mask = [true, true, true, true];
    c.bench_function("grad_log_prob_64x64", |b| {
        b.iter(|| grad_log_prob(&policy, &enc, &mask, 2).unwrap())
    });
    c.bench_function("grad_value_64x64", |b| {
        b.iter(|| grad_value(&value, &enc).unwrap())
    });
    c.bench_function("hvp_value_64x64", |b| {
        b.iter(|| hvp_value(&value, &enc, &dir).unwrap())
    });
}

fn bench_training(c: &mut Criterion) {
    let f = tiny();
    c.bench_function("rollout_tiny", |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = ParamSet::init(&f.world, &f.preset.arch, &mut rng);
        b.iter(|| rollout(&f.world, &f.realization, &params.policy, &mut rng).unwrap())
    });
    c.bench_function("train_iteration_tiny", |b| {
        let cfg = TrainConfig {
            max_iterations: 1,
            stop_on_convergence: false,
            ..f.preset.train.clone()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let init = ParamSet::init(&f.world, &f.preset.arch, &mut rng);
        b.iter(|| {
            train(
                &f.world,
                TrainTask::Fixed(&f.realization),
                init.clone(),
                &cfg,
                &mut rng,
            )
            .unwrap()
        })
    });
}

fn bench_oracle(c: &mut Criterion) {
    let f = tiny();
    c.bench_function("enumerate_optimal_tiny", |b| {
        b.iter(|| enumerate_optimal(&f.world, &f.realization, 4096).unwrap())
    });
}

criterion_group!(
    benches,
    bench_channel,
    bench_episode,
    bench_gradients,
    bench_training,
    bench_oracle
);
criterion_main!(benches);
