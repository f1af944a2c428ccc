//! Experiment orchestration: fan runs out across seeds, write artifacts,
//! and summarize.
//!
//! Every run writes only into its own `out/<run_id>/` directory, so runs are
//! independent and the worker count never changes file contents. All output
//! files carry the spec hash and a schema version in leading comments.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dronecov_core::baselines::{iac_train, pretrain_init, BaselineKind};
use dronecov_core::checkpoint::write_param_set;
use dronecov_core::meta::{evaluate_adaptation, meta_train};
use dronecov_core::metrics::{render_meta_csv, render_metrics_csv, rows_from_train, MetricsRow};
use dronecov_core::sim::{enumerate_optimal, rollout, OptimalSearch};
use dronecov_core::vdrl::{train, ParamSet, TrainConfig, TrainResult, TrainTask};
use dronecov_core::world::{sample_realization, RequestRealization};

use crate::spec::{Algo, Experiment};

/// Default seed of the request realization experiments train on; override
/// with `--override task_seed=<n>` once it is promoted to the spec, or via
/// `--seed` on the oracle subcommand.
pub const DEFAULT_TASK_SEED: u64 = 777;

fn mix(base: u64, salt: u64) -> u64 {
    let mut x = base ^ salt.wrapping_mul(0x9e3779b97f4a7c15);
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58476d1ce4e5b9);
    x ^= x >> 27;
    x ^ (x >> 31)
}

/// The realization a spec's training runs share.
pub fn training_realization(exp: &Experiment, task_seed: u64) -> Result<RequestRealization> {
    let mut rng = ChaCha8Rng::seed_from_u64(task_seed);
    Ok(sample_realization(&exp.tasks, &exp.world, &mut rng)?)
}

fn annotations(exp: &Experiment, run_id: &str) -> Vec<String> {
    vec![
        format!("spec_hash: {}", exp.spec_hash),
        format!("schema_version: {}", crate::spec::SPEC_SCHEMA_VERSION),
        format!("run: {run_id}"),
    ]
}

/// Outcome summary of one training run, for `compare`.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_id: String,
    pub algo: Algo,
    pub seed: u64,
    pub iterations: u32,
    pub converged_at: Option<u32>,
    pub final_utility: f64,
}

fn execute_run(
    exp: &Experiment,
    algo: Algo,
    seed: u64,
    z: &RequestRealization,
) -> Result<(TrainResult, String)> {
    let run_id = format!("{algo}-s{seed}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = ParamSet::init(&exp.world, &exp.arch, &mut rng);
    let result = match algo {
        Algo::Vdrl => train(&exp.world, TrainTask::Fixed(z), init, &exp.train, &mut rng)?,
        Algo::Iac => iac_train(
            &exp.world,
            TrainTask::Fixed(z),
            init.policy[0].clone(),
            init.value[0].clone(),
            &exp.train,
            &mut rng,
        )?,
        Algo::Pretrain => {
            // Sequential training over the same task prefix a matched meta
            // run would sample.
            let mut task_rng = ChaCha8Rng::seed_from_u64(exp.meta.seed.wrapping_add(seed));
            let tasks: Vec<RequestRealization> = (0..exp.pretrain.tasks)
                .map(|_| sample_realization(&exp.tasks, &exp.world, &mut task_rng))
                .collect::<dronecov_core::Result<_>>()?;
            let per_task = TrainConfig {
                max_iterations: exp.pretrain.iterations_per_task,
                ..exp.train.clone()
            };
            let params = pretrain_init(&exp.world, &tasks, init, &per_task, &mut rng)?;
            // A short fixed-task run from the pre-trained parameters records
            // the adaptation curve the checkpoint is meant for.
            train(
                &exp.world,
                TrainTask::Fixed(z),
                params,
                &exp.train,
                &mut rng,
            )?
        }
        Algo::Meta | Algo::Oracle => bail!("{algo} does not run under `train`"),
    };
    Ok((result, run_id))
}

fn write_run_artifacts(
    exp: &Experiment,
    out: &Path,
    run_id: &str,
    algo: Algo,
    seed: u64,
    z: &RequestRealization,
    result: &TrainResult,
) -> Result<()> {
    let dir = out.join(run_id);
    std::fs::create_dir_all(&dir)?;
    let rows = rows_from_train(run_id, &algo.to_string(), seed, exp.world.num_dbs(), result);
    std::fs::write(
        dir.join("metrics.csv"),
        render_metrics_csv(&rows, &exp.spec_hash)?,
    )?;
    std::fs::write(
        dir.join("checkpoint.ckpt"),
        write_param_set(&result.params, &annotations(exp, run_id)),
    )?;
    for (iteration, params) in &result.checkpoints {
        std::fs::write(
            dir.join(format!("checkpoint-{iteration}.ckpt")),
            write_param_set(params, &annotations(exp, run_id)),
        )?;
    }
    // One evaluation episode under the final policies, for the event log.
    let mut eval_rng = ChaCha8Rng::seed_from_u64(mix(seed, 0xE7150D));
    let episode = rollout(&exp.world, z, &result.params.policy, &mut eval_rng)?;
    std::fs::write(
        dir.join("episode.log"),
        episode.outcome.write_event_log(&annotations(exp, run_id)),
    )?;
    Ok(())
}

/// Run `algo` across the experiment's seeds with at most `jobs` workers.
pub fn run_training(
    exp: &Experiment,
    algo: Algo,
    out: &Path,
    jobs: usize,
    task_seed: u64,
) -> Result<Vec<RunSummary>> {
    let z = training_realization(exp, task_seed)?;
    let seeds = exp.seeds.clone();
    let next = AtomicUsize::new(0);
    let summaries: Mutex<Vec<RunSummary>> = Mutex::new(Vec::new());
    let failures: Mutex<Vec<anyhow::Error>> = Mutex::new(Vec::new());

    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(seeds.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= seeds.len() {
                    return;
                }
                let seed = seeds[i];
                let outcome = execute_run(exp, algo, seed, &z).and_then(|(result, run_id)| {
                    write_run_artifacts(exp, out, &run_id, algo, seed, &z, &result)?;
                    Ok(RunSummary {
                        run_id,
                        algo,
                        seed,
                        iterations: result.metrics.len() as u32,
                        converged_at: result.converged_at,
                        final_utility: result
                            .final_window_mean(exp.train.convergence_window as usize)
                            .unwrap_or(0.0),
                    })
                });
                match outcome {
                    Ok(s) => summaries.lock().unwrap().push(s),
                    Err(e) => failures.lock().unwrap().push(e),
                }
            });
        }
    });

    if let Some(e) = failures.into_inner().unwrap().into_iter().next() {
        return Err(e);
    }
    let mut summaries = summaries.into_inner().unwrap();
    summaries.sort_by_key(|s| s.seed);
    Ok(summaries)
}

/// Meta-train the spec's initialization; writes the loss CSV and the final
/// initialization checkpoint.
pub fn run_meta_train(exp: &Experiment, out: &Path) -> Result<PathBuf> {
    let seed = exp.seeds[0];
    let run_id = format!("meta-s{seed}");
    let dir = out.join(&run_id);
    std::fs::create_dir_all(&dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = ParamSet::init(&exp.world, &exp.arch, &mut rng);
    let result = meta_train(&exp.world, &exp.tasks, init, &exp.meta, &mut rng)?;
    std::fs::write(
        dir.join("meta_metrics.csv"),
        render_meta_csv(&result.history, &exp.spec_hash),
    )?;
    let ckpt = dir.join("checkpoint.ckpt");
    std::fs::write(
        &ckpt,
        write_param_set(&result.params, &annotations(exp, &run_id)),
    )?;
    Ok(ckpt)
}

/// Compare adaptation speed of random, pre-trained, and meta-trained
/// initializations on held-out tasks; writes the structured-text report.
pub fn run_eval_adaptation(exp: &Experiment, out: &Path) -> Result<String> {
    let base = exp.seeds[0];
    let mut rng = ChaCha8Rng::seed_from_u64(mix(base, 1));
    let random_init = ParamSet::init(&exp.world, &exp.arch, &mut rng);

    let mut meta_rng = ChaCha8Rng::seed_from_u64(mix(base, 2));
    let meta = meta_train(
        &exp.world,
        &exp.tasks,
        random_init.clone(),
        &exp.meta,
        &mut meta_rng,
    )?;

    // The pre-trained baseline consumes the same task stream a matched meta
    // run samples, truncated to its task budget.
    let mut pre_rng = ChaCha8Rng::seed_from_u64(mix(base, 2));
    let tasks: Vec<RequestRealization> = (0..exp.pretrain.tasks)
        .map(|_| sample_realization(&exp.tasks, &exp.world, &mut pre_rng))
        .collect::<dronecov_core::Result<_>>()?;
    let per_task = TrainConfig {
        max_iterations: exp.pretrain.iterations_per_task,
        ..exp.train.clone()
    };
    let pre = pretrain_init(
        &exp.world,
        &tasks,
        random_init.clone(),
        &per_task,
        &mut pre_rng,
    )?;

    let budget = TrainConfig {
        max_iterations: exp.eval.budget_iterations,
        stop_on_convergence: false,
        ..exp.train.clone()
    };
    let inits = vec![
        (BaselineKind::RandomInitVdrl.to_string(), random_init),
        (BaselineKind::PretrainedVdrl.to_string(), pre),
        ("meta".to_string(), meta.params),
    ];
    let report = evaluate_adaptation(&exp.world, &exp.tasks, &inits, &budget, &exp.eval)?;
    let text = report.render(&annotations(exp, "eval-adaptation"));
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("adaptation.txt"), &text)?;
    Ok(text)
}

/// Brute-force the optimal joint trajectory of the spec's realization.
pub fn run_oracle(
    exp: &Experiment,
    task_seed: u64,
    cap: u128,
) -> Result<(OptimalSearch, RequestRealization)> {
    let z = training_realization(exp, task_seed)?;
    let search = enumerate_optimal(&exp.world, &z, cap)?;
    Ok((search, z))
}

/// Per-algorithm summary table over the spec's seeds.
pub fn run_compare(
    exp: &Experiment,
    algos: &[Algo],
    out: &Path,
    jobs: usize,
    task_seed: u64,
) -> Result<String> {
    let mut lines = String::new();
    lines.push_str("# dronecov-compare v1\n");
    lines.push_str(&format!(
        "# schema_version: {}\n",
        crate::spec::SPEC_SCHEMA_VERSION
    ));
    lines.push_str(&format!("# spec_hash: {}\n", exp.spec_hash));
    lines.push_str(
        "algo,runs,median_iterations_to_converge,final_g_min,final_g_median,final_g_max\n",
    );
    for &algo in algos {
        if algo == Algo::Oracle {
            let (search, _) = run_oracle(exp, task_seed, exp.eval.enumeration_cap as u128)?;
            lines.push_str(&format!(
                "oracle,1,0,{g},{g},{g}\n",
                g = search.best_utility
            ));
            continue;
        }
        let summaries = run_training(exp, algo, out, jobs, task_seed)?;
        let mut finals: Vec<f64> = summaries.iter().map(|s| s.final_utility).collect();
        finals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut iters: Vec<f64> = summaries
            .iter()
            .map(|s| s.converged_at.unwrap_or(exp.train.max_iterations) as f64)
            .collect();
        iters.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = |v: &[f64]| {
            if v.is_empty() {
                0.0
            } else if v.len() % 2 == 1 {
                v[v.len() / 2]
            } else {
                (v[v.len() / 2 - 1] + v[v.len() / 2]) / 2.0
            }
        };
        lines.push_str(&format!(
            "{algo},{},{},{},{},{}\n",
            summaries.len(),
            med(&iters),
            finals.first().copied().unwrap_or(0.0),
            med(&finals),
            finals.last().copied().unwrap_or(0.0),
        ));
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("summary.csv"), &lines)?;
    Ok(lines)
}

/// Gather metrics rows from every `*/metrics.csv` under a directory, in
/// lexicographic run order.
pub fn load_all_metrics(dir: &Path) -> Result<Vec<MetricsRow>> {
    let mut runs: Vec<PathBuf> = Vec::new();
    for entry in std::fs::read_dir(dir)
        .with_context(|| format!("reading metrics directory {}", dir.display()))?
    {
        let path = entry?.path();
        if path.is_dir() && path.join("metrics.csv").is_file() {
            runs.push(path);
        }
    }
    runs.sort();
    let mut rows = Vec::new();
    for run in runs {
        let text = std::fs::read_to_string(run.join("metrics.csv"))?;
        rows.extend(dronecov_core::metrics::parse_metrics_csv(&text)?);
    }
    Ok(rows)
}
