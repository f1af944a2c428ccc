//! Comparison algorithms: independent actor-critic and pre-trained
//! initializations.
//!
//! IAC keeps a single policy/value pair shared by every DBS and updates it
//! with each DBS's own individual service rate instead of the team reward.
//! Pre-training chains full VD-RL runs across a task list, carrying the final
//! parameters from one task into the next.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{entropy, forward_policy, grad_log_prob, value_and_grad, ParamVector};
use crate::error::{Error, Result};
use crate::sim::{feasible_actions, rollout, state_encoding};
use crate::vdrl::{
    self, ConvergenceMonitor, IterationMetrics, ParamSet, TrainConfig, TrainResult, TrainTask,
    ValueUpdateMode,
};
use crate::world::{sample_realization, World};

/// Training regimes compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Iac,
    PretrainedVdrl,
    RandomInitVdrl,
}

impl BaselineKind {
    /// Label used in reports and metrics.
    pub fn label(self) -> &'static str {
        match self {
            BaselineKind::Iac => "iac",
            BaselineKind::PretrainedVdrl => "pretrained",
            BaselineKind::RandomInitVdrl => "random",
        }
    }
}

impl std::fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// Independent actor-critic: one shared policy and value network for all
/// DBSs, updated from individual rewards.
///
/// The shared pair is stored once; the returned parameter set replicates it
/// per DBS, so the replicas are identical by construction.
pub fn iac_train(
    world: &World,
    task: TrainTask<'_>,
    init_policy: ParamVector,
    init_value: ParamVector,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<TrainResult> {
    cfg.validate()?;
    let n_dbs = world.num_dbs();
    let mut policy = init_policy;
    let mut value = init_value;
    let mut metrics = Vec::new();
    let mut checkpoints = Vec::new();
    let mut converged_at = None;
    let mut monitor = ConvergenceMonitor::new(cfg.convergence_window, cfg.convergence_tol);

    for i in 0..cfg.max_iterations {
        let resampled;
        let z = match &task {
            TrainTask::Fixed(z) => *z,
            TrainTask::Resample(dist) => {
                resampled = sample_realization(dist, world, rng)?;
                &resampled
            }
        };
        let shared: Vec<ParamVector> = vec![policy.clone(); n_dbs];
        let out = rollout(world, z, &shared, rng)?;

        // Individual advantages from the shared value net and each DBS's own
        // service rates.
        let steps = world.max_steps();
        let mut values = vec![vec![0.0; steps]; n_dbs];
        let mut vgrads: Vec<Vec<ParamVector>> = Vec::with_capacity(n_dbs);
        for n in 0..n_dbs {
            let mut row = Vec::with_capacity(steps);
            for k in 0..steps {
                let enc = state_encoding(world, &out.experiences[n].steps[k].state);
                let (v, g) = value_and_grad(&value, &enc)?;
                values[n][k] = v;
                row.push(g);
            }
            vgrads.push(row);
        }
        let mut adv = vec![vec![0.0; steps]; n_dbs];
        for n in 0..n_dbs {
            for k in 0..steps {
                let next = if k + 1 < steps { values[n][k + 1] } else { 0.0 };
                adv[n][k] = out.outcome.service_rates[n][k] + cfg.discount * next - values[n][k];
            }
        }

        // Single joint update accumulated at the pre-update parameters.
        let alpha_c = cfg.value_schedule.value(i);
        let alpha_a = cfg.policy_schedule.value(i);
        let mut value_dir = ParamVector::zeros(value.shape().clone());
        let mut policy_dir = ParamVector::zeros(policy.shape().clone());
        let mut entropy_sum = 0.0;
        for n in 0..n_dbs {
            for k in 0..steps {
                match cfg.value_update {
                    ValueUpdateMode::Residual => {
                        if k + 1 < steps {
                            value_dir.add_scaled(&vgrads[n][k + 1], adv[n][k] * cfg.discount);
                        }
                        value_dir.add_scaled(&vgrads[n][k], -adv[n][k]);
                    }
                    ValueUpdateMode::SemiGradient => {
                        value_dir.add_scaled(&vgrads[n][k], -adv[n][k]);
                    }
                }
                let step = &out.experiences[n].steps[k];
                let mask = feasible_actions(&step.state, world);
                let enc = state_encoding(world, &step.state);
                let action = step.action.action_index(world.num_clusters());
                let glp = grad_log_prob(&policy, &enc, mask.bits(), action)?;
                policy_dir.add_scaled(&glp, adv[n][k]);
                entropy_sum += entropy(&forward_policy(&policy, &enc, mask.bits())?);
            }
        }
        let iteration_metrics = IterationMetrics {
            iteration: i + 1,
            team_utility: out.outcome.team_utility,
            values_s0: (0..n_dbs).map(|n| values[n][0]).collect(),
            advantage_l2: adv.iter().flatten().map(|a| a * a).sum::<f64>().sqrt(),
            entropy: entropy_sum / (n_dbs * steps) as f64,
        };
        value.add_scaled(&value_dir, -2.0 * alpha_c);
        policy.add_scaled(&policy_dir, alpha_a);
        if !value.all_finite() || !policy.all_finite() {
            return Err(Error::numeric(format!(
                "iteration {}: IAC update produced non-finite parameters",
                i + 1
            )));
        }

        let g = iteration_metrics.team_utility;
        metrics.push(iteration_metrics);
        if let Some(interval) = cfg.checkpoint_interval {
            if interval > 0 && (i + 1) % interval == 0 {
                checkpoints.push((
                    i + 1,
                    ParamSet {
                        policy: vec![policy.clone(); n_dbs],
                        value: vec![value.clone(); n_dbs],
                    },
                ));
            }
        }
        if monitor.push(g) && converged_at.is_none() {
            converged_at = Some(i + 1);
            if cfg.stop_on_convergence {
                break;
            }
        }
    }

    Ok(TrainResult {
        params: ParamSet {
            policy: vec![policy; n_dbs],
            value: vec![value; n_dbs],
        },
        metrics,
        converged_at,
        checkpoints,
    })
}

/// Sequential full VD-RL training across a task list, each task starting
/// from the previous task's final parameters; the result serves as an
/// initialization for unseen tasks.
pub fn pretrain_init(
    world: &World,
    tasks: &[crate::world::RequestRealization],
    init: ParamSet,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<ParamSet> {
    let mut params = init;
    for z in tasks {
        let result = vdrl::train(world, TrainTask::Fixed(z), params, cfg, rng)?;
        params = result.params;
    }
    Ok(params)
}
