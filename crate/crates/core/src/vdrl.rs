//! Distributed value-decomposition reinforcement learning.
//!
//! The joint value of a team state is modeled as the sum of per-DBS
//! individual values, so each DBS trains its own value and policy networks
//! from nothing but its own experience, the team stage rewards, and the
//! per-step sums of individual values. The value update is the
//! residual-gradient form (the gradient flows through both the bootstrapped
//! and the current value); the policy update is a plain policy-gradient
//! ascent step weighted by individual advantages.
//!
//! Step-size schedules are restricted to a family that is positive,
//! nonincreasing, vanishing, and non-summable, which is what the convergence
//! argument for this scheme requires.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{entropy, forward_policy, grad_log_prob, value_and_grad, NetArch, ParamVector};
use crate::error::{Error, Result};
use crate::sim::{feasible_actions, rollout, state_encoding, Experience, RolloutOutput};
use crate::world::{sample_realization, RequestRealization, TaskDistribution, World};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Policy and value parameters for every DBS.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub policy: Vec<ParamVector>,
    pub value: Vec<ParamVector>,
}

impl ParamSet {
    /// Fresh uniformly-initialized networks, one policy/value pair per DBS,
    /// drawn in DBS order (policy first).
    pub fn init(world: &World, arch: &NetArch, rng: &mut impl Rng) -> ParamSet {
        let locations = world.num_clusters() + 1;
        let mut policy = Vec::with_capacity(world.num_dbs());
        let mut value = Vec::with_capacity(world.num_dbs());
        for _ in 0..world.num_dbs() {
            policy.push(ParamVector::init_uniform(arch.policy_shape(locations), rng));
            value.push(ParamVector::init_uniform(arch.value_shape(locations), rng));
        }
        ParamSet { policy, value }
    }

    pub fn num_dbs(&self) -> usize {
        self.policy.len()
    }
}

// ---------------------------------------------------------------------------
// Step-size schedules
// ---------------------------------------------------------------------------

/// Step size `scale / (offset + i)^power` at iteration `i` (0-based).
///
/// With `scale > 0`, `offset > 0` and `power` in (0.5, 1], the sequence is
/// positive, nonincreasing, vanishes, and sums to infinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub scale: f64,
    pub offset: f64,
    pub power: f64,
}

impl StepSchedule {
    pub fn new(scale: f64, offset: f64, power: f64) -> Result<StepSchedule> {
        let s = StepSchedule {
            scale,
            offset,
            power,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::config(format!(
                "schedule scale must be > 0, got {}",
                self.scale
            )));
        }
        if !(self.offset > 0.0) || !self.offset.is_finite() {
            return Err(Error::config(format!(
                "schedule offset must be > 0, got {}",
                self.offset
            )));
        }
        if !(self.power > 0.5 && self.power <= 1.0) {
            return Err(Error::config(format!(
                "schedule power must be in (0.5, 1], got {}",
                self.power
            )));
        }
        Ok(())
    }

    pub fn value(&self, iteration: u32) -> f64 {
        self.scale / (self.offset + iteration as f64).powf(self.power)
    }
}

// ---------------------------------------------------------------------------
// Training configuration
// ---------------------------------------------------------------------------

/// Whether the value update keeps the gradient through the bootstrapped term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ValueUpdateMode {
    /// Residual gradient through both value terms (the published form).
    #[default]
    Residual,
    /// Conventional TD update with a detached target, for ablations.
    SemiGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_iterations: u32,
    /// Discount factor in (0, 1].
    pub discount: f64,
    pub value_schedule: StepSchedule,
    pub policy_schedule: StepSchedule,
    /// Convergence is declared when the mean team utility over the last
    /// window moves by less than the tolerance against the window before it.
    pub convergence_window: u32,
    pub convergence_tol: f64,
    pub stop_on_convergence: bool,
    pub value_update: ValueUpdateMode,
    /// Scale the team reward by N in the team advantage (the published
    /// form). Disabling it is a diagnostic.
    pub scale_team_reward_by_n: bool,
    /// Run seed; orchestration uses it to derive init and RNG streams.
    pub seed: u64,
    pub checkpoint_interval: Option<u32>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_iterations: 5000,
            discount: 0.95,
            value_schedule: StepSchedule {
                scale: 0.01,
                offset: 1.0,
                power: 0.6,
            },
            policy_schedule: StepSchedule {
                scale: 0.005,
                offset: 1.0,
                power: 0.6,
            },
            convergence_window: 100,
            convergence_tol: 1e-3,
            stop_on_convergence: true,
            value_update: ValueUpdateMode::Residual,
            scale_team_reward_by_n: true,
            seed: 0,
            checkpoint_interval: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.value_schedule.validate()?;
        self.policy_schedule.validate()?;
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::config(format!(
                "discount must be in (0, 1], got {}",
                self.discount
            )));
        }
        if self.convergence_window == 0 {
            return Err(Error::config("convergence_window must be >= 1"));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::config("convergence_tol must be > 0"));
        }
        Ok(())
    }
}

/// What an episode is trained on: one fixed realization, or a fresh draw
/// from the task distribution every iteration.
#[derive(Debug, Clone)]
pub enum TrainTask<'a> {
    Fixed(&'a RequestRealization),
    Resample(&'a TaskDistribution),
}

// ---------------------------------------------------------------------------
// Advantages
// ---------------------------------------------------------------------------

/// Team and individual advantages of one episode, plus the individual values
/// they were computed from.
#[derive(Debug, Clone)]
pub struct Advantages {
    /// Team advantage A_k per step.
    pub team: Vec<f64>,
    /// Individual advantage per DBS per step; rows sum to the team advantage.
    pub individual: Vec<Vec<f64>>,
    /// Individual value at each visited state, `values[n][k]`.
    pub values: Vec<Vec<f64>>,
}

/// Advantages with the team reward scaled by the number of DBSs (the
/// published form).
pub fn team_advantage(
    world: &World,
    experiences: &[Experience],
    value_params: &[ParamVector],
    discount: f64,
) -> Result<Advantages> {
    team_advantage_scaled(
        world,
        experiences,
        value_params,
        discount,
        world.num_dbs() as f64,
    )
}

/// Advantages with an explicit team-reward scale (diagnostics use 1.0).
///
/// The terminal state after the last step has value zero. The identity
/// `sum_n individual[n][k] == team[k]` holds to machine precision.
pub fn team_advantage_scaled(
    world: &World,
    experiences: &[Experience],
    value_params: &[ParamVector],
    discount: f64,
    reward_scale: f64,
) -> Result<Advantages> {
    let n_dbs = experiences.len();
    if n_dbs == 0 || value_params.len() != n_dbs {
        return Err(Error::contract(format!(
            "{} experiences against {} value networks",
            n_dbs,
            value_params.len()
        )));
    }
    let steps = experiences[0].steps.len();
    for (n, e) in experiences.iter().enumerate() {
        if e.steps.len() != steps {
            return Err(Error::contract(format!(
                "experience {n} has {} steps, expected {steps}",
                e.steps.len()
            )));
        }
    }

    let mut values = vec![vec![0.0; steps]; n_dbs];
    for n in 0..n_dbs {
        for k in 0..steps {
            let enc = state_encoding(world, &experiences[n].steps[k].state);
            values[n][k] = crate::approx::forward_value(&value_params[n], &enc)?;
        }
    }

    let mut team = vec![0.0; steps];
    let mut individual = vec![vec![0.0; steps]; n_dbs];
    for k in 0..steps {
        let r = experiences[0].steps[k].reward;
        debug_assert!(
            experiences.iter().all(|e| e.steps[k].reward == r),
            "team stage rewards must agree across DBSs"
        );
        let sum_now: f64 = (0..n_dbs).map(|n| values[n][k]).sum();
        let sum_next: f64 = if k + 1 < steps {
            (0..n_dbs).map(|n| values[n][k + 1]).sum()
        } else {
            0.0
        };
        team[k] = reward_scale * r + discount * sum_next - sum_now;
        for n in 0..n_dbs {
            let next = if k + 1 < steps { values[n][k + 1] } else { 0.0 };
            individual[n][k] = r + discount * next - values[n][k];
        }
    }
    Ok(Advantages {
        team,
        individual,
        values,
    })
}

// ---------------------------------------------------------------------------
// Updates
// ---------------------------------------------------------------------------

/// One value update for a single DBS from its own experience and the team
/// advantages.
///
/// Residual mode applies `theta - 2*alpha * sum_k A_k * grad(gamma*V(s_{k+1})
/// - V(s_k))`; the terminal value is constant zero, so its gradient vanishes.
pub fn value_step(
    world: &World,
    params: &ParamVector,
    experience: &Experience,
    team_adv: &[f64],
    alpha: f64,
    discount: f64,
    mode: ValueUpdateMode,
) -> Result<ParamVector> {
    let steps = experience.steps.len();
    if team_adv.len() != steps {
        return Err(Error::contract(format!(
            "{} advantages for {} steps",
            team_adv.len(),
            steps
        )));
    }
    let grads: Vec<ParamVector> = experience
        .steps
        .iter()
        .map(|s| value_and_grad(params, &state_encoding(world, &s.state)).map(|(_, g)| g))
        .collect::<Result<_>>()?;

    let mut update = params.clone();
    for k in 0..steps {
        match mode {
            ValueUpdateMode::Residual => {
                if k + 1 < steps {
                    update.add_scaled(&grads[k + 1], -2.0 * alpha * team_adv[k] * discount);
                }
                update.add_scaled(&grads[k], 2.0 * alpha * team_adv[k]);
            }
            ValueUpdateMode::SemiGradient => {
                update.add_scaled(&grads[k], 2.0 * alpha * team_adv[k]);
            }
        }
    }
    if !update.all_finite() {
        return Err(Error::numeric(
            "value update produced non-finite parameters",
        ));
    }
    Ok(update)
}

/// One policy-gradient ascent step for a single DBS: `theta + alpha * sum_k
/// A~_{n,k} * grad log pi(a_k | s_k)`, with masks recomputed from the world.
pub fn policy_step(
    world: &World,
    params: &ParamVector,
    experience: &Experience,
    individual_adv: &[f64],
    alpha: f64,
) -> Result<ParamVector> {
    let steps = experience.steps.len();
    if individual_adv.len() != steps {
        return Err(Error::contract(format!(
            "{} advantages for {} steps",
            individual_adv.len(),
            steps
        )));
    }
    let mut update = params.clone();
    for (k, step) in experience.steps.iter().enumerate() {
        let mask = feasible_actions(&step.state, world);
        let action = step.action.action_index(world.num_clusters());
        let g = grad_log_prob(
            params,
            &state_encoding(world, &step.state),
            mask.bits(),
            action,
        )?;
        update.add_scaled(&g, alpha * individual_adv[k]);
    }
    if !update.all_finite() {
        return Err(Error::numeric(
            "policy update produced non-finite parameters",
        ));
    }
    Ok(update)
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Per-iteration observables recorded during training.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationMetrics {
    /// 1-based iteration index.
    pub iteration: u32,
    /// Team utility of the iteration's episode.
    pub team_utility: f64,
    /// Individual value of each DBS at its initial state, before the update.
    pub values_s0: Vec<f64>,
    /// L2 norm of the team-advantage vector.
    pub advantage_l2: f64,
    /// Mean policy entropy over visited states, before the update.
    pub entropy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub params: ParamSet,
    pub metrics: Vec<IterationMetrics>,
    /// Iteration at which the windowed mean of G settled, if it did.
    pub converged_at: Option<u32>,
    /// (iteration, parameters) snapshots at the configured interval.
    pub checkpoints: Vec<(u32, ParamSet)>,
}

impl TrainResult {
    pub fn utilities(&self) -> impl Iterator<Item = f64> + '_ {
        self.metrics.iter().map(|m| m.team_utility)
    }

    /// First iteration (1-based) at which the trailing mean of G over
    /// `window` iterations reaches `threshold`.
    pub fn first_window_mean_reaching(&self, threshold: f64, window: usize) -> Option<u32> {
        let g: Vec<f64> = self.utilities().collect();
        if window == 0 || g.len() < window {
            return None;
        }
        let mut sum: f64 = g[..window].iter().sum();
        if sum / window as f64 >= threshold {
            return Some(window as u32);
        }
        for i in window..g.len() {
            sum += g[i] - g[i - window];
            if sum / window as f64 >= threshold {
                return Some(i as u32 + 1);
            }
        }
        None
    }

    /// Mean team utility over the final `window` iterations.
    pub fn final_window_mean(&self, window: usize) -> Option<f64> {
        let g: Vec<f64> = self.utilities().collect();
        if g.is_empty() {
            return None;
        }
        let w = window.min(g.len()).max(1);
        Some(g[g.len() - w..].iter().sum::<f64>() / w as f64)
    }
}

/// Detects a settled windowed mean of the team utility.
///
/// Means are compared across disjoint windows, and convergence is declared
/// only after three consecutive stable comparisons; a single quiet window in
/// the middle of exploration is not convergence.
pub(crate) struct ConvergenceMonitor {
    window: usize,
    tol: f64,
    utilities: Vec<f64>,
    stable_checks: u32,
}

const CONVERGENCE_PATIENCE: u32 = 3;

impl ConvergenceMonitor {
    pub(crate) fn new(window: u32, tol: f64) -> ConvergenceMonitor {
        ConvergenceMonitor {
            window: window as usize,
            tol,
            utilities: Vec::new(),
            stable_checks: 0,
        }
    }

    /// Record one utility; true once the windowed mean has been stable for
    /// three window-aligned checks in a row.
    pub(crate) fn push(&mut self, g: f64) -> bool {
        self.utilities.push(g);
        let w = self.window;
        let n = self.utilities.len();
        if n < 2 * w || n % w != 0 {
            return self.stable_checks >= CONVERGENCE_PATIENCE;
        }
        let recent: f64 = self.utilities[n - w..].iter().sum::<f64>() / w as f64;
        let previous: f64 = self.utilities[n - 2 * w..n - w].iter().sum::<f64>() / w as f64;
        if (recent - previous).abs() < self.tol {
            self.stable_checks += 1;
        } else {
            self.stable_checks = 0;
        }
        self.stable_checks >= CONVERGENCE_PATIENCE
    }
}

pub(crate) struct IterationUpdate {
    pub(crate) metrics: IterationMetrics,
    pub(crate) rollout: RolloutOutput,
}

/// One full training iteration: rollout, advantages, per-DBS value and
/// policy steps. Shared by [`train`] and the meta inner loop.
pub(crate) fn train_iteration(
    world: &World,
    z: &RequestRealization,
    params: &mut ParamSet,
    alpha_value: f64,
    alpha_policy: f64,
    discount: f64,
    mode: ValueUpdateMode,
    reward_scale: f64,
    iteration: u32,
    rng: &mut impl Rng,
) -> Result<IterationUpdate> {
    let out = rollout(world, z, &params.policy, rng)?;
    let adv = team_advantage_scaled(
        world,
        &out.experiences,
        &params.value,
        discount,
        reward_scale,
    )?;

    let metrics = IterationMetrics {
        iteration,
        team_utility: out.outcome.team_utility,
        values_s0: adv.values.iter().map(|v| v[0]).collect(),
        advantage_l2: adv.team.iter().map(|a| a * a).sum::<f64>().sqrt(),
        entropy: mean_policy_entropy(world, &out.experiences, &params.policy)?,
    };

    for n in 0..world.num_dbs() {
        params.value[n] = value_step(
            world,
            &params.value[n],
            &out.experiences[n],
            &adv.team,
            alpha_value,
            discount,
            mode,
        )?;
    }
    for n in 0..world.num_dbs() {
        params.policy[n] = policy_step(
            world,
            &params.policy[n],
            &out.experiences[n],
            &adv.individual[n],
            alpha_policy,
        )?;
    }
    Ok(IterationUpdate {
        metrics,
        rollout: out,
    })
}

fn mean_policy_entropy(
    world: &World,
    experiences: &[Experience],
    policies: &[ParamVector],
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (n, exp) in experiences.iter().enumerate() {
        for step in &exp.steps {
            let mask = feasible_actions(&step.state, world);
            let enc = state_encoding(world, &step.state);
            let probs = forward_policy(&policies[n], &enc, mask.bits())?;
            total += entropy(&probs);
            count += 1;
        }
    }
    Ok(if count == 0 {
        0.0
    } else {
        total / count as f64
    })
}

/// Run VD-RL training. `rng` drives episode sampling (and task resampling in
/// [`TrainTask::Resample`] mode); results are bit-reproducible from (world,
/// task, init, config, rng state).
pub fn train(
    world: &World,
    task: TrainTask<'_>,
    init: ParamSet,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<TrainResult> {
    cfg.validate()?;
    if init.num_dbs() != world.num_dbs() {
        return Err(Error::contract(format!(
            "init has {} DBSs, world has {}",
            init.num_dbs(),
            world.num_dbs()
        )));
    }
    let mut params = init;
    let mut metrics = Vec::new();
    let mut checkpoints = Vec::new();
    let mut converged_at = None;
    let mut monitor = ConvergenceMonitor::new(cfg.convergence_window, cfg.convergence_tol);
    let reward_scale = if cfg.scale_team_reward_by_n {
        world.num_dbs() as f64
    } else {
        1.0
    };

    for i in 0..cfg.max_iterations {
        let resampled;
        let z = match &task {
            TrainTask::Fixed(z) => *z,
            TrainTask::Resample(dist) => {
                resampled = sample_realization(dist, world, rng)?;
                &resampled
            }
        };
        let update = train_iteration(
            world,
            z,
            &mut params,
            cfg.value_schedule.value(i),
            cfg.policy_schedule.value(i),
            cfg.discount,
            cfg.value_update,
            reward_scale,
            i + 1,
            rng,
        )
        .map_err(|e| match e {
            Error::Numeric(msg) => Error::Numeric(format!("iteration {}: {msg}", i + 1)),
            other => other,
        })?;
        let g = update.metrics.team_utility;
        metrics.push(update.metrics);
        if let Some(interval) = cfg.checkpoint_interval {
            if interval > 0 && (i + 1) % interval == 0 {
                checkpoints.push((i + 1, params.clone()));
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
        params,
        metrics,
        converged_at,
        checkpoints,
    })
}

/// Convenience: derive the RNG and initialization from a seed, then train.
pub fn train_from_seed(
    world: &World,
    task: TrainTask<'_>,
    arch: &NetArch,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainResult> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = ParamSet::init(world, arch, &mut rng);
    train(world, task, init, cfg, &mut rng)
}
