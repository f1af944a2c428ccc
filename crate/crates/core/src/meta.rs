//! Meta-training of VD-RL initializations over a task distribution.
//!
//! Each meta iteration samples J request realizations. For every realization
//! the DBSs take exactly one VD-RL step from the shared initialization
//! (inner adaptation), then roll out the adapted policies once more to score
//! them: a squared-TD value loss and an advantage-weighted log-likelihood
//! policy loss. The meta update descends the summed losses with respect to
//! the initialization.
//!
//! Two gradient modes exist. `FirstOrder` treats the adapted parameters as
//! detached from the initialization (the usual first-order approximation).
//! `Exact` differentiates through the inner step, including the
//! second-derivative terms, via analytic Hessian-vector products; it is
//! intended for toy-scale gradient checks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{
    grad_log_prob, hvp_log_prob, hvp_value, log_prob, value_and_grad, ParamVector,
};
use crate::error::{Error, Result};
use crate::sim::{enumerate_optimal, feasible_actions, rollout, state_encoding, Experience};
use crate::vdrl::{
    self, train_iteration, ParamSet, TrainConfig, TrainResult, TrainTask, ValueUpdateMode,
};
use crate::world::{sample_realization, RequestRealization, TaskDistribution, World};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// How the meta gradient treats the inner adaptation step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GradMode {
    /// Inner-update Jacobian replaced by the identity.
    #[default]
    FirstOrder,
    /// Full derivative through the inner step (second-order terms included).
    Exact,
}

/// Sign convention of the policy surrogate loss in the meta objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyLossForm {
    /// Descend the advantage-weighted log-likelihood as written.
    #[default]
    AsPrinted,
    /// Descend its negation, so the meta update moves toward actions the
    /// adapted critic favors.
    NegatedSurrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfig {
    /// Meta iterations I.
    pub iterations: u32,
    /// Tasks sampled per meta iteration J.
    pub tasks_per_iteration: u32,
    /// Fixed inner step sizes for the one adaptation step.
    pub inner_alpha_value: f64,
    pub inner_alpha_policy: f64,
    /// Outer step size beta.
    pub meta_step_size: f64,
    /// Discount used by the inner step and both losses.
    pub discount: f64,
    pub grad_mode: GradMode,
    pub policy_loss: PolicyLossForm,
    pub seed: u64,
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tasks_per_iteration == 0 {
            return Err(Error::config("tasks_per_iteration must be >= 1"));
        }
        if !(self.meta_step_size > 0.0) {
            return Err(Error::config("meta_step_size must be > 0"));
        }
        if self.inner_alpha_value < 0.0 || self.inner_alpha_policy < 0.0 {
            return Err(Error::config("inner step sizes must be >= 0"));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::config(format!(
                "discount must be in (0, 1], got {}",
                self.discount
            )));
        }
        Ok(())
    }
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            iterations: 300,
            tasks_per_iteration: 5,
            inner_alpha_value: 0.01,
            inner_alpha_policy: 0.005,
            meta_step_size: 1e-3,
            discount: 0.95,
            grad_mode: GradMode::FirstOrder,
            policy_loss: PolicyLossForm::AsPrinted,
            seed: 0,
        }
    }
}

// ---------------------------------------------------------------------------
// Inner adaptation and losses
// ---------------------------------------------------------------------------

/// One VD-RL step from `init` on realization `z` with the fixed inner step
/// sizes: a single rollout, team advantages, one value and one policy update
/// per DBS. Returns the adapted parameters and the adaptation experiences.
pub fn inner_adapt(
    world: &World,
    init: &ParamSet,
    z: &RequestRealization,
    cfg: &MetaConfig,
    rng: &mut impl Rng,
) -> Result<(ParamSet, Vec<Experience>)> {
    let mut params = init.clone();
    let update = train_iteration(
        world,
        z,
        &mut params,
        cfg.inner_alpha_value,
        cfg.inner_alpha_policy,
        cfg.discount,
        ValueUpdateMode::Residual,
        world.num_dbs() as f64,
        1,
        rng,
    )?;
    Ok((params, update.rollout.experiences))
}

/// Per-DBS loss pair of one task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskLosses {
    /// Squared-TD value loss.
    pub value: f64,
    /// Advantage-weighted log-likelihood policy loss, as printed.
    pub policy: f64,
}

/// Evaluate the losses on given experiences. The TD residual uses the
/// unscaled team stage reward.
pub fn losses_from_experiences(
    world: &World,
    params: &ParamSet,
    experiences: &[Experience],
    discount: f64,
) -> Result<Vec<TaskLosses>> {
    let mut out = Vec::with_capacity(experiences.len());
    for (n, exp) in experiences.iter().enumerate() {
        let steps = exp.steps.len();
        let mut values = Vec::with_capacity(steps);
        for step in &exp.steps {
            let enc = state_encoding(world, &step.state);
            values.push(crate::approx::forward_value(&params.value[n], &enc)?);
        }
        let mut l_value = 0.0;
        let mut l_policy = 0.0;
        for k in 0..steps {
            let next = if k + 1 < steps { values[k + 1] } else { 0.0 };
            let delta = exp.steps[k].reward + discount * next - values[k];
            l_value += delta * delta;
            let mask = feasible_actions(&exp.steps[k].state, world);
            let enc = state_encoding(world, &exp.steps[k].state);
            let action = exp.steps[k].action.action_index(world.num_clusters());
            l_policy += delta * log_prob(&params.policy[n], &enc, mask.bits(), action)?;
        }
        out.push(TaskLosses {
            value: l_value,
            policy: l_policy,
        });
    }
    Ok(out)
}

/// Roll out the adapted policies once on `z` and score them: returns per-DBS
/// losses and the evaluation experiences.
pub fn meta_losses(
    world: &World,
    adapted: &ParamSet,
    z: &RequestRealization,
    discount: f64,
    rng: &mut impl Rng,
) -> Result<(Vec<TaskLosses>, Vec<Experience>)> {
    let out = rollout(world, z, &adapted.policy, rng)?;
    let losses = losses_from_experiences(world, adapted, &out.experiences, discount)?;
    Ok((losses, out.experiences))
}

/// Gradients of the per-DBS losses with respect to the (adapted) parameters
/// they are evaluated at.
fn loss_gradients(
    world: &World,
    params: &ParamSet,
    experiences: &[Experience],
    discount: f64,
) -> Result<(Vec<ParamVector>, Vec<ParamVector>)> {
    let mut value_grads = Vec::with_capacity(experiences.len());
    let mut policy_grads = Vec::with_capacity(experiences.len());
    for (n, exp) in experiences.iter().enumerate() {
        let steps = exp.steps.len();
        let mut values = Vec::with_capacity(steps);
        let mut vgrads = Vec::with_capacity(steps);
        for step in &exp.steps {
            let enc = state_encoding(world, &step.state);
            let (v, g) = value_and_grad(&params.value[n], &enc)?;
            values.push(v);
            vgrads.push(g);
        }
        let mut gv = ParamVector::zeros(params.value[n].shape().clone());
        let mut ga = ParamVector::zeros(params.policy[n].shape().clone());
        for k in 0..steps {
            let next = if k + 1 < steps { values[k + 1] } else { 0.0 };
            let delta = exp.steps[k].reward + discount * next - values[k];
            // d(delta^2) = 2 delta * (gamma grad V(s') - grad V(s)).
            if k + 1 < steps {
                gv.add_scaled(&vgrads[k + 1], 2.0 * delta * discount);
            }
            gv.add_scaled(&vgrads[k], -2.0 * delta);
            // d(delta * log pi) wrt policy params = delta * grad log pi; the
            // residual's value pathway contributes log pi * ddelta to the
            // value gradient.
            let mask = feasible_actions(&exp.steps[k].state, world);
            let enc = state_encoding(world, &exp.steps[k].state);
            let action = exp.steps[k].action.action_index(world.num_clusters());
            let glp = grad_log_prob(&params.policy[n], &enc, mask.bits(), action)?;
            ga.add_scaled(&glp, delta);
        }
        value_grads.push(gv);
        policy_grads.push(ga);
    }
    Ok((value_grads, policy_grads))
}

// ---------------------------------------------------------------------------
// Meta step
// ---------------------------------------------------------------------------

/// Losses recorded for one meta step.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaStepStats {
    /// Sum over tasks and DBSs of the value losses.
    pub value_loss: f64,
    /// Sum over tasks and DBSs of the policy losses (as printed).
    pub policy_loss: f64,
}

/// One outer update: adapt on every task, score the adapted parameters, and
/// descend the summed losses with step `beta`.
///
/// Each task runs on an RNG stream derived from the realization's content,
/// so identical tasks contribute identical gradients and the update is
/// linear in repeated tasks.
pub fn meta_step(
    world: &World,
    init: &ParamSet,
    tasks: &[RequestRealization],
    cfg: &MetaConfig,
    rng: &mut impl Rng,
) -> Result<(ParamSet, MetaStepStats)> {
    cfg.validate()?;
    if init.num_dbs() != world.num_dbs() {
        return Err(Error::contract("init DBS count does not match the world"));
    }
    let n_dbs = world.num_dbs();
    let base: u64 = rng.gen();

    let mut total_value: Vec<ParamVector> = init
        .value
        .iter()
        .map(|p| ParamVector::zeros(p.shape().clone()))
        .collect();
    let mut total_policy: Vec<ParamVector> = init
        .policy
        .iter()
        .map(|p| ParamVector::zeros(p.shape().clone()))
        .collect();
    let mut stats = MetaStepStats {
        value_loss: 0.0,
        policy_loss: 0.0,
    };

    for z in tasks {
        use rand::SeedableRng;
        let mut task_rng = ChaCha8Rng::seed_from_u64(base ^ realization_hash(z));
        let (adapted, adapt_exps) = inner_adapt(world, init, z, cfg, &mut task_rng)?;
        let (losses, eval_exps) = meta_losses(world, &adapted, z, cfg.discount, &mut task_rng)?;
        for l in &losses {
            stats.value_loss += l.value;
            stats.policy_loss += l.policy;
        }
        let (g_value, g_policy) = loss_gradients(world, &adapted, &eval_exps, cfg.discount)?;

        match cfg.grad_mode {
            GradMode::FirstOrder => {
                for n in 0..n_dbs {
                    total_value[n].add_scaled(&g_value[n], 1.0);
                    total_policy[n].add_scaled(&g_policy[n], 1.0);
                }
            }
            GradMode::Exact => {
                let (mg_value, mg_policy) =
                    exact_meta_gradients(world, init, &adapt_exps, &g_value, &g_policy, cfg)?;
                for n in 0..n_dbs {
                    total_value[n].add_scaled(&mg_value[n], 1.0);
                    total_policy[n].add_scaled(&mg_policy[n], 1.0);
                }
            }
        }
    }

    let policy_sign = match cfg.policy_loss {
        PolicyLossForm::AsPrinted => -1.0,
        PolicyLossForm::NegatedSurrogate => 1.0,
    };
    let mut next = init.clone();
    for n in 0..n_dbs {
        next.value[n].add_scaled(&total_value[n], -cfg.meta_step_size);
        next.policy[n].add_scaled(&total_policy[n], policy_sign * cfg.meta_step_size);
        if !next.value[n].all_finite() || !next.policy[n].all_finite() {
            return Err(Error::numeric("meta update produced non-finite parameters"));
        }
    }
    Ok((next, stats))
}

/// Pull the adapted-parameter gradients back through the inner step.
///
/// Value side, per DBS m:
///   g_m - 2 a_c sum_k [ v_{m,k} * (sum_n v_{n,k} . g_n) + A_k H_{m,k} g_m ]
/// where v_{n,k} is the residual gradient at the initialization and H the
/// Hessian of the same residual. Policy side, per DBS m:
///   g_m + a_a sum_k adv_{m,k} * Hlogpi_{m,k} g_m.
fn exact_meta_gradients(
    world: &World,
    init: &ParamSet,
    adapt_exps: &[Experience],
    g_value: &[ParamVector],
    g_policy: &[ParamVector],
    cfg: &MetaConfig,
) -> Result<(Vec<ParamVector>, Vec<ParamVector>)> {
    let n_dbs = world.num_dbs();
    let steps = adapt_exps[0].steps.len();
    let adv = vdrl::team_advantage(world, adapt_exps, &init.value, cfg.discount)?;

    // Residual gradients v_{n,k} at the initialization.
    let mut v: Vec<Vec<ParamVector>> = Vec::with_capacity(n_dbs);
    for n in 0..n_dbs {
        let mut grads = Vec::with_capacity(steps);
        for step in &adapt_exps[n].steps {
            let enc = state_encoding(world, &step.state);
            grads.push(value_and_grad(&init.value[n], &enc)?.1);
        }
        let mut per_step = Vec::with_capacity(steps);
        for k in 0..steps {
            let mut vk = ParamVector::zeros(init.value[n].shape().clone());
            if k + 1 < steps {
                vk.add_scaled(&grads[k + 1], cfg.discount);
            }
            vk.add_scaled(&grads[k], -1.0);
            per_step.push(vk);
        }
        v.push(per_step);
    }

    let mut out_value = Vec::with_capacity(n_dbs);
    for m in 0..n_dbs {
        let mut mg = g_value[m].clone();
        for k in 0..steps {
            let coupling: f64 = (0..n_dbs).map(|n| v[n][k].dot(&g_value[n])).sum();
            mg.add_scaled(&v[m][k], -2.0 * cfg.inner_alpha_value * coupling);

            // H_{m,k} g_m = gamma Hv(s_{k+1}) - Hv(s_k), terminal excluded.
            let enc_k = state_encoding(world, &adapt_exps[m].steps[k].state);
            let h_k = hvp_value(&init.value[m], &enc_k, &g_value[m])?;
            let mut hg = ParamVector::zeros(init.value[m].shape().clone());
            if k + 1 < steps {
                let enc_next = state_encoding(world, &adapt_exps[m].steps[k + 1].state);
                let h_next = hvp_value(&init.value[m], &enc_next, &g_value[m])?;
                hg.add_scaled(&h_next, cfg.discount);
            }
            hg.add_scaled(&h_k, -1.0);
            mg.add_scaled(&hg, -2.0 * cfg.inner_alpha_value * adv.team[k]);
        }
        out_value.push(mg);
    }

    let mut out_policy = Vec::with_capacity(n_dbs);
    for m in 0..n_dbs {
        let mut mg = g_policy[m].clone();
        for k in 0..steps {
            let step = &adapt_exps[m].steps[k];
            let mask = feasible_actions(&step.state, world);
            let enc = state_encoding(world, &step.state);
            let action = step.action.action_index(world.num_clusters());
            let h = hvp_log_prob(&init.policy[m], &enc, mask.bits(), action, &g_policy[m])?;
            mg.add_scaled(&h, cfg.inner_alpha_policy * adv.individual[m][k]);
        }
        out_policy.push(mg);
    }
    Ok((out_value, out_policy))
}

/// FNV-1a over the realization's bit patterns; identical tasks hash equal.
fn realization_hash(z: &RequestRealization) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |v: f64| {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    for &b in &z.bits {
        eat(b);
    }
    for &t in &z.activate_at {
        eat(t);
    }
    h
}

// ---------------------------------------------------------------------------
// Meta training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct MetaIterationLosses {
    pub iteration: u32,
    pub value_loss: f64,
    pub policy_loss: f64,
}

#[derive(Debug, Clone)]
pub struct MetaResult {
    /// Meta-trained initialization.
    pub params: ParamSet,
    pub history: Vec<MetaIterationLosses>,
    /// Filled by [`evaluate_adaptation`] when requested.
    pub adaptation: Option<AdaptationReport>,
}

/// Full meta-training loop: I iterations of (sample J tasks, meta step).
pub fn meta_train(
    world: &World,
    dist: &TaskDistribution,
    init: ParamSet,
    cfg: &MetaConfig,
    rng: &mut impl Rng,
) -> Result<MetaResult> {
    cfg.validate()?;
    let mut params = init;
    let mut history = Vec::with_capacity(cfg.iterations as usize);
    for i in 0..cfg.iterations {
        let tasks: Vec<RequestRealization> = (0..cfg.tasks_per_iteration)
            .map(|_| sample_realization(dist, world, rng))
            .collect::<Result<_>>()?;
        let (next, stats) = meta_step(world, &params, &tasks, cfg, rng).map_err(|e| match e {
            Error::Numeric(msg) => Error::Numeric(format!("meta iteration {}: {msg}", i + 1)),
            other => other,
        })?;
        params = next;
        history.push(MetaIterationLosses {
            iteration: i + 1,
            value_loss: stats.value_loss,
            policy_loss: stats.policy_loss,
        });
    }
    Ok(MetaResult {
        params,
        history,
        adaptation: None,
    })
}

// ---------------------------------------------------------------------------
// Adaptation-speed evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptationEvalConfig {
    /// Held-out tasks drawn with `task_seed` (keep disjoint from training).
    pub held_out_tasks: u32,
    pub seeds_per_task: u32,
    /// Fraction of the oracle utility that counts as adapted.
    pub threshold_fraction: f64,
    /// Trailing-mean window used to decide the threshold is reached.
    pub trailing_window: u32,
    pub task_seed: u64,
    pub run_seed_base: u64,
    pub enumeration_cap: u64,
    /// Iteration budget of each evaluation training run.
    pub budget_iterations: u32,
}

impl Default for AdaptationEvalConfig {
    fn default() -> Self {
        AdaptationEvalConfig {
            held_out_tasks: 5,
            seeds_per_task: 5,
            threshold_fraction: 0.95,
            trailing_window: 25,
            task_seed: 0x5eed_7a5c,
            run_seed_base: 0x0adaf7,
            enumeration_cap: crate::sim::DEFAULT_ENUMERATION_CAP as u64,
            budget_iterations: 6000,
        }
    }
}

/// One (init, task, seed) training run of the evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationRun {
    pub init: String,
    pub task: u32,
    pub seed_index: u32,
    /// First iteration whose trailing-mean utility reached the threshold;
    /// `None` means the budget ran out first.
    pub iterations_to_threshold: Option<u32>,
    pub budget: u32,
    pub oracle_utility: f64,
    pub final_utility: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdaptationReport {
    pub threshold_fraction: f64,
    pub trailing_window: u32,
    pub runs: Vec<AdaptationRun>,
}

impl AdaptationReport {
    /// Median iterations-to-threshold for one init label; censored runs
    /// count as the full budget.
    pub fn median_iterations(&self, init: &str) -> Option<f64> {
        let mut xs: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| r.init == init)
            .map(|r| r.iterations_to_threshold.unwrap_or(r.budget) as f64)
            .collect();
        if xs.is_empty() {
            return None;
        }
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mid = xs.len() / 2;
        Some(if xs.len() % 2 == 1 {
            xs[mid]
        } else {
            (xs[mid - 1] + xs[mid]) / 2.0
        })
    }

    pub fn init_labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = Vec::new();
        for r in &self.runs {
            if !labels.contains(&r.init) {
                labels.push(r.init.clone());
            }
        }
        labels
    }

    /// Structured-text rendering, one run per line plus per-init medians.
    pub fn render(&self, annotations: &[String]) -> String {
        let mut out = String::from("# dronecov-adaptation v1\n");
        for a in annotations {
            out.push_str(&format!("# {a}\n"));
        }
        out.push_str(&format!(
            "# threshold: {} of oracle G*, trailing window {}\n",
            self.threshold_fraction, self.trailing_window
        ));
        out.push_str("# columns: init task seed iterations_to_threshold budget oracle_g final_g\n");
        for r in &self.runs {
            let iters = r
                .iterations_to_threshold
                .map(|i| i.to_string())
                .unwrap_or_else(|| "censored".into());
            out.push_str(&format!(
                "{} {} {} {} {} {} {}\n",
                r.init, r.task, r.seed_index, iters, r.budget, r.oracle_utility, r.final_utility
            ));
        }
        for label in self.init_labels() {
            if let Some(m) = self.median_iterations(&label) {
                out.push_str(&format!("median {label} {m}\n"));
            }
        }
        out
    }
}

fn mix_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut x = base ^ a.wrapping_mul(0x9e3779b97f4a7c15) ^ b.wrapping_mul(0xbf58476d1ce4e5b9);
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58476d1ce4e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Train from each labeled init on held-out tasks and record how fast each
/// reaches the oracle-relative threshold. (task, seed) pairs share RNG
/// streams across inits, so comparisons are paired.
pub fn evaluate_adaptation(
    world: &World,
    dist: &TaskDistribution,
    inits: &[(String, ParamSet)],
    budget: &TrainConfig,
    eval: &AdaptationEvalConfig,
) -> Result<AdaptationReport> {
    use rand::SeedableRng;
    if inits.is_empty() {
        return Err(Error::contract("need at least one labeled init"));
    }
    let mut task_rng = ChaCha8Rng::seed_from_u64(eval.task_seed);
    let mut report = AdaptationReport {
        threshold_fraction: eval.threshold_fraction,
        trailing_window: eval.trailing_window,
        runs: Vec::new(),
    };
    for t in 0..eval.held_out_tasks {
        let z = sample_realization(dist, world, &mut task_rng)?;
        let oracle = enumerate_optimal(world, &z, eval.enumeration_cap as u128)?.best_utility;
        let threshold = eval.threshold_fraction * oracle;
        for s in 0..eval.seeds_per_task {
            let run_seed = mix_seed(eval.run_seed_base, t as u64, s as u64);
            for (label, init) in inits {
                let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
                let result: TrainResult =
                    vdrl::train(world, TrainTask::Fixed(&z), init.clone(), budget, &mut rng)?;
                let reached = if oracle > 0.0 {
                    result.first_window_mean_reaching(threshold, eval.trailing_window as usize)
                } else {
                    Some(0)
                };
                report.runs.push(AdaptationRun {
                    init: label.clone(),
                    task: t,
                    seed_index: s,
                    iterations_to_threshold: reached,
                    budget: budget.max_iterations,
                    oracle_utility: oracle,
                    final_utility: result
                        .final_window_mean(eval.trailing_window as usize)
                        .unwrap_or(0.0),
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{finite_diff_check, NetArch};
    use crate::vdrl::StepSchedule;
    use crate::world::{ClusterSpec, RadioConfig, ShadowMode, ShadowParams, UserSpec, WorldConfig};
    use rand::SeedableRng;

    fn radio() -> RadioConfig {
        RadioConfig {
            carrier_hz: 2.0e9,
            tx_power_dbm: 20.0,
            noise_psd_dbm_hz: -170.0,
            rb_bandwidth_hz: 1.0e6,
            shadow_los: ShadowParams {
                mean_db: 1.6,
                stddev_db: 8.41,
            },
            shadow_nlos: ShadowParams {
                mean_db: 23.0,
                stddev_db: 33.78,
            },
            los_phi: 9.61,
            los_small_phi: 0.16,
            shadow_mode: ShadowMode::MeanOnly,
            db_exponent_divisor: 20,
        }
    }

    /// Two DBSs, one cluster, two steps: small enough for exact-mode
    /// finite-difference checks.
    fn toy_world() -> World {
        World::new(WorldConfig {
            clusters: vec![ClusterSpec {
                id: 0,
                center: [600.0, 0.0],
                users: vec![
                    UserSpec {
                        id: 0,
                        pos: [590.0, 10.0],
                    },
                    UserSpec {
                        id: 1,
                        pos: [615.0, -5.0],
                    },
                ],
            }],
            origin: [0.0, 0.0],
            altitudes_m: vec![100.0, 115.0],
            speed_mps: 30.0,
            period_s: 120.0,
            max_steps: 2,
            service_radius_m: 50.0,
            radio: radio(),
        })
        .unwrap()
    }

    fn toy_task(world: &World) -> RequestRealization {
        RequestRealization {
            bits: vec![2e5; world.num_users()],
            activate_at: vec![3.0; world.num_users()],
        }
    }

    fn toy_dist() -> TaskDistribution {
        TaskDistribution {
            p_active: 0.8,
            bits_min: 1e5,
            bits_max: 5e5,
            activate_max_s: 15.0,
            hotspot_weights: None,
        }
    }

    fn toy_cfg() -> MetaConfig {
        MetaConfig {
            iterations: 3,
            tasks_per_iteration: 2,
            inner_alpha_value: 0.02,
            inner_alpha_policy: 0.01,
            meta_step_size: 0.005,
            discount: 0.9,
            grad_mode: GradMode::FirstOrder,
            policy_loss: PolicyLossForm::AsPrinted,
            seed: 0,
        }
    }

    fn toy_arch() -> NetArch {
        NetArch { hidden: vec![2] }
    }

    #[test]
    fn zero_inner_steps_leave_init_unchanged() {
        let world = toy_world();
        let z = toy_task(&world);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let init = ParamSet::init(&world, &toy_arch(), &mut rng);
        let cfg = MetaConfig {
            inner_alpha_value: 0.0,
            inner_alpha_policy: 0.0,
            ..toy_cfg()
        };
        let (adapted, exps) = inner_adapt(&world, &init, &z, &cfg, &mut rng).unwrap();
        assert_eq!(adapted, init);
        assert_eq!(exps.len(), 2);
    }

    #[test]
    fn inner_adapt_matches_one_training_iteration() {
        let world = toy_world();
        let z = toy_task(&world);
        let cfg = toy_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let init = ParamSet::init(&world, &toy_arch(), &mut rng);

        let mut adapt_rng = ChaCha8Rng::seed_from_u64(99);
        let (adapted, _) = inner_adapt(&world, &init, &z, &cfg, &mut adapt_rng).unwrap();

        // A one-iteration training run whose schedules start at the fixed
        // inner step sizes takes the identical step.
        let train_cfg = TrainConfig {
            max_iterations: 1,
            discount: cfg.discount,
            value_schedule: StepSchedule::new(cfg.inner_alpha_value, 1.0, 0.6).unwrap(),
            policy_schedule: StepSchedule::new(cfg.inner_alpha_policy, 1.0, 0.6).unwrap(),
            ..TrainConfig::default()
        };
        let mut train_rng = ChaCha8Rng::seed_from_u64(99);
        let result = vdrl::train(
            &world,
            TrainTask::Fixed(&z),
            init.clone(),
            &train_cfg,
            &mut train_rng,
        )
        .unwrap();
        assert_eq!(result.params, adapted);
    }

    #[test]
    fn identical_streams_give_identical_adaptations() {
        let world = toy_world();
        let z = toy_task(&world);
        let cfg = toy_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let init = ParamSet::init(&world, &toy_arch(), &mut rng);
        let a = inner_adapt(&world, &init, &z, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = inner_adapt(&world, &init, &z, &cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn value_loss_is_nonnegative_and_vanishes_for_zero_everything() {
        let world = toy_world();
        let cfg = toy_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ParamSet::init(&world, &toy_arch(), &mut rng);
        for v in &mut params.value {
            *v = ParamVector::zeros(v.shape().clone());
        }
        // Idle realization: no rewards anywhere.
        let z = RequestRealization {
            bits: vec![0.0; world.num_users()],
            activate_at: vec![0.0; world.num_users()],
        };
        let (losses, _) = meta_losses(&world, &params, &z, cfg.discount, &mut rng).unwrap();
        for l in &losses {
            assert_eq!(l.value, 0.0);
        }

        let busy = toy_task(&world);
        let (losses, _) = meta_losses(&world, &params, &busy, cfg.discount, &mut rng).unwrap();
        for l in &losses {
            assert!(l.value >= 0.0);
        }
    }

    #[test]
    fn losses_match_direct_formula_evaluation() {
        let world = toy_world();
        let cfg = toy_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let params = ParamSet::init(&world, &toy_arch(), &mut rng);
        let z = toy_task(&world);
        let out = rollout(&world, &z, &params.policy, &mut rng).unwrap();
        let losses =
            losses_from_experiences(&world, &params, &out.experiences, cfg.discount).unwrap();

        for (n, exp) in out.experiences.iter().enumerate() {
            let mut lc = 0.0;
            let mut la = 0.0;
            for k in 0..exp.steps.len() {
                let enc_k = state_encoding(&world, &exp.steps[k].state);
                let v_k = crate::approx::forward_value(&params.value[n], &enc_k).unwrap();
                let v_next = if k + 1 < exp.steps.len() {
                    let enc = state_encoding(&world, &exp.steps[k + 1].state);
                    crate::approx::forward_value(&params.value[n], &enc).unwrap()
                } else {
                    0.0
                };
                let delta = exp.steps[k].reward + cfg.discount * v_next - v_k;
                lc += delta * delta;
                let mask = feasible_actions(&exp.steps[k].state, &world);
                let a = exp.steps[k].action.action_index(world.num_clusters());
                la += delta * log_prob(&params.policy[n], &enc_k, mask.bits(), a).unwrap();
            }
            assert!((losses[n].value - lc).abs() < 1e-12);
            assert!((losses[n].policy - la).abs() < 1e-12);
        }
    }

    #[test]
    fn meta_step_with_zero_beta_is_rejected_and_identity_requires_zero_gradient() {
        let world = toy_world();
        let cfg = MetaConfig {
            meta_step_size: 0.0,
            ..toy_cfg()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let init = ParamSet::init(&world, &toy_arch(), &mut rng);
        let z = toy_task(&world);
        assert!(meta_step(&world, &init, &[z], &cfg, &mut rng).is_err());
    }

    #[test]
    fn first_order_gradient_is_the_adapted_loss_gradient() {
        let world = toy_world();
        let cfg = toy_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let init = ParamSet::init(&world, &toy_arch(), &mut rng);
        let z = toy_task(&world);

        let mut step_rng = ChaCha8Rng::seed_from_u64(42);
        let (next, _) = meta_step(&world, &init, &[z.clone()], &cfg, &mut step_rng).unwrap();

        // Recompute the per-term gradients along the same derived stream.
        let mut verify_rng = ChaCha8Rng::seed_from_u64(42);
        let base: u64 = verify_rng.gen();
        let mut task_rng = ChaCha8Rng::seed_from_u64(base ^ realization_hash(&z));
        let (adapted, _) = inner_adapt(&world, &init, &z, &cfg, &mut task_rng).unwrap();
        let (_, eval_exps) =
            meta_losses(&world, &adapted, &z, cfg.discount, &mut task_rng).unwrap();
        let (g_value, g_policy) =
            loss_gradients(&world, &adapted, &eval_exps, cfg.discount).unwrap();

        for n in 0..world.num_dbs() {
            let mut expect_v = init.value[n].clone();
            expect_v.add_scaled(&g_value[n], -cfg.meta_step_size);
            assert_eq!(next.value[n], expect_v);
            let mut expect_p = init.policy[n].clone();
            expect_p.add_scaled(&g_policy[n], -cfg.meta_step_size);
            assert_eq!(next.policy[n], expect_p);
        }
    }

    #[test]
    fn repeated_tasks_contribute_linearly() {
        let world = toy_world();
        let cfg = toy_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let init = ParamSet::init(&world, &toy_arch(), &mut rng);
        let z = toy_task(&world);

        let (one, _) = meta_step(
            &world,
            &init,
            &[z.clone()],
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        let (three, _) = meta_step(
            &world,
            &init,
            &[z.clone(), z.clone(), z],
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        for n in 0..world.num_dbs() {
            for i in 0..init.value[n].len() {
                let d1 = one.value[n].values()[i] - init.value[n].values()[i];
                let d3 = three.value[n].values()[i] - init.value[n].values()[i];
                assert!((d3 - 3.0 * d1).abs() < 1e-12 * (1.0 + d1.abs()));
            }
            for i in 0..init.policy[n].len() {
                let d1 = one.policy[n].values()[i] - init.policy[n].values()[i];
                let d3 = three.policy[n].values()[i] - init.policy[n].values()[i];
                assert!((d3 - 3.0 * d1).abs() < 1e-12 * (1.0 + d1.abs()));
            }
        }
    }

    #[test]
    fn first_order_and_exact_coincide_for_zero_inner_steps() {
        let world = toy_world();
        let base_cfg = MetaConfig {
            inner_alpha_value: 0.0,
            inner_alpha_policy: 0.0,
            ..toy_cfg()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let init = ParamSet::init(&world, &toy_arch(), &mut rng);
        let z = toy_task(&world);

        let first = meta_step(
            &world,
            &init,
            &[z.clone()],
            &MetaConfig {
                grad_mode: GradMode::FirstOrder,
                ..base_cfg.clone()
            },
            &mut ChaCha8Rng::seed_from_u64(11),
        )
        .unwrap()
        .0;
        let exact = meta_step(
            &world,
            &init,
            &[z],
            &MetaConfig {
                grad_mode: GradMode::Exact,
                ..base_cfg
            },
            &mut ChaCha8Rng::seed_from_u64(11),
        )
        .unwrap()
        .0;
        assert_eq!(first, exact);
    }

    /// Full pipeline as a function of one parameter block, for central
    /// finite differences: returns (sum of value losses, sum of policy
    /// losses) for a fixed derived task stream.
    fn pipeline_losses(
        world: &World,
        init: &ParamSet,
        z: &RequestRealization,
        cfg: &MetaConfig,
        stream_seed: u64,
    ) -> (f64, f64) {
        let mut task_rng = ChaCha8Rng::seed_from_u64(stream_seed);
        let (adapted, _) = inner_adapt(world, init, z, cfg, &mut task_rng).unwrap();
        let (losses, _) = meta_losses(world, &adapted, z, cfg.discount, &mut task_rng).unwrap();
        losses
            .iter()
            .fold((0.0, 0.0), |(v, p), l| (v + l.value, p + l.policy))
    }

    #[test]
    fn exact_meta_gradient_matches_pipeline_finite_differences() {
        let world = toy_world();
        let cfg = MetaConfig {
            grad_mode: GradMode::Exact,
            ..toy_cfg()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let init = ParamSet::init(&world, &toy_arch(), &mut rng);
        let z = toy_task(&world);
        let stream_seed = 4242;

        // Analytic meta gradients along the same fixed stream.
        let mut task_rng = ChaCha8Rng::seed_from_u64(stream_seed);
        let (adapted, adapt_exps) = inner_adapt(&world, &init, &z, &cfg, &mut task_rng).unwrap();
        let (_, eval_exps) =
            meta_losses(&world, &adapted, &z, cfg.discount, &mut task_rng).unwrap();
        let (g_value, g_policy) =
            loss_gradients(&world, &adapted, &eval_exps, cfg.discount).unwrap();
        let (mg_value, mg_policy) =
            exact_meta_gradients(&world, &init, &adapt_exps, &g_value, &g_policy, &cfg).unwrap();

        for n in 0..world.num_dbs() {
            // Value block of DBS n against FD of the summed value loss.
            let mut probe = init.clone();
            let err = finite_diff_check(
                &mut |p: &ParamVector| {
                    probe.value[n] = p.clone();
                    pipeline_losses(&world, &probe, &z, &cfg, stream_seed).0
                },
                &init.value[n],
                &mg_value[n],
                1e-5,
            );
            assert!(err < 1e-4, "value meta-gradient err {err} (dbs {n})");

            let mut probe = init.clone();
            let err = finite_diff_check(
                &mut |p: &ParamVector| {
                    probe.policy[n] = p.clone();
                    pipeline_losses(&world, &probe, &z, &cfg, stream_seed).1
                },
                &init.policy[n],
                &mg_policy[n],
                1e-5,
            );
            assert!(err < 1e-4, "policy meta-gradient err {err} (dbs {n})");
        }
    }

    #[test]
    fn meta_train_runs_and_is_reproducible() {
        let world = toy_world();
        let dist = toy_dist();
        let cfg = toy_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let init = ParamSet::init(&world, &toy_arch(), &mut rng);

        let empty = meta_train(
            &world,
            &dist,
            init.clone(),
            &MetaConfig {
                iterations: 0,
                ..cfg.clone()
            },
            &mut ChaCha8Rng::seed_from_u64(15),
        )
        .unwrap();
        assert_eq!(empty.params, init);
        assert!(empty.history.is_empty());

        let a = meta_train(
            &world,
            &dist,
            init.clone(),
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(16),
        )
        .unwrap();
        let b = meta_train(
            &world,
            &dist,
            init,
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(16),
        )
        .unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.len(), 3);
    }

    #[test]
    fn adaptation_report_medians_and_rendering() {
        let report = AdaptationReport {
            threshold_fraction: 0.95,
            trailing_window: 25,
            runs: vec![
                AdaptationRun {
                    init: "meta".into(),
                    task: 0,
                    seed_index: 0,
                    iterations_to_threshold: Some(10),
                    budget: 100,
                    oracle_utility: 1.0,
                    final_utility: 0.99,
                },
                AdaptationRun {
                    init: "meta".into(),
                    task: 0,
                    seed_index: 1,
                    iterations_to_threshold: None,
                    budget: 100,
                    oracle_utility: 1.0,
                    final_utility: 0.5,
                },
                AdaptationRun {
                    init: "random".into(),
                    task: 0,
                    seed_index: 0,
                    iterations_to_threshold: Some(80),
                    budget: 100,
                    oracle_utility: 1.0,
                    final_utility: 0.97,
                },
            ],
        };
        assert_eq!(report.median_iterations("meta"), Some(55.0));
        assert_eq!(report.median_iterations("random"), Some(80.0));
        assert_eq!(report.median_iterations("missing"), None);
        let text = report.render(&[]);
        assert!(text.contains("meta 0 1 censored"));
        assert!(text.contains("median random 80"));
    }
}
