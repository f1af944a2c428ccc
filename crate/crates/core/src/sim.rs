//! Event-driven execution of joint trajectories.
//!
//! DBSs operate asynchronously: each one flies its own sequence of locations,
//! and serving windows at a cluster are delimited by the global order of
//! arrivals there. The engine processes arrival events in time order (ties
//! broken by DBS index), so outcomes are pure functions of (world,
//! realization, trajectories, link rates).
//!
//! The same engine runs fixed trajectories ([`run_episode`]) and
//! policy-driven rollouts ([`rollout`]); a brute-force search over all
//! feasible joint trajectories ([`enumerate_optimal`]) serves as the
//! optimality oracle on small instances.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;

use crate::approx::{forward_policy, ParamVector, StateEncoding};
use crate::error::{Error, Result};
use crate::world::{
    hover_time, transmission_delay, LinkTable, Location, RequestRealization, ShadowMode, World,
};

/// Default ceiling on the size of the enumerated joint-trajectory space.
pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

// ---------------------------------------------------------------------------
// States, masks, trajectories
// ---------------------------------------------------------------------------

/// Where a DBS is, how much flight time it has left, and how many moves it
/// has completed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbsState {
    pub location: Location,
    pub remaining_time_s: f64,
    pub step_index: usize,
}

/// Set of actions available at a state, indexed like
/// [`Location::action_index`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionMask {
    bits: Vec<bool>,
}

impl ActionMask {
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn contains(&self, loc: Location) -> bool {
        self.bits[loc.action_index(self.bits.len() - 1)]
    }

    pub fn len(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn locations(&self) -> impl Iterator<Item = Location> + '_ {
        let num_clusters = self.bits.len() - 1;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| Location::from_action_index(i, num_clusters))
    }
}

/// Actions a DBS may take at `state`.
///
/// The origin is always available. A cluster is available when flying there
/// and then straight home fits in the remaining budget under the optimistic
/// zero-hover bound (hover depends on demand the myopic DBS cannot see).
/// Once a DBS is back at the origin after any move, it stays there.
pub fn feasible_actions(state: &DbsState, world: &World) -> ActionMask {
    let c = world.num_clusters();
    let mut bits = vec![false; c + 1];
    bits[c] = true;
    let absorbed = state.location == Location::Origin && state.step_index >= 1;
    if !absorbed {
        for cluster in 0..c {
            let dest = Location::Cluster(cluster);
            let needed =
                world.travel_time(state.location, dest) + world.travel_time(dest, Location::Origin);
            if needed <= state.remaining_time_s {
                bits[cluster] = true;
            }
        }
    }
    ActionMask { bits }
}

/// Network input for a DBS state: one-hot location plus remaining time as a
/// fraction of the period.
pub fn state_encoding(world: &World, state: &DbsState) -> StateEncoding {
    let n = world.num_clusters();
    let frac = (state.remaining_time_s / world.period()).clamp(0.0, 1.0);
    StateEncoding::new(state.location.action_index(n), n + 1, frac)
        .expect("location index bounded by construction")
}

/// One location sequence per DBS, each exactly `max_steps` long with the
/// origin absorbing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointTrajectory {
    entries: Vec<Vec<Location>>,
}

impl JointTrajectory {
    pub fn new(entries: Vec<Vec<Location>>, world: &World) -> Result<JointTrajectory> {
        if entries.len() != world.num_dbs() {
            return Err(Error::contract(format!(
                "trajectory has {} rows, world has {} DBSs",
                entries.len(),
                world.num_dbs()
            )));
        }
        for (n, row) in entries.iter().enumerate() {
            if row.len() != world.max_steps() {
                return Err(Error::contract(format!(
                    "DBS {n} trajectory has {} entries, expected K = {}",
                    row.len(),
                    world.max_steps()
                )));
            }
            let mut home = false;
            for (k, loc) in row.iter().enumerate() {
                match loc {
                    Location::Origin => home = true,
                    Location::Cluster(c) => {
                        if *c >= world.num_clusters() {
                            return Err(Error::contract(format!(
                                "DBS {n} entry {k} names unknown cluster {c}"
                            )));
                        }
                        if home {
                            return Err(Error::contract(format!(
                                "DBS {n} leaves the origin again at entry {k}; the origin is absorbing"
                            )));
                        }
                    }
                }
            }
        }
        Ok(JointTrajectory { entries })
    }

    pub fn rows(&self) -> &[Vec<Location>] {
        &self.entries
    }

    pub fn entry(&self, dbs: usize, step: usize) -> Location {
        self.entries[dbs][step]
    }
}

impl std::fmt::Display for JointTrajectory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (n, row) in self.entries.iter().enumerate() {
            if n > 0 {
                write!(f, " | ")?;
            }
            write!(f, "{n}:")?;
            for (k, loc) in row.iter().enumerate() {
                write!(f, "{}{loc}", if k > 0 { "," } else { " " })?;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Outcomes and experiences
// ---------------------------------------------------------------------------

/// One cluster arrival: who arrived where, when, and what it served.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalEvent {
    pub time_s: f64,
    pub dbs: usize,
    pub cluster: usize,
    pub served: usize,
    pub service_rate: f64,
}

/// Everything one episode produced.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    /// Successful service rate per DBS per step (zero on origin steps).
    pub service_rates: Vec<Vec<f64>>,
    /// Available service time upon arrival at each step.
    pub available_times: Vec<Vec<f64>>,
    /// Users served per DBS per step, ascending ids.
    pub served_users: Vec<Vec<Vec<usize>>>,
    /// Team stage reward per step: sum of all DBSs' rates at that step.
    pub stage_rewards: Vec<f64>,
    /// Team utility G: sum of stage rewards.
    pub team_utility: f64,
    /// Cluster arrivals in global time order.
    pub events: Vec<ArrivalEvent>,
    /// Flight budget left after each DBS is back at the origin.
    pub final_remaining_s: Vec<f64>,
    /// The realized trajectory.
    pub trajectory: JointTrajectory,
}

impl EpisodeOutcome {
    /// Serialize the arrival log: one `time dbs cluster served rate` line per
    /// event, with optional leading comment lines.
    pub fn write_event_log(&self, annotations: &[String]) -> String {
        let mut out = String::from("# dronecov-events v1\n");
        for a in annotations {
            out.push_str(&format!("# {a}\n"));
        }
        out.push_str("# columns: time_s dbs cluster served service_rate\n");
        for e in &self.events {
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                e.time_s, e.dbs, e.cluster, e.served, e.service_rate
            ));
        }
        out
    }

    /// Parse a log produced by [`EpisodeOutcome::write_event_log`].
    pub fn parse_event_log(text: &str) -> Result<Vec<ArrivalEvent>> {
        let mut events = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 5 {
                return Err(Error::contract(format!(
                    "event log line {} has {} fields, expected 5",
                    no + 1,
                    fields.len()
                )));
            }
            let parse_f = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::contract(format!("bad float {s:?} on line {}", no + 1)))
            };
            let parse_u = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::contract(format!("bad integer {s:?} on line {}", no + 1)))
            };
            events.push(ArrivalEvent {
                time_s: parse_f(fields[0])?,
                dbs: parse_u(fields[1])?,
                cluster: parse_u(fields[2])?,
                served: parse_u(fields[3])?,
                service_rate: parse_f(fields[4])?,
            });
        }
        Ok(events)
    }
}

/// Team stage rewards r_k: the sum of every DBS's service rate at step k.
/// Summing them reproduces the team utility exactly.
pub fn team_stage_rewards(outcome: &EpisodeOutcome) -> Vec<f64> {
    let steps = outcome.service_rates.first().map_or(0, Vec::len);
    (0..steps)
        .map(|k| outcome.service_rates.iter().map(|row| row[k]).sum())
        .collect()
}

/// One decision: the state it was taken in, the move, and the team stage
/// reward that followed.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperienceStep {
    pub state: DbsState,
    pub action: Location,
    pub reward: f64,
}

/// A DBS's episode as a sequence of exactly `max_steps` decisions. Rewards
/// are team stage rewards, identical across DBSs at the same step index.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub steps: Vec<ExperienceStep>,
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

trait ActionProvider {
    fn choose(&mut self, dbs: usize, state: &DbsState, mask: &ActionMask) -> Result<Location>;
}

struct ReplayProvider<'a> {
    trajectory: &'a JointTrajectory,
}

impl ActionProvider for ReplayProvider<'_> {
    fn choose(&mut self, dbs: usize, state: &DbsState, mask: &ActionMask) -> Result<Location> {
        let action = self.trajectory.entry(dbs, state.step_index);
        if !mask.contains(action) {
            return Err(Error::contract(format!(
                "trajectory entry ({dbs}, {}) = {action} is infeasible at {} with {:.3}s left",
                state.step_index + 1,
                state.location,
                state.remaining_time_s
            )));
        }
        Ok(action)
    }
}

/// Inverse-CDF draw over the masked probabilities; `u` is uniform in [0, 1).
fn sample_masked(probs: &[f64], mask: &ActionMask, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, (&p, &m)) in probs.iter().zip(mask.bits()).enumerate() {
        if m {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

struct PolicyProvider<'a, R: Rng> {
    world: &'a World,
    policies: &'a [ParamVector],
    rng: &'a mut R,
}

impl<R: Rng> ActionProvider for PolicyProvider<'_, R> {
    fn choose(&mut self, dbs: usize, state: &DbsState, mask: &ActionMask) -> Result<Location> {
        let enc = state_encoding(self.world, state);
        let probs = forward_policy(&self.policies[dbs], &enc, mask.bits())?;
        let u: f64 = self.rng.gen();
        let idx = sample_masked(&probs, mask, u);
        Ok(Location::from_action_index(idx, self.world.num_clusters()))
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Event {
    time: f64,
    dbs: usize,
    step: usize,
    dest: Location,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert for earliest-first. Ties resolve
        // by DBS index, then step, so processing order is total.
        other
            .time
            .partial_cmp(&self.time)
            .expect("event times are finite")
            .then(other.dbs.cmp(&self.dbs))
            .then(other.step.cmp(&self.step))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn simulate(
    world: &World,
    z: &RequestRealization,
    links: &LinkTable,
    provider: &mut dyn ActionProvider,
) -> Result<(Vec<Experience>, EpisodeOutcome)> {
    z.validate(world)?;
    let n_dbs = world.num_dbs();
    let steps = world.max_steps();
    let period = world.period();
    let active_total = z.active_count();

    let mut service_rates = vec![vec![0.0; steps]; n_dbs];
    let mut available_times = vec![vec![0.0; steps]; n_dbs];
    let mut served_users = vec![vec![Vec::new(); steps]; n_dbs];
    let mut experiences: Vec<Vec<ExperienceStep>> = vec![Vec::with_capacity(steps); n_dbs];
    let mut actions: Vec<Vec<Location>> = vec![Vec::with_capacity(steps); n_dbs];
    let mut final_remaining = vec![0.0; n_dbs];
    let mut events_log: Vec<ArrivalEvent> = Vec::new();

    let mut clock = vec![0.0f64; n_dbs];
    let mut location = vec![Location::Origin; n_dbs];
    let mut served_flag = vec![false; world.num_users()];
    let mut last_arrival: Vec<Option<f64>> = vec![None; world.num_clusters()];

    let mut queue: BinaryHeap<Event> = BinaryHeap::new();

    let decide = |dbs: usize,
                  step: usize,
                  clock: &[f64],
                  location: &[Location],
                  experiences: &mut Vec<Vec<ExperienceStep>>,
                  actions: &mut Vec<Vec<Location>>,
                  provider: &mut dyn ActionProvider|
     -> Result<Event> {
        let state = DbsState {
            location: location[dbs],
            remaining_time_s: period - clock[dbs],
            step_index: step,
        };
        let mask = feasible_actions(&state, world);
        let action = provider.choose(dbs, &state, &mask)?;
        experiences[dbs].push(ExperienceStep {
            state,
            action,
            reward: 0.0,
        });
        actions[dbs].push(action);
        Ok(Event {
            time: clock[dbs] + world.travel_time(state.location, action),
            dbs,
            step: step + 1,
            dest: action,
        })
    };

    for dbs in 0..n_dbs {
        let ev = decide(
            dbs,
            0,
            &clock,
            &location,
            &mut experiences,
            &mut actions,
            provider,
        )?;
        queue.push(ev);
    }

    while let Some(ev) = queue.pop() {
        let dbs = ev.dbs;
        let k = ev.step; // 1-based move index
        clock[dbs] = ev.time;
        location[dbs] = ev.dest;
        available_times[dbs][k - 1] = period - ev.time;

        if let Location::Cluster(c) = ev.dest {
            let tied = last_arrival[c] == Some(ev.time);
            let mut served: Vec<usize> = Vec::new();
            if !tied {
                let window_lo = last_arrival[c];
                for u in world.cluster_users(c) {
                    if !z.is_active(u) || served_flag[u] {
                        continue;
                    }
                    let t = z.activate_at[u];
                    let in_window = t <= ev.time && window_lo.map_or(true, |lo| t > lo);
                    if in_window {
                        served.push(u);
                    }
                }
                served.sort_unstable();
                for &u in &served {
                    served_flag[u] = true;
                }
                last_arrival[c] = Some(ev.time);
            }
            let delays = served
                .iter()
                .map(|&u| transmission_delay(z.bits[u], links.rate_bps[u][dbs]))
                .collect::<Result<Vec<f64>>>()?;
            let hover = hover_time(&delays, world.speed(), world.service_radius());
            let rate = if active_total == 0 {
                0.0
            } else {
                served.len() as f64 / active_total as f64
            };
            service_rates[dbs][k - 1] = rate;
            served_users[dbs][k - 1] = served;
            events_log.push(ArrivalEvent {
                time_s: ev.time,
                dbs,
                cluster: c,
                served: served_users[dbs][k - 1].len(),
                service_rate: rate,
            });
            clock[dbs] += hover;
        }

        if k == steps {
            // Implicit flight home if the last entry was a cluster.
            clock[dbs] += world.travel_time(location[dbs], Location::Origin);
            location[dbs] = Location::Origin;
            final_remaining[dbs] = period - clock[dbs];
        } else {
            let ev = decide(
                dbs,
                k,
                &clock,
                &location,
                &mut experiences,
                &mut actions,
                provider,
            )?;
            queue.push(ev);
        }
    }

    // Stage rewards sum each step's rates over DBSs; their sum defines G.
    let stage_rewards: Vec<f64> = (0..steps)
        .map(|k| service_rates.iter().map(|row| row[k]).sum())
        .collect();
    let team_utility: f64 = stage_rewards.iter().sum();

    for exp in &mut experiences {
        for (k, step) in exp.iter_mut().enumerate() {
            step.reward = stage_rewards[k];
        }
    }

    let trajectory = JointTrajectory::new(actions, world)?;
    let outcome = EpisodeOutcome {
        service_rates,
        available_times,
        served_users,
        stage_rewards,
        team_utility,
        events: events_log,
        final_remaining_s: final_remaining,
        trajectory,
    };
    let experiences = experiences
        .into_iter()
        .map(|steps| Experience { steps })
        .collect();
    Ok((experiences, outcome))
}

// ---------------------------------------------------------------------------
// Public entry points
// ---------------------------------------------------------------------------

/// Execute a fixed joint trajectory under mean shadowing.
///
/// Entries must be feasible step by step; an infeasible entry is a contract
/// violation naming the offending (DBS, step).
pub fn run_episode(
    world: &World,
    z: &RequestRealization,
    traj: &JointTrajectory,
) -> Result<EpisodeOutcome> {
    if world.radio().shadow_mode == ShadowMode::SampledPerLinkPerEpisode {
        return Err(Error::config(
            "sampled shadowing needs per-episode draws; use run_episode_with_links",
        ));
    }
    run_episode_with_links(world, z, traj, world.mean_links())
}

/// [`run_episode`] with explicit per-episode link rates.
pub fn run_episode_with_links(
    world: &World,
    z: &RequestRealization,
    traj: &JointTrajectory,
    links: &LinkTable,
) -> Result<EpisodeOutcome> {
    if traj.rows().len() != world.num_dbs() {
        return Err(Error::contract("trajectory DBS count mismatch"));
    }
    let mut provider = ReplayProvider { trajectory: traj };
    simulate(world, z, links, &mut provider).map(|(_, outcome)| outcome)
}

/// A policy-driven episode: sampled actions plus the resulting outcome.
#[derive(Debug, Clone)]
pub struct RolloutOutput {
    pub experiences: Vec<Experience>,
    pub outcome: EpisodeOutcome,
}

/// Sample one episode from per-DBS policies. In sampled-shadowing mode the
/// per-episode link draws come from `rng` before any action is sampled.
pub fn rollout(
    world: &World,
    z: &RequestRealization,
    policies: &[ParamVector],
    rng: &mut impl Rng,
) -> Result<RolloutOutput> {
    if policies.len() != world.num_dbs() {
        return Err(Error::contract(format!(
            "got {} policies for {} DBSs",
            policies.len(),
            world.num_dbs()
        )));
    }
    let links;
    let links_ref = match world.radio().shadow_mode {
        ShadowMode::MeanOnly => world.mean_links(),
        ShadowMode::SampledPerLinkPerEpisode => {
            links = LinkTable::sampled(world, rng);
            &links
        }
    };
    let mut provider = PolicyProvider {
        world,
        policies,
        rng,
    };
    let (experiences, outcome) = simulate(world, z, links_ref, &mut provider)?;
    Ok(RolloutOutput {
        experiences,
        outcome,
    })
}

// ---------------------------------------------------------------------------
// Brute-force oracle
// ---------------------------------------------------------------------------

/// Result of exhaustively searching the joint-trajectory space.
#[derive(Debug, Clone)]
pub struct OptimalSearch {
    /// Highest team utility of any feasible joint trajectory.
    pub best_utility: f64,
    /// Every feasible maximizer, in enumeration order.
    pub maximizers: Vec<JointTrajectory>,
    /// Feasible joint trajectories evaluated.
    pub evaluated: u64,
    /// Joint trajectories rejected as time-infeasible.
    pub infeasible: u64,
}

/// Exhaustive search over feasible joint trajectories under mean shadowing.
///
/// Refuses to run when `(|C|+1)^(N*K)` exceeds `cap`, reporting the required
/// cap.
pub fn enumerate_optimal(
    world: &World,
    z: &RequestRealization,
    cap: u128,
) -> Result<OptimalSearch> {
    if world.radio().shadow_mode == ShadowMode::SampledPerLinkPerEpisode {
        return Err(Error::config(
            "the oracle search runs under mean shadowing only",
        ));
    }
    let base = (world.num_clusters() + 1) as u128;
    let exponent = (world.num_dbs() * world.max_steps()) as u32;
    let required = base.checked_pow(exponent).ok_or(Error::CapExceeded {
        required: u128::MAX,
        cap,
    })?;
    if required > cap {
        return Err(Error::CapExceeded { required, cap });
    }

    // Structurally valid per-DBS sequences (origin absorbing), shared by all
    // DBSs, in lexicographic order with clusters before the origin.
    let sequences = structural_sequences(world.num_clusters(), world.max_steps());
    let n = world.num_dbs();
    let links = world.mean_links();

    let mut best = f64::NEG_INFINITY;
    let mut maximizers: Vec<JointTrajectory> = Vec::new();
    let mut evaluated = 0u64;
    let mut infeasible = 0u64;

    let mut indices = vec![0usize; n];
    loop {
        let rows: Vec<Vec<Location>> = indices.iter().map(|&i| sequences[i].clone()).collect();
        let traj = JointTrajectory { entries: rows };
        match run_episode_with_links(world, z, &traj, links) {
            Ok(outcome) => {
                evaluated += 1;
                if outcome.team_utility > best {
                    best = outcome.team_utility;
                    maximizers.clear();
                    maximizers.push(traj);
                } else if outcome.team_utility == best {
                    maximizers.push(traj);
                }
            }
            Err(Error::Contract(_)) => infeasible += 1,
            Err(e) => return Err(e),
        }

        // Odometer over per-DBS sequence indices, DBS 0 most significant.
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(OptimalSearch {
                    best_utility: best,
                    maximizers,
                    evaluated,
                    infeasible,
                });
            }
            pos -= 1;
            indices[pos] += 1;
            if indices[pos] < sequences.len() {
                break;
            }
            indices[pos] = 0;
        }
    }
}

fn structural_sequences(num_clusters: usize, steps: usize) -> Vec<Vec<Location>> {
    let mut out = Vec::new();
    let mut prefix = Vec::with_capacity(steps);
    fn rec(
        out: &mut Vec<Vec<Location>>,
        prefix: &mut Vec<Location>,
        num_clusters: usize,
        steps: usize,
    ) {
        if prefix.len() == steps {
            out.push(prefix.clone());
            return;
        }
        let absorbed = matches!(prefix.last(), Some(Location::Origin));
        if !absorbed {
            for c in 0..num_clusters {
                prefix.push(Location::Cluster(c));
                rec(out, prefix, num_clusters, steps);
                prefix.pop();
            }
        }
        prefix.push(Location::Origin);
        rec(out, prefix, num_clusters, steps);
        prefix.pop();
    }
    rec(&mut out, &mut prefix, num_clusters, steps);
    out
}
