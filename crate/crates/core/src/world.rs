//! Static world description, the air-to-ground channel model, and stochastic
//! request generation.
//!
//! Geometry is planar (meters); every drone base station (DBS) flies at its
//! own fixed altitude, so travel distances between locations are planar
//! distances. Link budgets are evaluated with the DBS hovering over the
//! cluster center at its altitude: path loss is treated as stable while the
//! DBS moves inside a service area, so a link budget is computed once per
//! (user, DBS) and never resampled mid-episode.
//!
//! Units are SI throughout: Hz, meters, seconds, bits, and dBm where labeled.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in m/s.
pub const C_LIGHT: f64 = 299_792_458.0;

// ---------------------------------------------------------------------------
// Locations
// ---------------------------------------------------------------------------

/// A discrete location a DBS can occupy: a cluster or the common origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Location {
    Origin,
    Cluster(usize),
}

impl Location {
    /// Index of this location in action space: clusters first, origin last.
    pub fn action_index(self, num_clusters: usize) -> usize {
        match self {
            Location::Cluster(c) => c,
            Location::Origin => num_clusters,
        }
    }

    /// Inverse of [`Location::action_index`].
    pub fn from_action_index(index: usize, num_clusters: usize) -> Location {
        if index == num_clusters {
            Location::Origin
        } else {
            Location::Cluster(index)
        }
    }
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Location::Origin => write!(f, "O"),
            Location::Cluster(c) => write!(f, "c{c}"),
        }
    }
}

// ---------------------------------------------------------------------------
// Configuration types
// ---------------------------------------------------------------------------

/// Gaussian parameters (dB) of an excess path-loss term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShadowParams {
    pub mean_db: f64,
    pub stddev_db: f64,
}

/// How the excess path-loss terms are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ShadowMode {
    /// Use the Gaussian means; fully deterministic runs.
    #[default]
    MeanOnly,
    /// One Gaussian draw per (user, DBS) per episode.
    SampledPerLinkPerEpisode,
}

/// Radio parameters shared by every uplink.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioConfig {
    /// Carrier frequency f_c in Hz.
    pub carrier_hz: f64,
    /// User transmit power in dBm (equal for all users).
    pub tx_power_dbm: f64,
    /// Noise power spectral density in dBm/Hz.
    pub noise_psd_dbm_hz: f64,
    /// Bandwidth of the single resource block allocated per user, in Hz.
    pub rb_bandwidth_hz: f64,
    /// Excess path loss on line-of-sight links.
    pub shadow_los: ShadowParams,
    /// Excess path loss on non-line-of-sight links.
    pub shadow_nlos: ShadowParams,
    /// Environment constant (dimensionless) of the LoS-probability curve.
    pub los_phi: f64,
    /// Second environment constant (dimensionless), multiplies elevation.
    pub los_small_phi: f64,
    #[serde(default)]
    pub shadow_mode: ShadowMode,
    /// Divisor of the dB exponent when converting excess+free-space loss to
    /// linear for the SNR. 20 reproduces the model as published; 10 is the
    /// conventional dB-to-power conversion.
    #[serde(default = "default_db_exponent_divisor")]
    pub db_exponent_divisor: u32,
}

fn default_db_exponent_divisor() -> u32 {
    20
}

impl RadioConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("carrier_hz", self.carrier_hz),
            ("rb_bandwidth_hz", self.rb_bandwidth_hz),
            ("shadow_los.stddev_db", self.shadow_los.stddev_db),
            ("shadow_nlos.stddev_db", self.shadow_nlos.stddev_db),
        ];
        for (name, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [
            ("tx_power_dbm", self.tx_power_dbm),
            ("noise_psd_dbm_hz", self.noise_psd_dbm_hz),
            ("shadow_los.mean_db", self.shadow_los.mean_db),
            ("shadow_nlos.mean_db", self.shadow_nlos.mean_db),
        ] {
            if !v.is_finite() {
                return Err(Error::config(format!("{name} must be finite")));
            }
        }
        if !(self.los_phi >= 0.0) || !(self.los_small_phi >= 0.0) {
            return Err(Error::config("los_phi and los_small_phi must be >= 0"));
        }
        if self.db_exponent_divisor != 10 && self.db_exponent_divisor != 20 {
            return Err(Error::config(format!(
                "db_exponent_divisor must be 10 or 20, got {}",
                self.db_exponent_divisor
            )));
        }
        Ok(())
    }
}

/// One ground user: id and planar position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserSpec {
    pub id: usize,
    pub pos: [f64; 2],
}

/// One cluster of users served as a unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub id: usize,
    /// Planar coordinates of the cluster center in meters.
    pub center: [f64; 2],
    /// Member users. Clusters partition the user set.
    pub users: Vec<UserSpec>,
}

/// Full static description of the world. Plain data; build a [`World`] to
/// validate it and precompute derived tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub clusters: Vec<ClusterSpec>,
    /// Common start/return point O of every DBS.
    pub origin: [f64; 2],
    /// One altitude per DBS, strictly distinct to avoid collisions.
    pub altitudes_m: Vec<f64>,
    /// Constant flight speed V_s in m/s.
    pub speed_mps: f64,
    /// Flight-time budget T in seconds.
    pub period_s: f64,
    /// Maximum number of trajectory steps K per DBS.
    pub max_steps: usize,
    /// Service-area radius d_r in meters.
    pub service_radius_m: f64,
    pub radio: RadioConfig,
}

impl WorldConfig {
    pub fn num_dbs(&self) -> usize {
        self.altitudes_m.len()
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }
}

// ---------------------------------------------------------------------------
// Validated world with derived tables
// ---------------------------------------------------------------------------

/// A validated [`WorldConfig`] plus precomputed travel distances, the
/// user-to-cluster map, and mean-shadowing link rates.
#[derive(Debug, Clone)]
pub struct World {
    config: WorldConfig,
    /// Planar distance between locations, indexed by action index
    /// (clusters .. origin).
    distances: Vec<Vec<f64>>,
    /// Cluster id of each user, indexed by user id.
    user_cluster: Vec<usize>,
    /// Position of each user, indexed by user id.
    user_pos: Vec<[f64; 2]>,
    /// Mean-shadowing link rates, built once.
    mean_links: LinkTable,
}

impl World {
    pub fn new(config: WorldConfig) -> Result<World> {
        config.radio.validate()?;
        let n = config.num_dbs();
        if n == 0 {
            return Err(Error::config("need at least one DBS"));
        }
        for (i, &h) in config.altitudes_m.iter().enumerate() {
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::config(format!("altitude {i} must be > 0, got {h}")));
            }
            for (j, &g) in config.altitudes_m.iter().enumerate().take(i) {
                if g == h {
                    return Err(Error::config(format!(
                        "altitudes must be pairwise distinct; {i} and {j} are both {h}"
                    )));
                }
            }
        }
        if !(config.period_s > 0.0) {
            return Err(Error::config("period_s must be > 0"));
        }
        if !(config.speed_mps > 0.0) {
            return Err(Error::config("speed_mps must be > 0"));
        }
        if !(config.service_radius_m > 0.0) {
            return Err(Error::config("service_radius_m must be > 0"));
        }
        if config.max_steps == 0 {
            return Err(Error::config("max_steps must be >= 1"));
        }
        if config.clusters.is_empty() {
            return Err(Error::config("need at least one cluster"));
        }
        for (i, c) in config.clusters.iter().enumerate() {
            if c.id != i {
                return Err(Error::config(format!(
                    "cluster ids must be contiguous from 0; position {i} has id {}",
                    c.id
                )));
            }
            if !c.center.iter().all(|v| v.is_finite()) {
                return Err(Error::config(format!("cluster {i} center must be finite")));
            }
        }

        // Users must partition into the clusters with contiguous ids.
        let num_users: usize = config.clusters.iter().map(|c| c.users.len()).sum();
        if num_users == 0 {
            return Err(Error::config("need at least one user"));
        }
        let mut user_cluster = vec![usize::MAX; num_users];
        let mut user_pos = vec![[0.0; 2]; num_users];
        for c in &config.clusters {
            for u in &c.users {
                if u.id >= num_users {
                    return Err(Error::config(format!(
                        "user ids must be contiguous from 0; got {} with {} users",
                        u.id, num_users
                    )));
                }
                if user_cluster[u.id] != usize::MAX {
                    return Err(Error::config(format!(
                        "user {} belongs to more than one cluster",
                        u.id
                    )));
                }
                if !u.pos.iter().all(|v| v.is_finite()) {
                    return Err(Error::config(format!(
                        "user {} position must be finite",
                        u.id
                    )));
                }
                user_cluster[u.id] = c.id;
                user_pos[u.id] = u.pos;
            }
        }

        let num_locations = config.num_clusters() + 1;
        let coord = |idx: usize| -> [f64; 2] {
            if idx == config.num_clusters() {
                config.origin
            } else {
                config.clusters[idx].center
            }
        };
        let mut distances = vec![vec![0.0; num_locations]; num_locations];
        for a in 0..num_locations {
            for b in 0..num_locations {
                let pa = coord(a);
                let pb = coord(b);
                distances[a][b] = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt();
            }
        }

        let mut world = World {
            config,
            distances,
            user_cluster,
            user_pos,
            mean_links: LinkTable {
                rate_bps: Vec::new(),
            },
        };
        world.mean_links = LinkTable::mean(&world);
        Ok(world)
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }
    pub fn radio(&self) -> &RadioConfig {
        &self.config.radio
    }
    pub fn num_dbs(&self) -> usize {
        self.config.num_dbs()
    }
    pub fn num_clusters(&self) -> usize {
        self.config.num_clusters()
    }
    pub fn num_users(&self) -> usize {
        self.user_cluster.len()
    }
    pub fn period(&self) -> f64 {
        self.config.period_s
    }
    pub fn max_steps(&self) -> usize {
        self.config.max_steps
    }
    pub fn speed(&self) -> f64 {
        self.config.speed_mps
    }
    pub fn service_radius(&self) -> f64 {
        self.config.service_radius_m
    }
    pub fn altitude(&self, dbs: usize) -> f64 {
        self.config.altitudes_m[dbs]
    }
    pub fn cluster_center(&self, cluster: usize) -> [f64; 2] {
        self.config.clusters[cluster].center
    }
    pub fn user_cluster(&self, user: usize) -> usize {
        self.user_cluster[user]
    }
    pub fn user_pos(&self, user: usize) -> [f64; 2] {
        self.user_pos[user]
    }
    pub fn cluster_users(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.config.clusters[cluster].users.iter().map(|u| u.id)
    }

    /// Planar distance between two locations in meters.
    pub fn distance(&self, a: Location, b: Location) -> f64 {
        let n = self.num_clusters();
        self.distances[a.action_index(n)][b.action_index(n)]
    }

    /// Straight-and-level flight time of the leg from `a` to `b` in seconds.
    ///
    /// A leg into a cluster is at least the straight pass through its
    /// service area (2 d_r), which is what a revisit of the current cluster
    /// costs.
    pub fn travel_time(&self, a: Location, b: Location) -> f64 {
        let d = self.distance(a, b);
        let d = match b {
            Location::Cluster(_) => d.max(2.0 * self.config.service_radius_m),
            Location::Origin => d,
        };
        d / self.config.speed_mps
    }

    /// Time spent crossing a service area in straight flight: 2 d_r / V_s.
    pub fn pass_time(&self) -> f64 {
        2.0 * self.config.service_radius_m / self.config.speed_mps
    }

    /// Link rates under mean shadowing, built once at construction.
    pub fn mean_links(&self) -> &LinkTable {
        &self.mean_links
    }
}

// ---------------------------------------------------------------------------
// Channel model
// ---------------------------------------------------------------------------

/// Which air-to-ground link kind a path-loss figure refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    Los,
    Nlos,
}

/// Per-(user, DBS) channel summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub path_loss_los_db: f64,
    pub path_loss_nlos_db: f64,
    /// Probability of the link being line-of-sight.
    pub p_los: f64,
    /// Expected uplink rate in bits per second.
    pub rate_bps: f64,
}

/// Path loss in dB at `distance_m`: free-space term at the carrier frequency
/// plus the caller-supplied excess term (the mean of the matching Gaussian in
/// mean-only mode, or one per-episode draw in sampled mode).
pub fn path_loss(
    radio: &RadioConfig,
    distance_m: f64,
    _kind: LinkKind,
    shadow_db: f64,
) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::domain(format!(
            "path loss needs a positive distance, got {distance_m}"
        )));
    }
    Ok(
        20.0 * (4.0 * std::f64::consts::PI * radio.carrier_hz * distance_m / C_LIGHT).log10()
            + shadow_db,
    )
}

/// Probability of a line-of-sight link at the given elevation angle in
/// degrees. Strictly increasing in elevation; the NLoS probability is its
/// complement.
pub fn los_probability(radio: &RadioConfig, elevation_deg: f64) -> Result<f64> {
    if !(elevation_deg > 0.0 && elevation_deg <= 90.0) {
        return Err(Error::domain(format!(
            "elevation must be in (0, 90] degrees, got {elevation_deg}"
        )));
    }
    let phi = radio.los_phi;
    let sphi = radio.los_small_phi;
    Ok(1.0 / (1.0 + phi * (-sphi * elevation_deg + phi * sphi).exp()))
}

/// Linear SNR at a link with the given total path loss in dB.
///
/// The dB exponent divisor comes from the radio config (20 as published).
pub fn snr(radio: &RadioConfig, path_loss_db: f64) -> f64 {
    let p_mw = 10f64.powf(radio.tx_power_dbm / 10.0);
    let n0_mw_hz = 10f64.powf(radio.noise_psd_dbm_hz / 10.0);
    let loss = 10f64.powf(path_loss_db / radio.db_exponent_divisor as f64);
    p_mw / (n0_mw_hz * radio.rb_bandwidth_hz * loss)
}

/// Excess path-loss pair (LoS dB, NLoS dB) used for one link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadowDraw {
    pub los_db: f64,
    pub nlos_db: f64,
}

impl ShadowDraw {
    /// The Gaussian means; what mean-only mode uses for every link.
    pub fn mean(radio: &RadioConfig) -> ShadowDraw {
        ShadowDraw {
            los_db: radio.shadow_los.mean_db,
            nlos_db: radio.shadow_nlos.mean_db,
        }
    }

    /// One Gaussian draw per term (Box-Muller, two uniforms each).
    pub fn sample(radio: &RadioConfig, rng: &mut impl Rng) -> ShadowDraw {
        ShadowDraw {
            los_db: radio.shadow_los.mean_db + radio.shadow_los.stddev_db * standard_normal(rng),
            nlos_db: radio.shadow_nlos.mean_db + radio.shadow_nlos.stddev_db * standard_normal(rng),
        }
    }
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller; consumes exactly two uniforms.
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Channel summary for a user served by a DBS hovering over the cluster
/// center at `altitude_m`, with mean excess path loss.
pub fn link_budget(
    radio: &RadioConfig,
    user_pos: [f64; 2],
    cluster_center: [f64; 2],
    altitude_m: f64,
) -> Result<LinkBudget> {
    link_budget_with_shadow(
        radio,
        user_pos,
        cluster_center,
        altitude_m,
        ShadowDraw::mean(radio),
    )
}

/// [`link_budget`] with explicit excess path-loss terms (sampled mode).
pub fn link_budget_with_shadow(
    radio: &RadioConfig,
    user_pos: [f64; 2],
    cluster_center: [f64; 2],
    altitude_m: f64,
    shadow: ShadowDraw,
) -> Result<LinkBudget> {
    let dx = user_pos[0] - cluster_center[0];
    let dy = user_pos[1] - cluster_center[1];
    let horizontal = (dx * dx + dy * dy).sqrt();
    let distance = (horizontal * horizontal + altitude_m * altitude_m).sqrt();
    // atan2 maps a zero horizontal offset to exactly 90 degrees overhead.
    let elevation_deg = altitude_m.atan2(horizontal).to_degrees();

    let pl_los = path_loss(radio, distance, LinkKind::Los, shadow.los_db)?;
    let pl_nlos = path_loss(radio, distance, LinkKind::Nlos, shadow.nlos_db)?;
    let p_los = los_probability(radio, elevation_deg)?;
    let b = radio.rb_bandwidth_hz;
    let rate_bps = p_los * b * (1.0 + snr(radio, pl_los)).log2()
        + (1.0 - p_los) * b * (1.0 + snr(radio, pl_nlos)).log2();
    Ok(LinkBudget {
        path_loss_los_db: pl_los,
        path_loss_nlos_db: pl_nlos,
        p_los,
        rate_bps,
    })
}

/// Seconds needed to upload `bits` at `rate_bps`.
pub fn transmission_delay(bits: f64, rate_bps: f64) -> Result<f64> {
    if !(rate_bps > 0.0) {
        return Err(Error::domain(format!(
            "transmission delay needs a positive rate, got {rate_bps}"
        )));
    }
    if bits < 0.0 {
        return Err(Error::domain(format!(
            "demand must be >= 0 bits, got {bits}"
        )));
    }
    Ok(bits / rate_bps)
}

/// Steady-circular-flight hover time needed to finish the given transfers:
/// the slowest transfer minus the straight pass through the service area,
/// clamped at zero. An empty set means the DBS passes through without
/// hovering.
pub fn hover_time(delays: &[f64], speed_mps: f64, service_radius_m: f64) -> f64 {
    let max_delay = delays.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max_delay.is_finite() {
        return 0.0;
    }
    (max_delay - 2.0 * service_radius_m / speed_mps).max(0.0)
}

/// Expected uplink rates for every (user, DBS) pair, fixed for one episode.
#[derive(Debug, Clone)]
pub struct LinkTable {
    /// `rate_bps[user][dbs]`.
    pub rate_bps: Vec<Vec<f64>>,
}

impl LinkTable {
    /// Rates under mean shadowing.
    pub fn mean(world: &World) -> LinkTable {
        Self::build(world, |_rng| ShadowDraw::mean(world.radio()), &mut DummyRng)
    }

    /// Rates with one shadow draw per (user, DBS); call once per episode.
    pub fn sampled(world: &World, rng: &mut impl Rng) -> LinkTable {
        Self::build(world, |rng| ShadowDraw::sample(world.radio(), rng), rng)
    }

    fn build<R: Rng>(
        world: &World,
        mut draw: impl FnMut(&mut R) -> ShadowDraw,
        rng: &mut R,
    ) -> LinkTable {
        let mut rate_bps = vec![vec![0.0; world.num_dbs()]; world.num_users()];
        for user in 0..world.num_users() {
            let center = world.cluster_center(world.user_cluster(user));
            let pos = world.user_pos(user);
            for dbs in 0..world.num_dbs() {
                let budget = link_budget_with_shadow(
                    world.radio(),
                    pos,
                    center,
                    world.altitude(dbs),
                    draw(rng),
                )
                .expect("validated world geometry always yields a positive distance");
                rate_bps[user][dbs] = budget.rate_bps;
            }
        }
        LinkTable { rate_bps }
    }
}

/// Zero-size stand-in so the mean table can reuse the sampled builder.
struct DummyRng;

impl rand::RngCore for DummyRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("mean link table draws no randomness")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("mean link table draws no randomness")
    }
    fn fill_bytes(&mut self, _dest: &mut [u8]) {
        unreachable!("mean link table draws no randomness")
    }
    fn try_fill_bytes(&mut self, _dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        unreachable!("mean link table draws no randomness")
    }
}

// ---------------------------------------------------------------------------
// Request realizations
// ---------------------------------------------------------------------------

/// Parameters of the request distribution p(Z): independent per-user
/// Bernoulli activity, uniform demand size, uniform activation time, with an
/// optional per-cluster activity weighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDistribution {
    /// Base probability that a user is active within the period.
    pub p_active: f64,
    /// Demand bounds in bits for active users.
    pub bits_min: f64,
    pub bits_max: f64,
    /// Activation times are uniform on [0, activate_max_s]; must be <= T.
    pub activate_max_s: f64,
    /// Optional per-cluster multiplier on `p_active` (clamped to [0, 1]).
    #[serde(default)]
    pub hotspot_weights: Option<Vec<f64>>,
}

impl TaskDistribution {
    pub fn validate(&self, world: &World) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_active) {
            return Err(Error::config(format!(
                "p_active must be in [0, 1], got {}",
                self.p_active
            )));
        }
        if !(self.bits_min > 0.0) || self.bits_max < self.bits_min {
            return Err(Error::config(format!(
                "need 0 < bits_min <= bits_max, got [{}, {}]",
                self.bits_min, self.bits_max
            )));
        }
        if !(self.activate_max_s >= 0.0) || self.activate_max_s > world.period() {
            return Err(Error::config(format!(
                "activate_max_s must be in [0, T={}], got {}",
                world.period(),
                self.activate_max_s
            )));
        }
        if let Some(w) = &self.hotspot_weights {
            if w.len() != world.num_clusters() {
                return Err(Error::config(format!(
                    "hotspot_weights must have one entry per cluster ({}), got {}",
                    world.num_clusters(),
                    w.len()
                )));
            }
            if w.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::config("hotspot_weights must be >= 0"));
            }
        }
        Ok(())
    }

    fn activity_probability(&self, cluster: usize) -> f64 {
        let w = self
            .hotspot_weights
            .as_ref()
            .map(|w| w[cluster])
            .unwrap_or(1.0);
        (self.p_active * w).clamp(0.0, 1.0)
    }
}

/// One draw z = [b, t] of every user's demand bits and activation time.
/// `bits[u] == 0` marks an inactive user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRealization {
    pub bits: Vec<f64>,
    pub activate_at: Vec<f64>,
}

impl RequestRealization {
    pub fn num_users(&self) -> usize {
        self.bits.len()
    }

    pub fn is_active(&self, user: usize) -> bool {
        self.bits[user] > 0.0
    }

    /// Number of users with a pending request anywhere in [0, T].
    pub fn active_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b > 0.0).count()
    }

    pub fn validate(&self, world: &World) -> Result<()> {
        if self.bits.len() != world.num_users() || self.activate_at.len() != world.num_users() {
            return Err(Error::contract(format!(
                "realization sized for {} users, world has {}",
                self.bits.len(),
                world.num_users()
            )));
        }
        for u in 0..self.bits.len() {
            let (b, t) = (self.bits[u], self.activate_at[u]);
            if b < 0.0 || !b.is_finite() {
                return Err(Error::contract(format!(
                    "user {u} demand must be >= 0, got {b}"
                )));
            }
            if b > 0.0 && !(0.0..=world.period()).contains(&t) {
                return Err(Error::contract(format!(
                    "active user {u} must activate within [0, T], got {t}"
                )));
            }
        }
        Ok(())
    }
}

/// Draw one request realization. Deterministic given the RNG state; always
/// consumes three uniforms per user so streams stay aligned across parameter
/// changes.
pub fn sample_realization(
    dist: &TaskDistribution,
    world: &World,
    rng: &mut impl Rng,
) -> Result<RequestRealization> {
    dist.validate(world)?;
    let users = world.num_users();
    let mut bits = vec![0.0; users];
    let mut activate_at = vec![0.0; users];
    for u in 0..users {
        let active = rng.gen::<f64>() < dist.activity_probability(world.user_cluster(u));
        let b = dist.bits_min + (dist.bits_max - dist.bits_min) * rng.gen::<f64>();
        let t = dist.activate_max_s * rng.gen::<f64>();
        if active {
            bits[u] = b;
            activate_at[u] = t;
        }
    }
    Ok(RequestRealization { bits, activate_at })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn table_i_radio() -> RadioConfig {
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

    fn two_cluster_world() -> World {
        let radio = table_i_radio();
        let clusters = vec![
            ClusterSpec {
                id: 0,
                center: [500.0, 0.0],
                users: vec![
                    UserSpec {
                        id: 0,
                        pos: [510.0, -20.0],
                    },
                    UserSpec {
                        id: 1,
                        pos: [480.0, 10.0],
                    },
                ],
            },
            ClusterSpec {
                id: 1,
                center: [-500.0, 0.0],
                users: vec![UserSpec {
                    id: 2,
                    pos: [-500.0, 0.0],
                }],
            },
        ];
        World::new(WorldConfig {
            clusters,
            origin: [0.0, 0.0],
            altitudes_m: vec![100.0, 120.0],
            speed_mps: 30.0,
            period_s: 200.0,
            max_steps: 2,
            service_radius_m: 50.0,
            radio,
        })
        .unwrap()
    }

    #[test]
    fn path_loss_is_zero_when_argument_is_unity() {
        let radio = table_i_radio();
        // 4 pi f_c d / c = 1  =>  d = c / (4 pi f_c)
        let d = C_LIGHT / (4.0 * std::f64::consts::PI * radio.carrier_hz);
        let pl = path_loss(&radio, d, LinkKind::Los, 0.0).unwrap();
        assert!(pl.abs() < 1e-9, "got {pl}");
    }

    #[test]
    fn path_loss_matches_independent_evaluation() {
        // Frozen from an independent script: 20*log10(4*pi*2e9*500/299792458).
        let radio = table_i_radio();
        let pl = path_loss(&radio, 500.0, LinkKind::Los, 0.0).unwrap();
        assert_relative_eq!(pl, 92.44778322188337, max_relative = 1e-12);
        let pl_los = path_loss(&radio, 500.0, LinkKind::Los, 1.6).unwrap();
        assert_relative_eq!(pl_los, 94.04778322188336, max_relative = 1e-12);
    }

    #[test]
    fn path_loss_rejects_nonpositive_distance() {
        let radio = table_i_radio();
        assert!(path_loss(&radio, 0.0, LinkKind::Los, 0.0).is_err());
        assert!(path_loss(&radio, -5.0, LinkKind::Nlos, 0.0).is_err());
    }

    #[test]
    fn los_probability_matches_independent_evaluation() {
        let radio = table_i_radio();
        let p = los_probability(&radio, 90.0).unwrap();
        assert!(p > 0.999);
        assert_relative_eq!(p, 0.999975074537903, max_relative = 1e-12);
    }

    #[test]
    fn los_probability_increases_with_elevation() {
        let radio = table_i_radio();
        let p20 = los_probability(&radio, 20.0).unwrap();
        let p80 = los_probability(&radio, 80.0).unwrap();
        assert!(p80 > p20);
        assert_relative_eq!(p20, 0.35425121937217907, max_relative = 1e-12);
    }

    #[test]
    fn los_probability_limit_at_zero_phi() {
        let mut radio = table_i_radio();
        radio.los_phi = 0.0;
        assert_eq!(los_probability(&radio, 45.0).unwrap(), 1.0);
    }

    #[test]
    fn los_probability_rejects_out_of_range() {
        let radio = table_i_radio();
        assert!(los_probability(&radio, 0.0).is_err());
        assert!(los_probability(&radio, 90.1).is_err());
    }

    #[test]
    fn snr_matches_db_arithmetic() {
        let radio = table_i_radio();
        // P = 20 dBm over N0*B = -170 + 60 dBm with no path loss: 130 dB.
        assert_relative_eq!(snr(&radio, 0.0), 1e13, max_relative = 1e-12);
    }

    #[test]
    fn snr_vanishes_with_loss_and_is_linear_in_bandwidth() {
        let radio = table_i_radio();
        assert!(snr(&radio, 2000.0) < 1e-80);
        let mut doubled = radio.clone();
        doubled.rb_bandwidth_hz *= 2.0;
        assert_relative_eq!(
            snr(&doubled, 37.0),
            snr(&radio, 37.0) / 2.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn link_budget_overhead_user_sees_max_elevation() {
        let radio = table_i_radio();
        let overhead = link_budget(&radio, [0.0, 0.0], [0.0, 0.0], 100.0).unwrap();
        let offset = link_budget(&radio, [30.0, 0.0], [0.0, 0.0], 100.0).unwrap();
        assert_eq!(overhead.p_los, los_probability(&radio, 90.0).unwrap());
        assert!(overhead.p_los > offset.p_los);
        assert!(overhead.rate_bps > offset.rate_bps);
    }

    #[test]
    fn link_budget_is_symmetric_for_equidistant_users() {
        let radio = table_i_radio();
        let a = link_budget(&radio, [10.0, 0.0], [0.0, 0.0], 100.0).unwrap();
        let b = link_budget(&radio, [0.0, 10.0], [0.0, 0.0], 100.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn link_budget_matches_independent_evaluation() {
        // Frozen from an independent script: user (10, -20) around the
        // center, altitude 100 m, Table-I constants, divisor 20, log2 rate.
        let radio = table_i_radio();
        let budget = link_budget(&radio, [10.0, -20.0], [0.0, 0.0], 100.0).unwrap();
        assert_relative_eq!(
            budget.path_loss_los_db,
            80.28027612586237,
            max_relative = 1e-9
        );
        assert_relative_eq!(
            budget.path_loss_nlos_db,
            101.68027612586238,
            max_relative = 1e-9
        );
        assert_relative_eq!(budget.p_los, 0.9998127529739314, max_relative = 1e-9);
        assert_relative_eq!(budget.rate_bps, 29850134.436000306, max_relative = 1e-9);
    }

    #[test]
    fn transmission_delay_basics() {
        assert_eq!(transmission_delay(0.0, 5.0).unwrap(), 0.0);
        assert_eq!(transmission_delay(1e6, 1e6).unwrap(), 1.0);
        assert!(transmission_delay(1.0, 0.0).is_err());
        // Demand over the frozen golden rate.
        let delay = transmission_delay(7.25e5, 29850134.436000306).unwrap();
        assert_relative_eq!(delay, 0.024287997816372465, max_relative = 1e-12);
    }

    #[test]
    fn hover_time_clamps_and_takes_max() {
        // 2 d_r / V = 4 s here.
        assert_eq!(hover_time(&[1.0, 3.9], 25.0, 50.0), 0.0);
        assert_eq!(hover_time(&[10.0], 25.0, 50.0), 6.0);
        assert_eq!(hover_time(&[3.0, 7.0, 5.0], 50.0, 50.0), 5.0);
        assert_eq!(hover_time(&[], 25.0, 50.0), 0.0);
    }

    #[test]
    fn sample_realization_respects_activity_probability() {
        let world = two_cluster_world();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let none = sample_realization(
            &TaskDistribution {
                p_active: 0.0,
                bits_min: 1.0,
                bits_max: 2.0,
                activate_max_s: 100.0,
                hotspot_weights: None,
            },
            &world,
            &mut rng,
        )
        .unwrap();
        assert_eq!(none.active_count(), 0);

        let all = sample_realization(
            &TaskDistribution {
                p_active: 1.0,
                bits_min: 1.0,
                bits_max: 2.0,
                activate_max_s: 100.0,
                hotspot_weights: None,
            },
            &world,
            &mut rng,
        )
        .unwrap();
        assert_eq!(all.active_count(), world.num_users());
        for u in 0..world.num_users() {
            assert!((0.0..=100.0).contains(&all.activate_at[u]));
            assert!((1.0..=2.0).contains(&all.bits[u]));
        }
        all.validate(&world).unwrap();
    }

    #[test]
    fn sample_realization_is_deterministic_per_seed() {
        let world = two_cluster_world();
        let dist = TaskDistribution {
            p_active: 0.5,
            bits_min: 1e5,
            bits_max: 1e6,
            activate_max_s: 150.0,
            hotspot_weights: Some(vec![2.0, 0.5]),
        };
        let a = sample_realization(&dist, &world, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = sample_realization(&dist, &world, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_realization_rejects_bad_parameters() {
        let world = two_cluster_world();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bad = TaskDistribution {
            p_active: 1.4,
            bits_min: 1.0,
            bits_max: 2.0,
            activate_max_s: 10.0,
            hotspot_weights: None,
        };
        assert!(sample_realization(&bad, &world, &mut rng).is_err());
        let late = TaskDistribution {
            p_active: 0.5,
            bits_min: 1.0,
            bits_max: 2.0,
            activate_max_s: 1e9,
            hotspot_weights: None,
        };
        assert!(sample_realization(&late, &world, &mut rng).is_err());
    }

    #[test]
    fn world_validation_catches_duplicate_altitudes_and_split_users() {
        let mut cfg = two_cluster_world().config().clone();
        cfg.altitudes_m = vec![100.0, 100.0];
        assert!(World::new(cfg).is_err());

        let mut cfg = two_cluster_world().config().clone();
        cfg.clusters[1].users.push(UserSpec {
            id: 0,
            pos: [0.0, 0.0],
        });
        assert!(World::new(cfg).is_err());
    }

    #[test]
    fn sampled_links_reuse_one_draw_per_link_and_seed() {
        let world = two_cluster_world();
        let a = LinkTable::sampled(&world, &mut ChaCha8Rng::seed_from_u64(9));
        let b = LinkTable::sampled(&world, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a.rate_bps, b.rate_bps);
        let c = LinkTable::sampled(&world, &mut ChaCha8Rng::seed_from_u64(10));
        assert_ne!(a.rate_bps, c.rate_bps);
    }

    proptest! {
        #[test]
        fn path_loss_increases_with_distance(d1 in 1.0f64..1e5, delta in 1.0f64..1e5) {
            let radio = table_i_radio();
            let near = path_loss(&radio, d1, LinkKind::Los, 0.3).unwrap();
            let far = path_loss(&radio, d1 + delta, LinkKind::Los, 0.3).unwrap();
            prop_assert!(far > near);
        }

        #[test]
        fn los_probability_is_bounded_and_monotone(
            lo in 1.0f64..85.0,
            bump in 0.01f64..1.0,
            phi in 0.5f64..30.0,
            // Above ~0.3 the probability saturates to 1.0 in f64 at high
            // elevations, which would void the strictness check.
            sphi in 0.01f64..0.3,
        ) {
            let mut radio = table_i_radio();
            radio.los_phi = phi;
            radio.los_small_phi = sphi;
            let a = los_probability(&radio, lo).unwrap();
            let b = los_probability(&radio, (lo + bump).min(90.0)).unwrap();
            prop_assert!(a > 0.0 && a < 1.0);
            prop_assert!(b > a);
            // The NLoS share is defined as the complement, so the mixture
            // weights always sum to one.
            prop_assert_eq!(a + (1.0 - a), 1.0);
        }

        #[test]
        fn rate_decreases_with_horizontal_distance(h1 in 0.0f64..400.0, delta in 1.0f64..400.0) {
            let radio = table_i_radio();
            let near = link_budget(&radio, [h1, 0.0], [0.0, 0.0], 100.0).unwrap();
            let far = link_budget(&radio, [h1 + delta, 0.0], [0.0, 0.0], 100.0).unwrap();
            prop_assert!(near.rate_bps > far.rate_bps);
        }
    }
}
