//! Cooperative multi-drone coverage toolkit.
//!
//! A team of drone base stations (DBSs) serves clusters of ground users whose
//! uplink requests arrive at unknown times. This crate provides:
//!
//! - [`world`]: static geometry, the air-to-ground channel model, and seeded
//!   request-realization sampling.
//! - [`sim`]: event-driven execution of joint trajectories, team-utility
//!   accounting, policy rollouts, and a brute-force optimal-trajectory search.
//! - [`approx`]: small MLP function approximators with exact analytic
//!   gradients and Hessian-vector products.
//! - [`vdrl`]: distributed value-decomposition policy-gradient training.
//! - [`meta`]: MAML-style meta-training of VD-RL initializations over a task
//!   distribution, plus adaptation-speed evaluation.
//! - [`baselines`]: independent actor-critic and pre-trained initializations.
//! - [`presets`]: ready-made worlds and configurations used by the CLI and
//!   the acceptance suite.
//!
//! All operations are deterministic given their inputs and a seeded RNG
//! stream; RNG state is always passed by value or `&mut`, never shared.

pub mod approx;
pub mod baselines;
pub mod checkpoint;
mod error;
pub mod meta;
pub mod metrics;
pub mod presets;
pub mod sim;
pub mod vdrl;
pub mod world;

pub use error::{Error, Result};
pub use world::{Location, World, WorldConfig};
