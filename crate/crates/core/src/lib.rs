//! Desk-scale urban radio digital twin.
//!
//! * [`scene`]: procedural axis-aligned city geometry and occlusion queries.
//! * [`channel`]: first-order ray tracing, link budget, SINR and capacity.
//! * [`env`]: UAV positioning environment over the channel model.
//! * [`ppo`]: actor-critic PPO agent trained on the environment.
//! * [`ledger`]: discrete-event model of a token-metered compute market
//!   that dispatches position-evaluation jobs to provider nodes.
//! * [`probe`]: operation counters for the complexity probe.

// NaN-rejecting range checks are written as negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod env;
pub mod geometry;
pub mod ledger;
pub mod ppo;
pub mod probe;
pub mod scene;

pub use geometry::{Aabb, Axis, Vec3};
