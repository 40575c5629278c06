//! Predictability-aware sampling-based model predictive control.
//!
//! Agents planning among other agents share a prediction model. Each agent
//! queries that model for the distribution others expect *it* to follow, and
//! adds a discounted KL-divergence penalty between its planned trajectory and
//! that expectation to its MPPI rollout cost. Groups of agents doing this
//! settle on the convention encoded in the predictor instead of re-solving
//! the coordination problem from scratch every tick.
//!
//! The crate is organized as:
//!
//! - [`gaussian`]: 2D Gaussians, mixtures, log densities.
//! - [`rng`]: counter-keyed deterministic random streams.
//! - [`dynamics`]: unicycle / double-integrator models and rollouts.
//! - [`prediction`]: shared predictors (constant-velocity, goal-conditioned
//!   Bayesian observer, convention-biased) over world snapshots.
//! - [`predictability`]: KL estimators, the discounted predictability cost,
//!   and a free-energy estimator.
//! - [`planner`]: the MPPI planner (sampling, costing, weight fusion,
//!   warm start).
//! - [`simulation`]: synchronous multi-agent closed loop with episode logs.
//! - [`metrics`]: planning effort, control smoothness, batch aggregation.
//! - [`scenario`]: scenario file schema, validation, bundled scenarios.
//! - [`batch`]: seeded lambda-sweep batches with stable CSV output.
//!
//! Everything downstream of a `(scenario, lambda, seed)` triple is
//! bit-reproducible: random draws are keyed by `(seed, tick, agent, sample)`
//! so thread count and evaluation order cannot change results.

pub mod batch;
pub mod dynamics;
pub mod error;
mod exec;
pub mod gaussian;
pub mod logio;
pub mod metrics;
pub mod planner;
pub mod prediction;
pub mod predictability;
pub mod rng;
pub mod scenario;
pub mod simulation;
pub mod types;

pub use error::{Error, Result};
pub use types::{AgentId, Control, Plan, State};
