//! Shared prediction models over world snapshots.
//!
//! A predictor maps the joint state of all agents to per-agent, per-step
//! Gaussian-mixture position predictions. Every agent queries the same
//! model, including for itself; that self-prediction is what the planner's
//! predictability term pulls toward.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::gaussian::{serde_vec2, GaussianDist, GaussianMixtureDist};
use crate::types::{AgentId, State};

/// Joint state of the scene at one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSnapshot {
    pub tick: u64,
    /// Sorted by agent id; construction enforces uniqueness.
    pub agents: Vec<AgentSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub id: AgentId,
    pub state: State,
    pub prev_state: State,
    pub radius: f64,
    #[serde(with = "serde_vec2")]
    pub goal: Vector2<f64>,
}

impl WorldSnapshot {
    pub fn new(tick: u64, mut agents: Vec<AgentSnapshot>) -> Result<Self> {
        agents.sort_by_key(|a| a.id);
        if agents.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(Error::invalid_input("duplicate agent ids in snapshot"));
        }
        if agents.iter().any(|a| !a.state.is_finite() || !a.prev_state.is_finite()) {
            return Err(Error::invalid_input("non-finite agent state in snapshot"));
        }
        Ok(Self { tick, agents })
    }

    pub fn agent(&self, id: AgentId) -> Option<&AgentSnapshot> {
        self.agents.iter().find(|a| a.id == id)
    }
}

/// Per-agent prediction over horizon steps 1..=K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub horizon: usize,
    pub per_agent: BTreeMap<AgentId, Vec<GaussianMixtureDist>>,
}

impl PredictionSet {
    pub fn new(horizon: usize, per_agent: BTreeMap<AgentId, Vec<GaussianMixtureDist>>) -> Result<Self> {
        for (id, steps) in &per_agent {
            if steps.len() != horizon {
                return Err(Error::invalid_input(format!(
                    "agent {id} prediction has {} steps, expected {horizon}",
                    steps.len()
                )));
            }
        }
        Ok(Self { horizon, per_agent })
    }

    pub fn for_agent(&self, id: AgentId) -> Option<&[GaussianMixtureDist]> {
        self.per_agent.get(&id).map(|v| v.as_slice())
    }
}

/// Observer belief over a fixed, ordered goal set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    pub goals: Vec<String>,
    pub probs: Vec<f64>,
}

impl Belief {
    pub fn new(goals: Vec<String>, probs: Vec<f64>) -> Result<Self> {
        if goals.len() != probs.len() || goals.is_empty() {
            return Err(Error::invalid_input("belief needs one probability per goal"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid_input("belief probabilities must be nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid_input(format!("belief sums to {total}, expected 1")));
        }
        Ok(Self { goals, probs })
    }

    pub fn prob(&self, goal: &str) -> Option<f64> {
        self.goals.iter().position(|g| g == goal).map(|i| self.probs[i])
    }
}

/// Constant-velocity predictor: each agent keeps its current velocity
/// vector, with covariance growing linearly along the horizon.
pub fn predict_constant_velocity(
    snap: &WorldSnapshot,
    horizon: usize,
    dt: f64,
    cov: Matrix2<f64>,
) -> Result<PredictionSet> {
    if horizon == 0 {
        return Err(Error::invalid_input("prediction horizon must be >= 1"));
    }
    let mut per_agent = BTreeMap::new();
    for agent in &snap.agents {
        let pos = agent.state.position();
        let vel = agent.state.velocity();
        let steps = (1..=horizon)
            .map(|k| {
                let mean = pos + (k as f64) * dt * vel;
                let grown = cov * k as f64;
                Ok(GaussianMixtureDist::single(GaussianDist::new(mean, grown)?))
            })
            .collect::<Result<Vec<_>>>()?;
        per_agent.insert(agent.id, steps);
    }
    PredictionSet::new(horizon, per_agent)
}

/// Constant-velocity motion from `pos` toward `goal` at `speed`, stopping
/// at the goal. Returns the mean at horizon step k.
fn toward_goal_mean(pos: Vector2<f64>, goal: Vector2<f64>, speed: f64, dt: f64, k: usize) -> Vector2<f64> {
    let to_goal = goal - pos;
    let dist = to_goal.norm();
    if dist < 1e-9 || speed <= 0.0 {
        return pos;
    }
    let travel = (speed * dt * k as f64).min(dist);
    pos + to_goal * (travel / dist)
}

/// Goal-conditioned mixture prediction for one observed agent: one
/// component per goal, weighted by the observer's current belief, each
/// moving toward its goal at `nominal_speed` with fixed covariance.
pub fn predict_goal_conditioned(
    belief: &Belief,
    state: &State,
    goals: &[(String, Vector2<f64>)],
    horizon: usize,
    dt: f64,
    cov: Matrix2<f64>,
    nominal_speed: f64,
) -> Result<Vec<GaussianMixtureDist>> {
    if goals.is_empty() {
        return Err(Error::invalid_input("goal-conditioned prediction needs goals"));
    }
    if goals.len() != belief.goals.len()
        || goals.iter().zip(&belief.goals).any(|((name, _), b)| name != b)
    {
        return Err(Error::invalid_input("belief goal set does not match goals"));
    }
    let pos = state.position();
    (1..=horizon)
        .map(|k| {
            let comps = goals
                .iter()
                .zip(&belief.probs)
                .map(|((_, goal), w)| {
                    let mean = toward_goal_mean(pos, *goal, nominal_speed, dt, k);
                    Ok((*w, GaussianDist::new(mean, cov)?))
                })
                .collect::<Result<Vec<_>>>()?;
            GaussianMixtureDist::new(comps)
        })
        .collect()
}

/// Bayes update of goal beliefs from one observed position. The likelihood
/// of goal g is the density of the previous prediction's first-step mode
/// for g at the observed position. If every weighted likelihood underflows,
/// the observation carries no information and the prior is returned.
pub fn update_beliefs(
    prior: &Belief,
    observed: Vector2<f64>,
    prev_modes: &[GaussianDist],
) -> Result<Belief> {
    if prev_modes.len() != prior.goals.len() {
        return Err(Error::invalid_input(format!(
            "got {} likelihood modes for {} goals",
            prev_modes.len(),
            prior.goals.len()
        )));
    }
    let weighted: Vec<f64> = prior
        .probs
        .iter()
        .zip(prev_modes)
        .map(|(p, mode)| p * mode.log_density(observed).exp())
        .collect();
    let total: f64 = weighted.iter().sum();
    if total < 1e-300 {
        return Ok(prior.clone());
    }
    Belief::new(prior.goals.clone(), weighted.iter().map(|w| w / total).collect())
}

/// Parameters for the convention-biased predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConventionParams {
    /// Maximum lateral offset in meters; 0 disables the convention.
    pub side_gain: f64,
    /// Other agents closer than this pull the predicted path sideways.
    pub interaction_radius: f64,
    /// Speed of the predicted progress toward the goal.
    pub nominal_speed: f64,
    /// Pass on the right when true (the default), on the left otherwise.
    pub pass_right: bool,
}

/// Only an exactly-on-axis conflict falls back to the configured default
/// side. Anything off-axis is passed on its far side, so the predicted
/// joint pattern genuinely hinges on the current micro-geometry when a
/// meet is close to symmetric.
const SIDE_DEADBAND: f64 = 0.0;

/// Convention-biased predictor: goal-directed motion with a lateral bulge
/// past the nearest other agent, sized by proximity. The bulge goes to the
/// side opposite that agent; when the agent sits on the axis (the ambiguous
/// case that needs a convention), everyone gets the same default side. All
/// agents consulting this model therefore see one joint passing pattern,
/// which is what lets them settle left/right without negotiation.
pub fn predict_convention_biased(
    snap: &WorldSnapshot,
    horizon: usize,
    dt: f64,
    cov: Matrix2<f64>,
    params: &ConventionParams,
) -> Result<PredictionSet> {
    if horizon == 0 {
        return Err(Error::invalid_input("prediction horizon must be >= 1"));
    }
    if params.side_gain < 0.0 {
        return Err(Error::invalid_input("side_gain must be >= 0"));
    }
    let mut per_agent = BTreeMap::new();
    for agent in &snap.agents {
        let pos = agent.state.position();
        let to_goal = agent.goal - pos;
        let dist_goal = to_goal.norm();

        // Offset magnitude follows the nearest other agent; the side flips
        // only for a decisively offset head-on partner, so near-symmetric
        // meets resolve to the default side while clearly skewed ones keep
        // the partner on the far side of the path.
        let mut proximity = 0.0;
        let mut conflict_lateral = 0.0;
        if params.interaction_radius > 0.0 && dist_goal > 1e-9 {
            let dir = to_goal / dist_goal;
            let mut nearest = f64::INFINITY;
            let mut best_head_on = 0.0;
            for other in &snap.agents {
                if other.id == agent.id {
                    continue;
                }
                let delta = other.state.position() - pos;
                let dist = delta.norm();
                if dist < 1e-9 || dist >= params.interaction_radius {
                    continue;
                }
                if dist < nearest {
                    nearest = dist;
                    proximity = 1.0 - dist / params.interaction_radius;
                }
                let ahead = dir.dot(&delta) / dist;
                // 2D cross product; positive when the other agent is to
                // the left of the goal axis.
                let lateral = dir.x * delta.y - dir.y * delta.x;
                let head_on = ahead.max(0.0) * (1.0 - dist / params.interaction_radius);
                if head_on > best_head_on {
                    best_head_on = head_on;
                    conflict_lateral = lateral;
                }
            }
        }
        let offset = params.side_gain * proximity;

        let default_right = params.pass_right;
        let bulge_right = if conflict_lateral.abs() <= SIDE_DEADBAND {
            default_right
        } else {
            // Keep the conflicting agent on the other side of the path.
            conflict_lateral > 0.0
        };

        let steps = (1..=horizon)
            .map(|k| {
                let mut mean = toward_goal_mean(pos, agent.goal, params.nominal_speed, dt, k);
                if dist_goal > 1e-9 && offset > 0.0 {
                    let dir = to_goal / dist_goal;
                    // Unit normal pointing to the agent's right of its goal axis.
                    let side = if bulge_right {
                        Vector2::new(dir.y, -dir.x)
                    } else {
                        Vector2::new(-dir.y, dir.x)
                    };
                    let travel = (params.nominal_speed * dt * k as f64).min(dist_goal);
                    // Bulge peaks mid-path and vanishes at start and goal.
                    let frac = travel / dist_goal;
                    mean += side * offset * (std::f64::consts::PI * frac).sin();
                }
                Ok(GaussianMixtureDist::single(GaussianDist::new(mean, cov)?))
            })
            .collect::<Result<Vec<_>>>()?;
        per_agent.insert(agent.id, steps);
    }
    PredictionSet::new(horizon, per_agent)
}
