//! Synchronous multi-agent closed loop.
//!
//! Every tick: build one snapshot, run the shared predictor once, let every
//! active agent plan against that same snapshot, apply the first controls,
//! log everything. No agent ever sees another agent's same-tick plan.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::dynamics::DynamicsModel;
use crate::error::Result;
use crate::exec;
use crate::gaussian::GaussianDist;
use crate::planner::{plan, Diagnostics, PlanContext, StageCostSpec};
use crate::prediction::{
    predict_constant_velocity, predict_convention_biased, predict_goal_conditioned,
    update_beliefs, AgentSnapshot, Belief, ConventionParams, PredictionSet, WorldSnapshot,
};
use crate::rng::{RngContext, RngStream, StreamKey};
use crate::scenario::{PredictorConfig, ScenarioFile};
use crate::types::{AgentId, Control, Plan, State};

/// Reserved tick key for the start-position jitter draws.
const JITTER_TICK: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerminationSpec {
    /// Maximum number of planning ticks.
    pub t_max: u64,
    /// Arrival distance in meters.
    pub goal_tolerance: f64,
    /// Speeds strictly below this count as stopped.
    pub deadlock_speed: f64,
    /// Consecutive stopped ticks before a deadlock is declared.
    pub deadlock_dwell: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "flag", rename_all = "snake_case")]
pub enum Terminal {
    Collision { a: AgentId, b: AgentId },
    Deadlock,
    AllGoalsReached,
    Timeout,
}

impl Terminal {
    pub fn label(&self) -> &'static str {
        match self {
            Terminal::Collision { .. } => "collision",
            Terminal::Deadlock => "deadlock",
            Terminal::AllGoalsReached => "goals",
            Terminal::Timeout => "timeout",
        }
    }
}

/// Everything recorded about one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub snapshot: WorldSnapshot,
    pub predictions: PredictionSet,
    /// Plans of the agents that planned this tick (arrived agents hold).
    pub plans: BTreeMap<AgentId, Plan>,
    pub applied: BTreeMap<AgentId, Control>,
    /// Whether the applied control had to be clamped to the input box.
    pub applied_clamped: BTreeMap<AgentId, bool>,
    pub diagnostics: BTreeMap<AgentId, Diagnostics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub belief: Option<Belief>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub scenario: String,
    pub lambda: f64,
    pub seed: u64,
    pub ticks: Vec<TickRecord>,
    pub final_states: BTreeMap<AgentId, State>,
    pub terminal: Terminal,
}

/// First overlapping pair in lowest-id order; overlap is strict
/// (touching discs do not collide).
pub fn detect_collision(snap: &WorldSnapshot) -> Option<(AgentId, AgentId)> {
    for (i, a) in snap.agents.iter().enumerate() {
        for b in snap.agents.iter().skip(i + 1) {
            let dist = (a.state.position() - b.state.position()).norm();
            if dist < a.radius + b.radius {
                return Some((a.id, b.id));
            }
        }
    }
    None
}

/// True when the last `deadlock_dwell` recorded ticks all show every
/// non-arrived agent stopped while at least one agent is still short of
/// its goal. Arrival is judged per tick by goal distance.
pub fn detect_deadlock(ticks: &[TickRecord], spec: &TerminationSpec) -> bool {
    let dwell = spec.deadlock_dwell as usize;
    if dwell == 0 || ticks.len() < dwell {
        return false;
    }
    ticks[ticks.len() - dwell..].iter().all(|rec| {
        let mut any_unfinished = false;
        let all_stopped = rec.snapshot.agents.iter().all(|agent| {
            let arrived =
                (agent.state.position() - agent.goal).norm() <= spec.goal_tolerance;
            if arrived {
                true
            } else {
                any_unfinished = true;
                agent.state.v.abs() < spec.deadlock_speed
            }
        });
        all_stopped && any_unfinished
    })
}

/// Mutable observer state threaded through an episode.
enum PredictorState {
    Stateless,
    Observer { belief: Belief, prev_modes: Option<Vec<GaussianDist>> },
}

struct PredictorRuntime<'a> {
    config: &'a PredictorConfig,
    state: PredictorState,
}

impl<'a> PredictorRuntime<'a> {
    fn new(config: &'a PredictorConfig) -> Result<Self> {
        let state = match config {
            PredictorConfig::GoalConditioned { goals, initial_belief, .. } => {
                let names = goals.iter().map(|g| g.name.clone()).collect();
                PredictorState::Observer {
                    belief: Belief::new(names, initial_belief.clone())?,
                    prev_modes: None,
                }
            }
            _ => PredictorState::Stateless,
        };
        Ok(Self { config, state })
    }

    /// Run the shared model once for this tick. Returns the prediction set
    /// and, for observer predictors, the belief used to produce it.
    fn predict(
        &mut self,
        snap: &WorldSnapshot,
        horizon: usize,
        dt: f64,
    ) -> Result<(PredictionSet, Option<Belief>)> {
        match self.config {
            PredictorConfig::ConstantVelocity { .. } => {
                let cov = self.config.cov_matrix();
                Ok((predict_constant_velocity(snap, horizon, dt, cov)?, None))
            }
            PredictorConfig::ConventionBiased {
                side_gain,
                interaction_radius,
                nominal_speed,
                pass_right,
                ..
            } => {
                let params = ConventionParams {
                    side_gain: *side_gain,
                    interaction_radius: *interaction_radius,
                    nominal_speed: *nominal_speed,
                    pass_right: *pass_right,
                };
                let cov = self.config.cov_matrix();
                Ok((predict_convention_biased(snap, horizon, dt, cov, &params)?, None))
            }
            PredictorConfig::GoalConditioned { nominal_speed, goals, .. } => {
                let cov = self.config.cov_matrix();
                let agent = &snap.agents[0];
                let goal_positions: Vec<(String, Vector2<f64>)> = goals
                    .iter()
                    .map(|g| (g.name.clone(), Vector2::new(g.position[0], g.position[1])))
                    .collect();
                let PredictorState::Observer { belief, prev_modes } = &mut self.state else {
                    unreachable!("observer predictor carries observer state");
                };
                if let Some(modes) = prev_modes.as_ref() {
                    *belief = update_beliefs(belief, agent.state.position(), modes)?;
                }
                let steps = predict_goal_conditioned(
                    belief,
                    &agent.state,
                    &goal_positions,
                    horizon,
                    dt,
                    cov,
                    *nominal_speed,
                )?;
                *prev_modes =
                    Some(steps[0].components().iter().map(|(_, c)| c.clone()).collect());
                let mut per_agent = BTreeMap::new();
                per_agent.insert(agent.id, steps);
                Ok((PredictionSet::new(horizon, per_agent)?, Some(belief.clone())))
            }
        }
    }
}

struct AgentRuntime {
    config_index: usize,
    id: AgentId,
    model: DynamicsModel,
    stage: StageCostSpec,
    state: State,
    prev_state: State,
    nominal: Vec<Control>,
    arrived: bool,
}

/// Run one closed-loop episode. Deterministic in (scenario, lambda, seed).
pub fn run_episode(scenario: &ScenarioFile, lambda: f64, seed: u64) -> Result<EpisodeLog> {
    scenario.validate()?;
    let pcfg = scenario.predictability_config(lambda)?;
    let plan_cov = scenario.plan_cov_matrix();
    let term = scenario.termination;
    let horizon = scenario.planner.horizon;

    let mut agents: Vec<AgentRuntime> = Vec::with_capacity(scenario.agents.len());
    for (i, cfg) in scenario.agents.iter().enumerate() {
        let mut start = cfg.start;
        if scenario.start_jitter_std > 0.0 {
            let mut jitter = RngStream::new(StreamKey::new(seed, JITTER_TICK, cfg.id, 0));
            start.x += scenario.start_jitter_std * jitter.normal();
            start.y += scenario.start_jitter_std * jitter.normal();
        }
        agents.push(AgentRuntime {
            config_index: i,
            id: cfg.id,
            model: scenario.model_for(cfg)?,
            stage: scenario.stage_spec_for(cfg),
            state: start,
            prev_state: start,
            nominal: vec![Control::ZERO; horizon],
            arrived: false,
        });
    }
    agents.sort_by_key(|a| a.id);

    let mut predictor = PredictorRuntime::new(&scenario.predictor)?;
    let mut ticks: Vec<TickRecord> = Vec::new();

    let terminal = 'episode: loop {
        let tick = ticks.len() as u64;

        for agent in agents.iter_mut() {
            if agent.arrived {
                continue;
            }
            let goal = scenario.agents[agent.config_index].goal_position();
            if (agent.state.position() - goal).norm() <= term.goal_tolerance {
                agent.arrived = true;
                agent.state.v = 0.0;
            }
        }
        if agents.iter().all(|a| a.arrived) {
            break 'episode Terminal::AllGoalsReached;
        }

        let snapshot = WorldSnapshot::new(
            tick,
            agents
                .iter()
                .map(|a| AgentSnapshot {
                    id: a.id,
                    state: a.state,
                    prev_state: a.prev_state,
                    radius: scenario.agents[a.config_index].radius,
                    goal: scenario.agents[a.config_index].goal_position(),
                })
                .collect(),
        )?;

        if let Some((a, b)) = detect_collision(&snapshot) {
            break 'episode Terminal::Collision { a, b };
        }
        if tick >= term.t_max {
            break 'episode Terminal::Timeout;
        }

        let (predictions, belief) = predictor.predict(&snapshot, horizon, scenario.dt)?;

        // All active agents plan from the same snapshot and prediction set;
        // order cannot matter because each draws from its own keyed streams.
        let active: Vec<usize> = (0..agents.len()).filter(|i| !agents[*i].arrived).collect();
        let outcomes = exec::map_indexed(active.len(), |j| {
            let agent = &agents[active[j]];
            let ctx = PlanContext {
                ego: agent.id,
                snap: &snapshot,
                preds: &predictions,
                model: &agent.model,
                stage: &agent.stage,
                planner: &scenario.planner,
                predictability: &pcfg,
                plan_cov,
            };
            plan(&ctx, &agent.nominal, RngContext::new(seed, tick, agent.id))
        });

        let mut plans = BTreeMap::new();
        let mut applied = BTreeMap::new();
        let mut applied_clamped = BTreeMap::new();
        let mut diagnostics = BTreeMap::new();
        for (j, outcome) in outcomes.into_iter().enumerate() {
            let outcome = outcome?;
            let agent = &mut agents[active[j]];
            let u = outcome.plan.controls[0];
            let (_, clamped) = agent.model.clamp_control(u);
            agent.prev_state = agent.state;
            agent.state = agent.model.step(agent.state, u)?;
            agent.nominal = outcome.next_nominal;
            plans.insert(agent.id, outcome.plan);
            applied.insert(agent.id, u);
            applied_clamped.insert(agent.id, clamped);
            diagnostics.insert(agent.id, outcome.diagnostics);
        }
        for agent in agents.iter_mut() {
            if agent.arrived {
                agent.prev_state = agent.state;
            }
        }

        ticks.push(TickRecord {
            tick,
            snapshot,
            predictions,
            plans,
            applied,
            applied_clamped,
            diagnostics,
            belief,
        });

        if detect_deadlock(&ticks, &term) {
            break 'episode Terminal::Deadlock;
        }
    };

    let final_states = agents.iter().map(|a| (a.id, a.state)).collect();
    Ok(EpisodeLog {
        scenario: scenario.name.clone(),
        lambda,
        seed,
        ticks,
        final_states,
        terminal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::builtin;

    fn free_space() -> ScenarioFile {
        builtin::load("free_space").unwrap()
    }

    #[test]
    fn single_agent_reaches_goal_in_free_space() {
        let scenario = free_space();
        let log = run_episode(&scenario, 0.0, 3).unwrap();
        assert_eq!(log.terminal, Terminal::AllGoalsReached);
        assert!(!log.ticks.is_empty());
    }

    #[test]
    fn agents_already_at_goals_finish_at_tick_zero() {
        let mut scenario = free_space();
        let goal = scenario.agents[0].goal;
        scenario.agents[0].start = State::new(goal[0], goal[1], 0.0, 0.0).unwrap();
        scenario.start_jitter_std = 0.0;
        let log = run_episode(&scenario, 0.0, 1).unwrap();
        assert_eq!(log.terminal, Terminal::AllGoalsReached);
        assert!(log.ticks.is_empty());
    }

    #[test]
    fn episodes_replay_bit_identically() {
        let scenario = free_space();
        let a = run_episode(&scenario, 0.0, 11).unwrap();
        let b = run_episode(&scenario, 0.0, 11).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn agent_order_in_the_file_does_not_change_the_episode() {
        let mut scenario = builtin::load("merge_corridor").unwrap();
        let baseline = run_episode(&scenario, 0.0, 5).unwrap();
        scenario.agents.reverse();
        let permuted = run_episode(&scenario, 0.0, 5).unwrap();
        assert_eq!(
            serde_json::to_string(&baseline).unwrap(),
            serde_json::to_string(&permuted).unwrap()
        );
    }

    #[test]
    fn applied_control_equals_first_planned_control() {
        let scenario = free_space();
        let log = run_episode(&scenario, 0.0, 7).unwrap();
        for rec in &log.ticks {
            for (id, u) in &rec.applied {
                assert_eq!(*u, rec.plans[id].controls[0]);
            }
        }
    }

    #[test]
    fn identity_radius_and_goal_never_change() {
        let scenario = free_space();
        let log = run_episode(&scenario, 0.0, 2).unwrap();
        let first = &log.ticks[0].snapshot.agents[0];
        for rec in &log.ticks {
            let a = &rec.snapshot.agents[0];
            assert_eq!(a.id, first.id);
            assert_eq!(a.radius, first.radius);
            assert_eq!(a.goal, first.goal);
        }
    }

    fn stopped_tick_record(tick: u64, positions: &[(f64, f64)], goal: (f64, f64)) -> TickRecord {
        let agents: Vec<AgentSnapshot> = positions
            .iter()
            .enumerate()
            .map(|(i, (x, y))| {
                let state = State::new(*x, *y, 0.0, 0.0).unwrap();
                AgentSnapshot {
                    id: i as u64,
                    state,
                    prev_state: state,
                    radius: 0.4,
                    goal: Vector2::new(goal.0, goal.1),
                }
            })
            .collect();
        TickRecord {
            tick,
            snapshot: WorldSnapshot::new(tick, agents).unwrap(),
            predictions: PredictionSet::new(1, BTreeMap::new()).unwrap(),
            plans: BTreeMap::new(),
            applied: BTreeMap::new(),
            applied_clamped: BTreeMap::new(),
            diagnostics: BTreeMap::new(),
            belief: None,
        }
    }

    fn term_spec() -> TerminationSpec {
        TerminationSpec {
            t_max: 100,
            goal_tolerance: 0.5,
            deadlock_speed: 0.05,
            deadlock_dwell: 3,
        }
    }

    #[test]
    fn deadlock_requires_unfinished_agents() {
        let spec = term_spec();
        // Both agents stopped at the goal: no deadlock.
        let at_goal: Vec<TickRecord> = (0..4)
            .map(|t| stopped_tick_record(t, &[(5.0, 5.0), (5.2, 5.0)], (5.0, 5.0)))
            .collect();
        assert!(!detect_deadlock(&at_goal, &spec));
        // Stopped far from the goal for the dwell: deadlock.
        let stuck: Vec<TickRecord> = (0..3)
            .map(|t| stopped_tick_record(t, &[(0.0, 0.0), (2.0, 0.0)], (5.0, 5.0)))
            .collect();
        assert!(detect_deadlock(&stuck, &spec));
        // Not enough dwell yet.
        assert!(!detect_deadlock(&stuck[..2], &spec));
    }

    #[test]
    fn creeping_at_exactly_the_threshold_is_not_stopped() {
        let spec = term_spec();
        let mut ticks: Vec<TickRecord> = (0..3)
            .map(|t| stopped_tick_record(t, &[(0.0, 0.0)], (5.0, 5.0)))
            .collect();
        for rec in &mut ticks {
            let mut agents = rec.snapshot.agents.clone();
            agents[0].state.v = spec.deadlock_speed;
            rec.snapshot = WorldSnapshot::new(rec.tick, agents).unwrap();
        }
        assert!(!detect_deadlock(&ticks, &spec));
    }

    #[test]
    fn collision_detection_uses_strict_overlap() {
        let mk = |d: f64| {
            let a = State::new(0.0, 0.0, 0.0, 0.0).unwrap();
            let b = State::new(d, 0.0, 0.0, 0.0).unwrap();
            WorldSnapshot::new(
                0,
                vec![
                    AgentSnapshot { id: 0, state: a, prev_state: a, radius: 0.5, goal: Vector2::zeros() },
                    AgentSnapshot { id: 1, state: b, prev_state: b, radius: 0.5, goal: Vector2::zeros() },
                ],
            )
            .unwrap()
        };
        assert_eq!(detect_collision(&mk(1.0)), None);
        assert_eq!(detect_collision(&mk(0.9)), Some((0, 1)));
        let single = WorldSnapshot::new(
            0,
            vec![AgentSnapshot {
                id: 0,
                state: State::new(0.0, 0.0, 0.0, 0.0).unwrap(),
                prev_state: State::new(0.0, 0.0, 0.0, 0.0).unwrap(),
                radius: 0.5,
                goal: Vector2::zeros(),
            }],
        )
        .unwrap();
        assert_eq!(detect_collision(&single), None);
    }

    #[test]
    fn observer_scenario_logs_beliefs_on_every_tick() {
        let mut scenario = builtin::load("two_goal_observer").unwrap();
        scenario.termination.t_max = 10;
        let log = run_episode(&scenario, 0.0, 0).unwrap();
        assert!(!log.ticks.is_empty());
        for rec in &log.ticks {
            let belief = rec.belief.as_ref().expect("observer scenario records beliefs");
            assert!((belief.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
