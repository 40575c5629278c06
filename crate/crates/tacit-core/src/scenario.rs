//! Scenario files: the JSON schema driving episodes, batches and sweeps.
//!
//! Loading is strict (unknown keys are rejected) and validation reports
//! every problem found rather than stopping at the first.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::dynamics::{DynamicsModel, ModelKind};
use crate::error::{Error, Result};
use crate::gaussian::MIN_COV_EIGENVALUE;
use crate::planner::{PlannerConfig, ReferencePath, StageCostSpec};
use crate::predictability::{KlMode, PredictabilityConfig};
use crate::simulation::TerminationSpec;
use crate::types::{AgentId, State};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Simulation and planning timestep in seconds.
    pub dt: f64,
    pub dynamics: DynamicsBounds,
    pub agents: Vec<AgentConfig>,
    pub predictor: PredictorConfig,
    pub planner: PlannerConfig,
    pub predictability: PredictabilitySection,
    pub termination: TerminationSpec,
    pub seeds: SeedsSpec,
    /// Standard deviation of the Gaussian jitter applied to every start
    /// position, per run.
    #[serde(default)]
    pub start_jitter_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsBounds {
    pub a_max: f64,
    pub omega_max: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub id: AgentId,
    pub start: State,
    pub goal: [f64; 2],
    pub radius: f64,
    #[serde(default = "default_model_kind")]
    pub model: ModelKind,
    /// Optional reference polyline tracked with the planner's `w_track`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_path: Option<Vec<[f64; 2]>>,
}

fn default_model_kind() -> ModelKind {
    ModelKind::Unicycle
}

impl AgentConfig {
    pub fn goal_position(&self) -> Vector2<f64> {
        Vector2::new(self.goal[0], self.goal[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PredictorConfig {
    /// Everyone keeps their current velocity; covariance grows with k.
    ConstantVelocity { cov: [[f64; 2]; 2] },
    /// Bayesian observer over a goal set; single-agent scenarios only.
    GoalConditioned {
        cov: [[f64; 2]; 2],
        nominal_speed: f64,
        goals: Vec<GoalSpec>,
        initial_belief: Vec<f64>,
    },
    /// Goal-directed motion with a lateral passing convention.
    ConventionBiased {
        cov: [[f64; 2]; 2],
        side_gain: f64,
        interaction_radius: f64,
        nominal_speed: f64,
        #[serde(default = "default_pass_right")]
        pass_right: bool,
    },
}

fn default_pass_right() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalSpec {
    pub name: String,
    pub position: [f64; 2],
}

impl PredictorConfig {
    pub fn cov_matrix(&self) -> Matrix2<f64> {
        let c = match self {
            PredictorConfig::ConstantVelocity { cov } => cov,
            PredictorConfig::GoalConditioned { cov, .. } => cov,
            PredictorConfig::ConventionBiased { cov, .. } => cov,
        };
        Matrix2::new(c[0][0], c[0][1], c[1][0], c[1][1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictabilitySection {
    /// The lambda values a sweep visits; `run` uses the first by default.
    pub lambdas: Vec<f64>,
    pub gamma: f64,
    pub kl_mode: KlMode,
    pub n_kl_samples: usize,
    /// Isotropic variance of the per-step plan distribution.
    pub plan_cov: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedsSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub list: Option<Vec<u64>>,
}

impl SeedsSpec {
    pub fn resolve(&self) -> Vec<u64> {
        match (&self.count, &self.list) {
            (Some(n), None) => (0..*n).collect(),
            (None, Some(list)) => list.clone(),
            _ => Vec::new(),
        }
    }
}

impl ScenarioFile {
    /// Parse a scenario from JSON text and validate it.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        file.validate()?;
        Ok(file)
    }

    pub fn model_for(&self, agent: &AgentConfig) -> Result<DynamicsModel> {
        DynamicsModel::new(
            agent.model,
            self.dt,
            self.dynamics.a_max,
            self.dynamics.omega_max,
            self.dynamics.v_max,
        )
    }

    pub fn stage_spec_for(&self, agent: &AgentConfig) -> StageCostSpec {
        let path = agent.reference_path.as_ref().map(|points| ReferencePath {
            points: points.iter().map(|p| (p[0], p[1])).collect(),
            weight: self.planner.w_track,
        });
        StageCostSpec::new(&self.planner, agent.goal_position(), path)
    }

    pub fn predictability_config(&self, lambda: f64) -> Result<PredictabilityConfig> {
        PredictabilityConfig::new(
            lambda,
            self.predictability.gamma,
            self.predictability.n_kl_samples,
            self.predictability.kl_mode,
        )
    }

    pub fn plan_cov_matrix(&self) -> Matrix2<f64> {
        Matrix2::from_diagonal_element(self.predictability.plan_cov)
    }

    /// Collects every validation problem; `Ok` only when there are none.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();

        if self.schema_version != 1 {
            problems.push(format!("schema_version: expected 1, got {}", self.schema_version));
        }
        if !(self.dt > 0.0) {
            problems.push(format!("dt: must be > 0, got {}", self.dt));
        }
        if !(self.dynamics.a_max > 0.0) || !(self.dynamics.omega_max > 0.0) || !(self.dynamics.v_max > 0.0) {
            problems.push("dynamics: a_max, omega_max and v_max must be > 0".into());
        }

        if self.agents.is_empty() {
            problems.push("agents: at least one agent required".into());
        }
        let mut seen: Vec<AgentId> = Vec::new();
        for agent in &self.agents {
            if seen.contains(&agent.id) {
                problems.push(format!("agents: duplicate id {} (appears more than once)", agent.id));
            }
            seen.push(agent.id);
            if !agent.start.is_finite() {
                problems.push(format!("agents[{}].start: non-finite field", agent.id));
            }
            if agent.start.v < 0.0 || agent.start.v > self.dynamics.v_max {
                problems.push(format!(
                    "agents[{}].start.v: {} outside [0, v_max]",
                    agent.id, agent.start.v
                ));
            }
            if !(agent.radius > 0.0) {
                problems.push(format!("agents[{}].radius: must be > 0", agent.id));
            }
            if !agent.goal.iter().all(|g| g.is_finite()) {
                problems.push(format!("agents[{}].goal: non-finite", agent.id));
            }
            if let Some(path) = &agent.reference_path {
                if path.is_empty() {
                    problems.push(format!("agents[{}].reference_path: must not be empty", agent.id));
                }
            }
        }
        for (i, a) in self.agents.iter().enumerate() {
            for b in self.agents.iter().skip(i + 1) {
                let gap = (a.goal_position() - b.goal_position()).norm();
                if a.id != b.id && gap <= a.radius + b.radius {
                    problems.push(format!(
                        "agents: goals of {} and {} are {gap:.3} m apart, within the collision radii",
                        a.id, b.id
                    ));
                }
            }
        }

        if let Err(Error::InvalidScenario(mut planner_problems)) = self.planner.validate() {
            problems.append(&mut planner_problems);
        }
        if self.planner.w_track < 0.0 {
            problems.push("planner.w_track: must be >= 0".into());
        }

        let p = &self.predictability;
        if p.lambdas.is_empty() {
            problems.push("predictability.lambdas: must not be empty".into());
        }
        for (i, l) in p.lambdas.iter().enumerate() {
            if !(*l >= 0.0) {
                problems.push(format!("predictability.lambdas[{i}]: must be >= 0, got {l}"));
            }
        }
        if !(0.0..=1.0).contains(&p.gamma) {
            problems.push(format!("predictability.gamma: must be in [0, 1], got {}", p.gamma));
        }
        if p.n_kl_samples == 0 {
            problems.push("predictability.n_kl_samples: must be >= 1".into());
        }
        if p.plan_cov < MIN_COV_EIGENVALUE {
            problems.push(format!(
                "predictability.plan_cov: must be >= {MIN_COV_EIGENVALUE}, got {}",
                p.plan_cov
            ));
        }

        let t = &self.termination;
        if t.t_max == 0 {
            problems.push("termination.t_max: must be >= 1".into());
        }
        if !(t.goal_tolerance > 0.0) {
            problems.push("termination.goal_tolerance: must be > 0".into());
        }
        if !(t.deadlock_speed > 0.0) {
            problems.push("termination.deadlock_speed: must be > 0".into());
        }
        if t.deadlock_dwell == 0 {
            problems.push("termination.deadlock_dwell: must be >= 1".into());
        }

        match (&self.seeds.count, &self.seeds.list) {
            (Some(0), None) => problems.push("seeds.count: must be >= 1".into()),
            (None, Some(list)) if list.is_empty() => problems.push("seeds.list: must not be empty".into()),
            (None, Some(list)) => {
                let mut sorted = list.clone();
                sorted.sort_unstable();
                if sorted.windows(2).any(|w| w[0] == w[1]) {
                    problems.push("seeds.list: contains duplicates".into());
                }
            }
            (Some(_), None) => {}
            _ => problems.push("seeds: exactly one of count or list required".into()),
        }

        if self.start_jitter_std < 0.0 {
            problems.push("start_jitter_std: must be >= 0".into());
        }

        let cov = self.predictor.cov_matrix();
        if (cov[(0, 1)] - cov[(1, 0)]).abs() > 1e-12 {
            problems.push("predictor.cov: must be symmetric".into());
        } else {
            let tr = cov[(0, 0)] + cov[(1, 1)];
            let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
            let min_eig = 0.5 * (tr - (tr * tr - 4.0 * det).max(0.0).sqrt());
            if min_eig < MIN_COV_EIGENVALUE {
                problems.push("predictor.cov: must be positive definite".into());
            }
        }
        match &self.predictor {
            PredictorConfig::ConstantVelocity { .. } => {}
            PredictorConfig::GoalConditioned { nominal_speed, goals, initial_belief, .. } => {
                if self.agents.len() != 1 {
                    problems.push(format!(
                        "predictor.goal_conditioned: requires exactly one agent, scenario has {}",
                        self.agents.len()
                    ));
                }
                if goals.is_empty() {
                    problems.push("predictor.goals: must not be empty".into());
                }
                if initial_belief.len() != goals.len() {
                    problems.push(format!(
                        "predictor.initial_belief: {} entries for {} goals",
                        initial_belief.len(),
                        goals.len()
                    ));
                } else {
                    let total: f64 = initial_belief.iter().sum();
                    if initial_belief.iter().any(|b| *b < 0.0) || (total - 1.0).abs() > 1e-9 {
                        problems.push("predictor.initial_belief: must be a probability simplex".into());
                    }
                }
                if !(*nominal_speed >= 0.0) {
                    problems.push("predictor.nominal_speed: must be >= 0".into());
                }
            }
            PredictorConfig::ConventionBiased { side_gain, interaction_radius, nominal_speed, .. } => {
                if !(*side_gain >= 0.0) {
                    problems.push("predictor.side_gain: must be >= 0".into());
                }
                if !(*interaction_radius > 0.0) {
                    problems.push("predictor.interaction_radius: must be > 0".into());
                }
                if !(*nominal_speed >= 0.0) {
                    problems.push("predictor.nominal_speed: must be >= 0".into());
                }
            }
        }

        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidScenario(problems))
        }
    }
}

/// Load and validate a scenario file from disk.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioFile> {
    let text = std::fs::read_to_string(path)?;
    ScenarioFile::from_json(&text)
}

/// Scenario files bundled with the repository.
pub mod builtin {
    use super::ScenarioFile;
    use crate::error::{Error, Result};

    pub const FREE_SPACE: &str = include_str!("../../../scenarios/free_space.json");
    pub const TWO_GOAL_OBSERVER: &str = include_str!("../../../scenarios/two_goal_observer.json");
    pub const SWAP_SYMMETRIC: &str = include_str!("../../../scenarios/swap_symmetric.json");
    pub const SWAP_ASYMMETRIC: &str = include_str!("../../../scenarios/swap_asymmetric.json");
    pub const DOUBLE_CROSSING: &str = include_str!("../../../scenarios/double_crossing.json");
    pub const MERGE_CORRIDOR: &str = include_str!("../../../scenarios/merge_corridor.json");
    pub const MERGE_CORRIDOR_CONVENTION: &str =
        include_str!("../../../scenarios/merge_corridor_convention.json");

    pub const NAMES: &[&str] = &[
        "free_space",
        "two_goal_observer",
        "swap_symmetric",
        "swap_asymmetric",
        "double_crossing",
        "merge_corridor",
        "merge_corridor_convention",
    ];

    pub fn load(name: &str) -> Result<ScenarioFile> {
        let text = match name {
            "free_space" => FREE_SPACE,
            "two_goal_observer" => TWO_GOAL_OBSERVER,
            "swap_symmetric" => SWAP_SYMMETRIC,
            "swap_asymmetric" => SWAP_ASYMMETRIC,
            "double_crossing" => DOUBLE_CROSSING,
            "merge_corridor" => MERGE_CORRIDOR,
            "merge_corridor_convention" => MERGE_CORRIDOR_CONVENTION,
            _ => {
                return Err(Error::invalid_input(format!(
                    "unknown bundled scenario '{name}', expected one of {NAMES:?}"
                )))
            }
        };
        ScenarioFile::from_json(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_swap_symmetric_loads_with_four_agents() {
        let s = builtin::load("swap_symmetric").unwrap();
        assert_eq!(s.agents.len(), 4);
        assert_eq!(s.name, "swap_symmetric");
    }

    #[test]
    fn every_bundled_scenario_validates() {
        for name in builtin::NAMES {
            builtin::load(name).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn negative_lambda_is_reported_by_field_name() {
        let mut s = builtin::load("swap_symmetric").unwrap();
        s.predictability.lambdas = vec![0.0, -1.0];
        let err = s.validate().unwrap_err();
        match err {
            Error::InvalidScenario(problems) => {
                assert!(problems.iter().any(|p| p.contains("predictability.lambdas[1]")), "{problems:?}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn duplicate_agent_ids_listed() {
        let mut s = builtin::load("swap_symmetric").unwrap();
        s.agents[1].id = s.agents[0].id;
        let err = s.validate().unwrap_err();
        match err {
            Error::InvalidScenario(problems) => {
                assert!(problems.iter().any(|p| p.contains("duplicate id")), "{problems:?}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn all_problems_reported_together() {
        let mut s = builtin::load("swap_symmetric").unwrap();
        s.dt = -1.0;
        s.predictability.gamma = 2.0;
        s.planner.samples = 1;
        let err = s.validate().unwrap_err();
        match err {
            Error::InvalidScenario(problems) => {
                assert!(problems.len() >= 3, "expected all problems listed, got {problems:?}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn unknown_keys_rejected_at_parse() {
        let mut v: serde_json::Value =
            serde_json::from_str(builtin::SWAP_SYMMETRIC).unwrap();
        v.as_object_mut().unwrap().insert("mystery".into(), 1.into());
        let text = serde_json::to_string(&v).unwrap();
        assert!(ScenarioFile::from_json(&text).is_err());
    }

    #[test]
    fn seeds_resolve_count_and_list() {
        let by_count = SeedsSpec { count: Some(3), list: None };
        assert_eq!(by_count.resolve(), vec![0, 1, 2]);
        let by_list = SeedsSpec { count: None, list: Some(vec![7, 9]) };
        assert_eq!(by_list.resolve(), vec![7, 9]);
    }

    #[test]
    fn goal_conditioned_requires_single_agent() {
        let mut s = builtin::load("two_goal_observer").unwrap();
        let mut extra = s.agents[0].clone();
        extra.id = 99;
        extra.goal = [0.0, 30.0];
        s.agents.push(extra);
        let err = s.validate().unwrap_err();
        match err {
            Error::InvalidScenario(problems) => {
                assert!(problems.iter().any(|p| p.contains("exactly one agent")), "{problems:?}");
            }
            other => panic!("unexpected error {other}"),
        }
    }
}
