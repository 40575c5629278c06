//! MPPI planner: perturb a nominal control sequence, roll out and cost the
//! samples, fuse them by exponentiated-cost weights, warm-start the next
//! tick with the time-shifted optimum.
//!
//! Per-sample evaluation is embarrassingly parallel; every sample draws from
//! its own keyed stream and the weight fusion reduces an index-ordered
//! vector, so the parallel and sequential paths agree bit for bit.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsModel;
use crate::error::{Error, Result};
use crate::exec;
use crate::gaussian::GaussianMixtureDist;
use crate::prediction::{PredictionSet, WorldSnapshot};
use crate::predictability::{predictability_cost_states, PredictabilityConfig};
use crate::rng::{RngContext, RngStream};
use crate::types::{AgentId, Control, Plan, State};

/// Multiplier on `w_col` charged per step whose predicted mixture mean
/// already overlaps the ego; dominates any probability estimate, which
/// tops out at `w_col` per step.
pub const HARD_OVERLAP_FACTOR: f64 = 10.0;

/// Predicted mixtures whose every component mean lies beyond this many
/// standard deviations (plus the radii sum) cannot contribute a hit at
/// f64-visible probability, so sampling is skipped.
const TAIL_CUTOFF_SIGMA: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Horizon length K.
    pub horizon: usize,
    /// Sample count M.
    pub samples: usize,
    /// Sampling noise variance on acceleration.
    pub noise_var_a: f64,
    /// Sampling noise variance on angular rate.
    pub noise_var_omega: f64,
    /// Weight temperature of the importance weights.
    pub lambda_mppi: f64,
    pub w_goal: f64,
    pub w_accel: f64,
    pub w_omega: f64,
    /// Collision penalty weight.
    pub w_col: f64,
    /// Draws per (step, obstacle) for the collision probability estimate.
    pub n_col: usize,
    /// Reference-path tracking weight; only used by agents that carry a
    /// reference path.
    #[serde(default)]
    pub w_track: f64,
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.horizon == 0 {
            problems.push("horizon must be >= 1".to_string());
        }
        if self.samples < 2 {
            problems.push("samples must be >= 2".to_string());
        }
        if !(self.noise_var_a > 0.0) || !(self.noise_var_omega > 0.0) {
            problems.push("noise variances must be > 0".to_string());
        }
        if !(self.lambda_mppi > 0.0) {
            problems.push("lambda_mppi must be > 0".to_string());
        }
        if self.w_goal < 0.0 || self.w_accel < 0.0 || self.w_omega < 0.0 || self.w_col < 0.0 {
            problems.push("cost weights must be >= 0".to_string());
        }
        if self.n_col == 0 {
            problems.push("n_col must be >= 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidScenario(problems))
        }
    }
}

/// Per-agent stage cost: quadratic goal attraction, control effort, and
/// optional reference-path tracking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCostSpec {
    #[serde(with = "crate::gaussian::serde_vec2")]
    pub goal: Vector2<f64>,
    pub w_goal: f64,
    pub w_accel: f64,
    pub w_omega: f64,
    pub reference_path: Option<ReferencePath>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePath {
    pub points: Vec<(f64, f64)>,
    pub weight: f64,
}

impl ReferencePath {
    fn distance_squared(&self, p: Vector2<f64>) -> f64 {
        let mut best = f64::INFINITY;
        for w in self.points.windows(2) {
            let a = Vector2::new(w[0].0, w[0].1);
            let b = Vector2::new(w[1].0, w[1].1);
            let ab = b - a;
            let len2 = ab.norm_squared();
            let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
            best = best.min((p - (a + t * ab)).norm_squared());
        }
        if self.points.len() == 1 {
            best = (p - Vector2::new(self.points[0].0, self.points[0].1)).norm_squared();
        }
        best
    }
}

impl StageCostSpec {
    pub fn new(cfg: &PlannerConfig, goal: Vector2<f64>, reference_path: Option<ReferencePath>) -> Self {
        Self {
            goal,
            w_goal: cfg.w_goal,
            w_accel: cfg.w_accel,
            w_omega: cfg.w_omega,
            reference_path,
        }
    }

    /// Stage cost over a rolled-out trajectory: states k=1..K plus the
    /// control sequence. The fixed initial state carries no cost.
    pub fn evaluate(&self, traj: &[State], controls: &[Control]) -> f64 {
        let mut cost = 0.0;
        for s in &traj[1..] {
            let pos = s.position();
            cost += self.w_goal * (pos - self.goal).norm_squared();
            if let Some(path) = &self.reference_path {
                cost += path.weight * path.distance_squared(pos);
            }
        }
        for u in controls {
            cost += self.w_accel * u.a * u.a + self.w_omega * u.omega * u.omega;
        }
        cost
    }
}

/// One other agent's predicted occupancy along the horizon.
#[derive(Debug, Clone, Copy)]
pub struct ObstaclePrediction<'a> {
    pub radius: f64,
    pub steps: &'a [GaussianMixtureDist],
}

/// Fraction of `n` draws from the mixture landing within `r_sum` of `pos`.
pub fn collision_probability_estimate(
    pos: Vector2<f64>,
    mix: &GaussianMixtureDist,
    r_sum: f64,
    n: usize,
    rng: &mut RngStream,
) -> f64 {
    let r2 = r_sum * r_sum;
    let mut hits = 0usize;
    for _ in 0..n {
        if (mix.sample(rng) - pos).norm_squared() < r2 {
            hits += 1;
        }
    }
    hits as f64 / n as f64
}

/// Soft collision penalty: w_col times the summed per-step collision
/// probability against every other agent's predicted mixture, plus a hard
/// term whenever a predicted mean itself overlaps the ego disc.
pub fn collision_penalty(
    traj: &[State],
    others: &[ObstaclePrediction],
    ego_radius: f64,
    cfg: &PlannerConfig,
    rng: &mut RngStream,
) -> f64 {
    let mut total = 0.0;
    for other in others {
        let r_sum = ego_radius + other.radius;
        let r2 = r_sum * r_sum;
        for (s, mix) in traj[1..].iter().zip(other.steps) {
            let pos = s.position();
            if (mix.mean() - pos).norm_squared() < r2 {
                total += cfg.w_col * HARD_OVERLAP_FACTOR;
            }
            let all_far = mix.components().iter().all(|(w, c)| {
                *w == 0.0 || {
                    let cutoff = r_sum + TAIL_CUTOFF_SIGMA * c.max_std();
                    (c.mean() - pos).norm_squared() > cutoff * cutoff
                }
            });
            if all_far {
                continue;
            }
            total += cfg.w_col * collision_probability_estimate(pos, mix, r_sum, cfg.n_col, rng);
        }
    }
    total
}

/// Cost of one rollout, broken into its terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostTerms {
    pub stage: f64,
    pub collision: f64,
    pub predictability: f64,
    pub kl_evals: u64,
}

impl CostTerms {
    pub fn total(&self) -> f64 {
        self.stage + self.collision + self.predictability
    }
}

/// Full rollout cost: stage + collision + discounted predictability of the
/// ego's own prediction.
#[allow(clippy::too_many_arguments)]
pub fn total_cost(
    traj: &[State],
    controls: &[Control],
    stage: &StageCostSpec,
    others: &[ObstaclePrediction],
    ego_pred: &[GaussianMixtureDist],
    ego_radius: f64,
    plan_cov: Matrix2<f64>,
    pcfg: &PredictabilityConfig,
    cfg: &PlannerConfig,
    rng: &mut RngStream,
) -> Result<CostTerms> {
    let stage_cost = stage.evaluate(traj, controls);
    let collision = collision_penalty(traj, others, ego_radius, cfg, rng);
    let (predictability, kl_evals) =
        predictability_cost_states(traj, plan_cov, ego_pred, pcfg, rng)?;
    let terms = CostTerms { stage: stage_cost, collision, predictability, kl_evals };
    if !terms.total().is_finite() {
        return Err(Error::invalid_input("non-finite rollout cost"));
    }
    Ok(terms)
}

/// Perturb the nominal sequence with Gaussian noise, clamped to the input
/// box. Sample 0 is the unperturbed nominal.
pub fn sample_controls(
    nominal: &[Control],
    cfg: &PlannerConfig,
    model: &DynamicsModel,
    rng: &mut RngStream,
) -> Vec<Vec<Control>> {
    let std_a = cfg.noise_var_a.sqrt();
    let std_omega = cfg.noise_var_omega.sqrt();
    let mut samples = Vec::with_capacity(cfg.samples);
    samples.push(nominal.to_vec());
    for _ in 1..cfg.samples {
        let seq = nominal
            .iter()
            .map(|u| {
                let perturbed = Control::new(
                    u.a + std_a * rng.normal(),
                    u.omega + std_omega * rng.normal(),
                );
                model.clamp_control(perturbed).0
            })
            .collect();
        samples.push(seq);
    }
    samples
}

/// Importance weights: w_m proportional to exp(-(J_m - J_min) / lambda),
/// normalized to sum to one.
pub fn mppi_weights(costs: &[f64], lambda_mppi: f64) -> Result<Vec<f64>> {
    if costs.is_empty() {
        return Err(Error::invalid_input("no costs to weight"));
    }
    if costs.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid_input("non-finite cost in weight computation"));
    }
    let min = costs.iter().cloned().fold(f64::INFINITY, f64::min);
    let unnorm: Vec<f64> = costs.iter().map(|c| (-(c - min) / lambda_mppi).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    Ok(unnorm.iter().map(|w| w / total).collect())
}

/// Weighted sum of the sampled control sequences. Box bounds survive the
/// convex combination.
pub fn mppi_update(samples: &[Vec<Control>], weights: &[f64]) -> Result<Vec<Control>> {
    if samples.len() != weights.len() || samples.is_empty() {
        return Err(Error::invalid_input("samples and weights must align"));
    }
    let horizon = samples[0].len();
    let mut fused = vec![Control::ZERO; horizon];
    for (seq, w) in samples.iter().zip(weights) {
        for (f, u) in fused.iter_mut().zip(seq) {
            f.a += w * u.a;
            f.omega += w * u.omega;
        }
    }
    Ok(fused)
}

/// Drop the executed first control and repeat the last one.
pub fn warm_start_shift(u_star: &[Control]) -> Vec<Control> {
    let mut shifted: Vec<Control> = u_star[1..].to_vec();
    shifted.push(*u_star.last().expect("warm start needs K >= 1"));
    shifted
}

/// Everything a planning call needs besides the nominal sequence and the
/// rng keys.
#[derive(Debug, Clone, Copy)]
pub struct PlanContext<'a> {
    pub ego: AgentId,
    pub snap: &'a WorldSnapshot,
    pub preds: &'a PredictionSet,
    pub model: &'a DynamicsModel,
    pub stage: &'a StageCostSpec,
    pub planner: &'a PlannerConfig,
    pub predictability: &'a PredictabilityConfig,
    pub plan_cov: Matrix2<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Minimum sampled rollout cost this tick.
    pub best_sample_cost: f64,
    /// Cost terms of the returned (fused) plan, evaluated on a dedicated
    /// stream so they never perturb sample evaluation.
    pub plan_cost: CostTerms,
    /// KL evaluations across all samples plus the diagnostic pass. Zero
    /// whenever lambda is zero.
    pub kl_evals: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOutcome {
    pub plan: Plan,
    /// Time-shifted optimum, the nominal for the next tick.
    pub next_nominal: Vec<Control>,
    pub diagnostics: Diagnostics,
}

fn gather_obstacles<'a>(
    ctx: &PlanContext<'a>,
) -> Result<(State, f64, Vec<ObstaclePrediction<'a>>, &'a [GaussianMixtureDist])> {
    let ego = ctx
        .snap
        .agent(ctx.ego)
        .ok_or_else(|| Error::invalid_input(format!("ego agent {} not in snapshot", ctx.ego)))?;
    let ego_pred = ctx
        .preds
        .for_agent(ctx.ego)
        .ok_or_else(|| Error::invalid_input(format!("no prediction for ego agent {}", ctx.ego)))?;
    let mut others = Vec::with_capacity(ctx.snap.agents.len() - 1);
    for agent in &ctx.snap.agents {
        if agent.id == ctx.ego {
            continue;
        }
        let steps = ctx.preds.for_agent(agent.id).ok_or_else(|| {
            Error::invalid_input(format!("no prediction for agent {}", agent.id))
        })?;
        others.push(ObstaclePrediction { radius: agent.radius, steps });
    }
    Ok((ego.state, ego.radius, others, ego_pred))
}

fn plan_impl(ctx: &PlanContext, nominal: &[Control], rng: RngContext, parallel: bool) -> Result<PlanOutcome> {
    let cfg = ctx.planner;
    cfg.validate()?;
    if nominal.len() != cfg.horizon {
        return Err(Error::invalid_input(format!(
            "nominal has {} controls, expected horizon {}",
            nominal.len(),
            cfg.horizon
        )));
    }
    if ctx.preds.horizon < cfg.horizon {
        return Err(Error::invalid_input(format!(
            "prediction horizon {} shorter than planning horizon {}",
            ctx.preds.horizon, cfg.horizon
        )));
    }
    let (x0, ego_radius, others, ego_pred) = gather_obstacles(ctx)?;

    let samples = sample_controls(nominal, cfg, ctx.model, &mut rng.noise_stream());

    let evaluate = |m: usize| -> Result<CostTerms> {
        let mut stream = rng.sample_stream(m as u64);
        let mut traj = Vec::with_capacity(cfg.horizon + 1);
        ctx.model.rollout_into(x0, &samples[m], &mut traj)?;
        total_cost(
            &traj,
            &samples[m],
            ctx.stage,
            &others,
            ego_pred,
            ego_radius,
            ctx.plan_cov,
            ctx.predictability,
            cfg,
            &mut stream,
        )
    };

    let evaluated: Vec<Result<CostTerms>> = if parallel {
        exec::map_indexed(cfg.samples, evaluate)
    } else {
        exec::map_indexed_seq(cfg.samples, evaluate)
    };
    let mut costs = Vec::with_capacity(cfg.samples);
    let mut kl_evals = 0u64;
    for term in evaluated {
        let term = term?;
        kl_evals += term.kl_evals;
        costs.push(term.total());
    }

    let weights = mppi_weights(&costs, cfg.lambda_mppi)?;
    let u_star = mppi_update(&samples, &weights)?;
    let states = ctx.model.rollout(x0, &u_star)?;

    let mut diag_stream = rng.diag_stream();
    let plan_cost = total_cost(
        &states,
        &u_star,
        ctx.stage,
        &others,
        ego_pred,
        ego_radius,
        ctx.plan_cov,
        ctx.predictability,
        cfg,
        &mut diag_stream,
    )?;
    kl_evals += plan_cost.kl_evals;

    let next_nominal = warm_start_shift(&u_star);
    let plan = Plan::new(ctx.model, states, u_star, ctx.plan_cov)?;
    let best_sample_cost = costs.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(PlanOutcome {
        plan,
        next_nominal,
        diagnostics: Diagnostics { best_sample_cost, plan_cost, kl_evals },
    })
}

/// One MPPI planning call. Uses the data-parallel sample loop when the
/// `parallel` feature is enabled.
pub fn plan(ctx: &PlanContext, nominal: &[Control], rng: RngContext) -> Result<PlanOutcome> {
    plan_impl(ctx, nominal, rng, true)
}

/// Sequential reference implementation; bit-identical to [`plan`].
pub fn plan_sequential(ctx: &PlanContext, nominal: &[Control], rng: RngContext) -> Result<PlanOutcome> {
    plan_impl(ctx, nominal, rng, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::GaussianDist;
    use crate::prediction::{predict_constant_velocity, AgentSnapshot};
    use crate::predictability::KlMode;
    use crate::rng::StreamKey;
    use std::collections::BTreeMap;

    fn model() -> DynamicsModel {
        DynamicsModel::unicycle(0.1, 2.0, 2.0, 2.0).unwrap()
    }

    fn config() -> PlannerConfig {
        PlannerConfig {
            horizon: 12,
            samples: 64,
            noise_var_a: 0.4,
            noise_var_omega: 0.4,
            lambda_mppi: 20.0,
            w_goal: 1.0,
            w_accel: 0.05,
            w_omega: 0.05,
            w_col: 1000.0,
            n_col: 8,
            w_track: 0.0,
        }
    }

    fn pcfg(lambda: f64) -> PredictabilityConfig {
        PredictabilityConfig::new(lambda, 0.6, 16, KlMode::ClosedForm).unwrap()
    }

    fn free_space_snapshot(x0: State) -> WorldSnapshot {
        WorldSnapshot::new(
            0,
            vec![AgentSnapshot {
                id: 0,
                state: x0,
                prev_state: x0,
                radius: 0.4,
                goal: Vector2::new(10.0, 0.0),
            }],
        )
        .unwrap()
    }

    fn stationary_ego_pred(pos: Vector2<f64>, horizon: usize, var: f64) -> Vec<GaussianMixtureDist> {
        (0..horizon)
            .map(|_| GaussianMixtureDist::single(GaussianDist::isotropic(pos, var).unwrap()))
            .collect()
    }

    #[test]
    fn sample_zero_is_the_exact_nominal() {
        let nominal = vec![Control::new(0.3, -0.1); 12];
        let mut rng = RngStream::new(StreamKey::new(1, 0, 0, u64::MAX));
        let samples = sample_controls(&nominal, &config(), &model(), &mut rng);
        assert_eq!(samples.len(), 64);
        assert_eq!(samples[0], nominal);
    }

    #[test]
    fn vanishing_noise_collapses_samples_onto_nominal() {
        let mut cfg = config();
        cfg.noise_var_a = 1e-30;
        cfg.noise_var_omega = 1e-30;
        let nominal = vec![Control::new(0.5, 0.2); 12];
        let mut rng = RngStream::new(StreamKey::new(2, 0, 0, u64::MAX));
        for seq in sample_controls(&nominal, &cfg, &model(), &mut rng) {
            for (u, n) in seq.iter().zip(&nominal) {
                assert!((u.a - n.a).abs() < 1e-12);
                assert!((u.omega - n.omega).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_respects_bounds() {
        let nominal = vec![Control::new(1.9, -1.9); 12];
        let key = StreamKey::new(3, 5, 1, u64::MAX);
        let a = sample_controls(&nominal, &config(), &model(), &mut RngStream::new(key));
        let b = sample_controls(&nominal, &config(), &model(), &mut RngStream::new(key));
        assert_eq!(a, b);
        let m = model();
        for seq in &a {
            for u in seq {
                assert!(u.a.abs() <= m.a_max && u.omega.abs() <= m.omega_max);
            }
        }
    }

    #[test]
    fn no_other_agents_no_collision_penalty() {
        let traj = model().rollout(State::new(0.0, 0.0, 0.0, 1.0).unwrap(), &vec![Control::ZERO; 5]).unwrap();
        let mut rng = RngStream::new(StreamKey::new(4, 0, 0, 0));
        assert_eq!(collision_penalty(&traj, &[], 0.4, &config(), &mut rng), 0.0);
    }

    #[test]
    fn far_mixture_contributes_exactly_zero() {
        let traj = model().rollout(State::new(0.0, 0.0, 0.0, 1.0).unwrap(), &vec![Control::ZERO; 5]).unwrap();
        let steps = stationary_ego_pred(Vector2::new(100.0, 100.0), 5, 1.0);
        let others = [ObstaclePrediction { radius: 0.4, steps: &steps }];
        let mut rng = RngStream::new(StreamKey::new(5, 0, 0, 0));
        assert_eq!(collision_penalty(&traj, &others, 0.4, &config(), &mut rng), 0.0);
    }

    #[test]
    fn collision_probability_through_unit_mode_matches_chi_square() {
        // P(|z| < 1) for a standard bivariate normal is 1 - exp(-1/2).
        let mix = GaussianMixtureDist::single(GaussianDist::isotropic(Vector2::zeros(), 1.0).unwrap());
        let expected = 1.0 - (-0.5f64).exp();
        let n = 4096;
        let mut rng = RngStream::new(StreamKey::new(6, 0, 0, 0));
        let est = collision_probability_estimate(Vector2::zeros(), &mix, 1.0, n, &mut rng);
        let se = (expected * (1.0 - expected) / n as f64).sqrt();
        assert!((est - expected).abs() <= 3.0 * se, "est {est}, expected {expected}");
    }

    #[test]
    fn overlapping_mean_triggers_hard_penalty() {
        let x0 = State::new(0.0, 0.0, 0.0, 0.0).unwrap();
        let traj = model().rollout(x0, &vec![Control::ZERO; 3]).unwrap();
        let steps = stationary_ego_pred(Vector2::zeros(), 3, 1.0);
        let others = [ObstaclePrediction { radius: 0.4, steps: &steps }];
        let cfg = config();
        let mut rng = RngStream::new(StreamKey::new(7, 0, 0, 0));
        let penalty = collision_penalty(&traj, &others, 0.4, &cfg, &mut rng);
        assert!(penalty >= cfg.w_col * HARD_OVERLAP_FACTOR * 3.0);
    }

    #[test]
    fn weights_equal_costs_give_uniform() {
        let w = mppi_weights(&[3.0, 3.0, 3.0, 3.0], 1.0).unwrap();
        for wi in &w {
            assert!((wi - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn weights_hand_value_for_two_costs() {
        let w = mppi_weights(&[0.0, 1.0], 1.0).unwrap();
        let e = (-1.0f64).exp();
        assert!((w[0] - 1.0 / (1.0 + e)).abs() < 1e-12);
        assert!((w[1] - e / (1.0 + e)).abs() < 1e-12);
        assert!((w[0] - 0.7311).abs() < 1e-4);
        assert!((w[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn weights_concentrate_on_argmin_as_temperature_vanishes() {
        let w = mppi_weights(&[0.5, 0.6, 2.0], 1e-6).unwrap();
        assert!(w[0] > 1.0 - 1e-12);
    }

    #[test]
    fn weights_sum_to_one_and_prefer_min() {
        let w = mppi_weights(&[5.0, 1.0, 3.0], 2.0).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w[1] > w[2] && w[2] > w[0]);
    }

    #[test]
    fn weights_invariant_to_constant_cost_shift() {
        // Exactly representable values keep the shifted subtraction exact,
        // so the weights must match bit for bit.
        let costs = [1.5, 2.5, 4.0];
        let shifted = [4.5, 5.5, 7.0];
        let a = mppi_weights(&costs, 0.7).unwrap();
        let b = mppi_weights(&shifted, 0.7).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn update_returns_sample_with_unit_weight() {
        let samples = vec![vec![Control::new(1.0, 0.0); 3], vec![Control::new(-1.0, 0.5); 3]];
        let fused = mppi_update(&samples, &[0.0, 1.0]).unwrap();
        assert_eq!(fused, samples[1]);
    }

    #[test]
    fn update_of_identical_samples_is_identity() {
        let samples = vec![vec![Control::new(0.3, 0.1); 4]; 4];
        let fused = mppi_update(&samples, &[0.25; 4]).unwrap();
        assert_eq!(fused, samples[0]);
    }

    #[test]
    fn update_convex_combination_hand_value() {
        let samples = vec![vec![Control::new(0.0, 0.0); 3], vec![Control::new(2.0, 0.0); 3]];
        let fused = mppi_update(&samples, &[0.25, 0.75]).unwrap();
        for u in &fused {
            assert!((u.a - 1.5).abs() < 1e-15);
        }
    }

    #[test]
    fn warm_start_shift_definition() {
        let u = vec![Control::new(1.0, 0.0), Control::new(2.0, 0.0), Control::new(3.0, 0.0)];
        let shifted = warm_start_shift(&u);
        assert_eq!(shifted, vec![Control::new(2.0, 0.0), Control::new(3.0, 0.0), Control::new(3.0, 0.0)]);
    }

    #[test]
    fn warm_start_shift_fixes_constant_sequences() {
        let u = vec![Control::new(0.5, -0.5); 6];
        assert_eq!(warm_start_shift(&u), u);
    }

    #[test]
    fn repeated_shifts_converge_to_last_control() {
        let mut u = vec![Control::new(1.0, 0.1), Control::new(2.0, 0.2), Control::new(3.0, 0.3)];
        for _ in 0..u.len() {
            u = warm_start_shift(&u);
        }
        assert_eq!(u, vec![Control::new(3.0, 0.3); 3]);
    }

    fn plan_once(lambda: f64, seed: u64, ego_pred_override: Option<Vec<GaussianMixtureDist>>) -> PlanOutcome {
        let m = model();
        let cfg = config();
        let x0 = State::new(0.0, 0.0, 0.0, 0.0).unwrap();
        let snap = free_space_snapshot(x0);
        let mut preds = predict_constant_velocity(&snap, cfg.horizon, m.dt, Matrix2::identity()).unwrap();
        if let Some(p) = ego_pred_override {
            preds.per_agent.insert(0, p);
        }
        let stage = StageCostSpec::new(&cfg, Vector2::new(10.0, 0.0), None);
        let pc = pcfg(lambda);
        let ctx = PlanContext {
            ego: 0,
            snap: &snap,
            preds: &preds,
            model: &m,
            stage: &stage,
            planner: &cfg,
            predictability: &pc,
            plan_cov: Matrix2::from_diagonal_element(0.05),
        };
        let nominal = vec![Control::ZERO; cfg.horizon];
        plan(&ctx, &nominal, RngContext::new(seed, 0, 0)).unwrap()
    }

    #[test]
    fn free_space_plans_move_toward_goal() {
        let goal = Vector2::new(10.0, 0.0);
        for seed in 0..20u64 {
            let outcome = plan_once(0.0, seed, None);
            let first = outcome.plan.states[0].position();
            let last = outcome.plan.states.last().unwrap().position();
            assert!(
                (last - goal).norm() < (first - goal).norm(),
                "seed {seed} made no progress"
            );
        }
    }

    #[test]
    fn dominant_predictability_pins_the_plan_to_a_stationary_prediction() {
        let cfg = config();
        let stay = stationary_ego_pred(Vector2::zeros(), cfg.horizon, 0.05);
        for seed in 0..5u64 {
            let free = plan_once(0.0, seed, None);
            let pinned = plan_once(1e6, seed, Some(stay.clone()));
            let disp = |o: &PlanOutcome| {
                o.plan.states.iter().map(|s| s.position().norm()).sum::<f64>()
                    / o.plan.states.len() as f64
            };
            assert!(
                disp(&pinned) < 0.1 * disp(&free),
                "seed {seed}: pinned {} vs free {}",
                disp(&pinned),
                disp(&free)
            );
        }
    }

    #[test]
    fn plan_is_deterministic_per_seed() {
        let a = plan_once(2.0, 9, None);
        let b = plan_once(2.0, 9, None);
        assert_eq!(a.plan, b.plan);
        assert_eq!(a.next_nominal, b.next_nominal);
        assert_eq!(a.diagnostics, b.diagnostics);
    }

    #[test]
    fn parallel_and_sequential_plans_agree_exactly() {
        let m = model();
        let cfg = config();
        let x0 = State::new(0.0, 0.0, 0.3, 0.5).unwrap();
        let mut snap = free_space_snapshot(x0);
        snap.agents.push(AgentSnapshot {
            id: 1,
            state: State::new(4.0, 0.5, std::f64::consts::PI, 1.0).unwrap(),
            prev_state: State::new(4.0, 0.5, std::f64::consts::PI, 1.0).unwrap(),
            radius: 0.4,
            goal: Vector2::new(-5.0, 0.0),
        });
        let snap = WorldSnapshot::new(0, snap.agents).unwrap();
        let preds = predict_constant_velocity(&snap, cfg.horizon, m.dt, Matrix2::identity()).unwrap();
        let stage = StageCostSpec::new(&cfg, Vector2::new(10.0, 0.0), None);
        let pc = pcfg(1.5);
        let ctx = PlanContext {
            ego: 0,
            snap: &snap,
            preds: &preds,
            model: &m,
            stage: &stage,
            planner: &cfg,
            predictability: &pc,
            plan_cov: Matrix2::from_diagonal_element(0.05),
        };
        let nominal = vec![Control::ZERO; cfg.horizon];
        let rng = RngContext::new(77, 3, 0);
        let par = plan(&ctx, &nominal, rng).unwrap();
        let seq = plan_sequential(&ctx, &nominal, rng).unwrap();
        assert_eq!(par.plan, seq.plan);
        assert_eq!(par.diagnostics, seq.diagnostics);
        for (a, b) in par.plan.states.iter().zip(&seq.plan.states) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.y.to_bits(), b.y.to_bits());
        }
    }

    #[test]
    fn zero_lambda_never_evaluates_kl() {
        let outcome = plan_once(0.0, 4, None);
        assert_eq!(outcome.diagnostics.kl_evals, 0);
        let outcome = plan_once(2.0, 4, None);
        assert!(outcome.diagnostics.kl_evals > 0);
    }

    #[test]
    fn returned_plan_states_are_the_rollout_of_its_controls() {
        let outcome = plan_once(1.0, 12, None);
        let m = model();
        let again = m.rollout(outcome.plan.states[0], &outcome.plan.controls).unwrap();
        assert_eq!(outcome.plan.states, again);
    }

    #[test]
    fn best_sample_cost_nonincreasing_under_elite_feedback() {
        // Static scene, deterministic costs (lambda = 0, no other agents):
        // feeding the best sample back as the nominal makes the recorded
        // best cost monotonically non-increasing, because sample 0 retains
        // it unperturbed.
        let m = model();
        let cfg = config();
        let x0 = State::new(0.0, 0.0, 0.0, 0.0).unwrap();
        let stage = StageCostSpec::new(&cfg, Vector2::new(10.0, 0.0), None);
        let mut nominal = vec![Control::ZERO; cfg.horizon];
        let mut best_costs = Vec::new();
        for tick in 0..25u64 {
            let rng = RngContext::new(42, tick, 0);
            let samples = sample_controls(&nominal, &cfg, &m, &mut rng.noise_stream());
            let costs: Vec<f64> = samples
                .iter()
                .map(|seq| {
                    let traj = m.rollout(x0, seq).unwrap();
                    stage.evaluate(&traj, seq)
                })
                .collect();
            let (best_idx, best) = costs
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap();
            best_costs.push(*best);
            nominal = samples[best_idx].clone();
        }
        for w in best_costs.windows(2) {
            assert!(w[1] <= w[0], "best cost increased: {} -> {}", w[0], w[1]);
        }
        assert!(best_costs.last().unwrap() < &best_costs[0]);
    }
}
