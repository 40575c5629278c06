//! Predictability costing: KL divergence between the plan distribution and
//! the shared prediction, discounted along the horizon, plus a free-energy
//! estimator used to verify that stage-cost-plus-KL upper-bounds it.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{GaussianDist, GaussianMixtureDist};
use crate::rng::RngStream;
use crate::types::Plan;

/// How the per-step KL term is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlMode {
    /// Exact Gaussian-Gaussian KL when the prediction has one component;
    /// Monte-Carlo otherwise.
    ClosedForm,
    /// Always estimate by sampling from the plan distribution.
    MonteCarlo,
    /// Narrow-plan approximation: -log p(x_k) - H(q). Exact in the limit of
    /// a plan covariance much tighter than the prediction.
    Delta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictabilityConfig {
    /// Weight of the predictability term (lambda in the stage cost).
    pub lambda: f64,
    /// Horizon discount, in [0, 1].
    pub gamma: f64,
    /// Monte-Carlo sample count per KL evaluation.
    pub n_kl_samples: usize,
    pub kl_mode: KlMode,
}

impl PredictabilityConfig {
    pub fn new(lambda: f64, gamma: f64, n_kl_samples: usize, kl_mode: KlMode) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::invalid_input(format!("lambda must be >= 0, got {lambda}")));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::invalid_input(format!("gamma must be in [0, 1], got {gamma}")));
        }
        if n_kl_samples == 0 {
            return Err(Error::invalid_input("n_kl_samples must be >= 1"));
        }
        Ok(Self { lambda, gamma, n_kl_samples, kl_mode })
    }
}

/// Closed-form KL(q || p) for 2D Gaussians:
/// 0.5 [ tr(Sp^-1 Sq) + (mp-mq)^T Sp^-1 (mp-mq) - 2 + ln(det Sp / det Sq) ].
pub fn kl_gaussian_gaussian(q: &GaussianDist, p: &GaussianDist) -> f64 {
    let p_inv = p.cov_inv();
    let sq = q.cov();
    let trace = p_inv[(0, 0)] * sq[(0, 0)]
        + p_inv[(0, 1)] * sq[(1, 0)]
        + p_inv[(1, 0)] * sq[(0, 1)]
        + p_inv[(1, 1)] * sq[(1, 1)];
    let d = p.mean() - q.mean();
    let maha = d.dot(&(p_inv * d));
    let kl = 0.5 * (trace + maha - 2.0 + p.ln_det_cov() - q.ln_det_cov());
    kl.max(0.0)
}

/// Monte-Carlo KL(q || p) with x_i drawn from q:
/// (1/n) sum_i [ log q(x_i) - log p(x_i) ].
pub fn kl_gaussian_mixture_mc(
    q: &GaussianDist,
    p: &GaussianMixtureDist,
    n: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid_input("KL estimate needs n >= 1 samples"));
    }
    let mut sum = 0.0;
    for _ in 0..n {
        let x = q.sample(rng);
        sum += q.log_density(x) - p.log_density(x);
    }
    Ok(sum / n as f64)
}

/// Narrow-plan KL approximation: -log p(mu_q) - H(q). Consistent with
/// KL(q || p) as the plan covariance shrinks; the Gaussian entropy term
/// keeps the approximation asymptotically unbiased.
pub fn kl_delta(q: &GaussianDist, p: &GaussianMixtureDist) -> f64 {
    -p.log_density(q.mean()) - q.entropy()
}

/// Per-step KL under the configured mode.
fn kl_step(
    q: &GaussianDist,
    p: &GaussianMixtureDist,
    cfg: &PredictabilityConfig,
    rng: &mut RngStream,
) -> Result<f64> {
    match cfg.kl_mode {
        KlMode::ClosedForm if p.is_single() => Ok(kl_gaussian_gaussian(q, &p.components()[0].1)),
        KlMode::Delta => Ok(kl_delta(q, p)),
        _ => kl_gaussian_mixture_mc(q, p, cfg.n_kl_samples, rng),
    }
}

/// Discounted predictability cost of a plan against the ego prediction:
/// sum_{k=1..K} gamma^k * lambda * KL(q(x_k) || p_k).
///
/// The k=0 term is the current measured state, which no control can change;
/// skipping it drops a plan-independent constant from the objective.
pub fn predictability_cost(
    plan: &Plan,
    pred: &[GaussianMixtureDist],
    cfg: &PredictabilityConfig,
    rng: &mut RngStream,
) -> Result<f64> {
    predictability_cost_counted(plan, pred, cfg, rng).map(|(c, _)| c)
}

/// As [`predictability_cost`], also reporting how many KL evaluations ran.
/// The planner asserts this stays zero when lambda is zero.
pub fn predictability_cost_counted(
    plan: &Plan,
    pred: &[GaussianMixtureDist],
    cfg: &PredictabilityConfig,
    rng: &mut RngStream,
) -> Result<(f64, u64)> {
    if plan.horizon() != pred.len() {
        return Err(Error::invalid_input(format!(
            "plan horizon {} does not match prediction horizon {}",
            plan.horizon(),
            pred.len()
        )));
    }
    predictability_cost_states(&plan.states, plan.step_cov, pred, cfg, rng)
}

/// Hot-loop form over a raw rollout; the planner calls this per sample
/// without constructing a validated [`Plan`].
pub(crate) fn predictability_cost_states(
    states: &[crate::types::State],
    step_cov: nalgebra::Matrix2<f64>,
    pred: &[GaussianMixtureDist],
    cfg: &PredictabilityConfig,
    rng: &mut RngStream,
) -> Result<(f64, u64)> {
    if states.len() != pred.len() + 1 {
        return Err(Error::invalid_input(format!(
            "rollout of {} states does not match prediction horizon {}",
            states.len(),
            pred.len()
        )));
    }
    if cfg.lambda == 0.0 {
        return Ok((0.0, 0));
    }
    let mut total = 0.0;
    let mut evals = 0u64;
    let mut discount = 1.0;
    for (s, p_k) in states[1..].iter().zip(pred) {
        discount *= cfg.gamma;
        if discount == 0.0 {
            break;
        }
        let q_k = GaussianDist::new(s.position(), step_cov)?;
        let kl = kl_step(&q_k, p_k, cfg, rng)?;
        evals += 1;
        total += discount * cfg.lambda * kl;
    }
    Ok((total, evals))
}

/// Monte-Carlo estimate of the control-theoretic free energy
/// F = -lambda log E_{x~p}[ exp(-S(x)/lambda) ],
/// computed as -lambda * (logsumexp_i(-S(x_i)/lambda) - ln n).
pub fn free_energy_mc(
    state_cost: impl Fn(Vector2<f64>) -> f64,
    p: &GaussianMixtureDist,
    lambda: f64,
    n: usize,
    rng: &mut RngStream,
) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::invalid_input("free energy requires lambda > 0"));
    }
    if n == 0 {
        return Err(Error::invalid_input("free energy estimate needs n >= 1 samples"));
    }
    let mut exponents = Vec::with_capacity(n);
    let mut max = f64::NEG_INFINITY;
    for _ in 0..n {
        let x = p.sample(rng);
        let e = -state_cost(x) / lambda;
        if e > max {
            max = e;
        }
        exponents.push(e);
    }
    let sum: f64 = exponents.iter().map(|e| (e - max).exp()).sum();
    let logsumexp = max + sum.ln();
    Ok(-lambda * (logsumexp - (n as f64).ln()))
}
