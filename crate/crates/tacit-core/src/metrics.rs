//! Post-hoc metrics over episode logs and batch aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulation::{EpisodeLog, Terminal};
use crate::types::Plan;

/// Average magnitude of the plan update per tick: for consecutive plans,
/// sum the positional distance over all K+1 horizon states, then average
/// over the T-1 consecutive pairs.
pub fn planning_effort(plans: &[Plan]) -> Result<f64> {
    if plans.len() < 2 {
        return Err(Error::invalid_input("planning effort needs at least two plans"));
    }
    let horizon = plans[0].horizon();
    if plans.iter().any(|p| p.horizon() != horizon) {
        return Err(Error::invalid_input("planning effort needs equal plan horizons"));
    }
    let mut total = 0.0;
    for pair in plans.windows(2) {
        for (a, b) in pair[0].states.iter().zip(&pair[1].states) {
            total += (a.position() - b.position()).norm();
        }
    }
    Ok(total / (plans.len() - 1) as f64)
}

/// Mean |a| over every applied control of every agent.
pub fn mean_abs_accel(log: &EpisodeLog) -> f64 {
    mean_over_applied(log, |u| u.a.abs())
}

/// Mean |omega| over every applied control of every agent.
pub fn mean_abs_angular(log: &EpisodeLog) -> f64 {
    mean_over_applied(log, |u| u.omega.abs())
}

fn mean_over_applied(log: &EpisodeLog, f: impl Fn(&crate::types::Control) -> f64) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for rec in &log.ticks {
        for u in rec.applied.values() {
            total += f(u);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Plan-update magnitude, averaged over agents.
    pub planning_effort: f64,
    pub mean_abs_accel: f64,
    pub mean_abs_angular: f64,
    /// Distance traveled, averaged over agents.
    pub distance_traveled: f64,
    pub collided: bool,
    pub deadlocked: bool,
    pub ticks_to_done: u64,
}

/// All metrics are pure functions of the log; recomputing them from a
/// stored log reproduces the stored values exactly.
pub fn compute_metrics(log: &EpisodeLog) -> Result<EpisodeMetrics> {
    let agent_ids: Vec<u64> = log.final_states.keys().copied().collect();

    let mut pe_sum = 0.0;
    let mut dist_sum = 0.0;
    for id in &agent_ids {
        let plans: Vec<Plan> = log
            .ticks
            .iter()
            .filter_map(|rec| rec.plans.get(id).cloned())
            .collect();
        if plans.len() >= 2 {
            pe_sum += planning_effort(&plans)?;
        }

        let mut positions: Vec<nalgebra::Vector2<f64>> = log
            .ticks
            .iter()
            .filter_map(|rec| rec.snapshot.agent(*id).map(|a| a.state.position()))
            .collect();
        positions.push(log.final_states[id].position());
        dist_sum += positions.windows(2).map(|w| (w[1] - w[0]).norm()).sum::<f64>();
    }
    let n = agent_ids.len().max(1) as f64;

    Ok(EpisodeMetrics {
        planning_effort: pe_sum / n,
        mean_abs_accel: mean_abs_accel(log),
        mean_abs_angular: mean_abs_angular(log),
        distance_traveled: dist_sum / n,
        collided: matches!(log.terminal, Terminal::Collision { .. }),
        deadlocked: log.terminal == Terminal::Deadlock,
        ticks_to_done: log.ticks.len() as u64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    MeanStd { mean, std }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub runs: usize,
    pub planning_effort: MeanStd,
    pub mean_abs_accel: MeanStd,
    pub mean_abs_angular: MeanStd,
    pub distance_traveled: MeanStd,
    pub ticks_to_done: MeanStd,
    pub deadlock_pct: f64,
    pub collision_pct: f64,
}

/// Mean and sample standard deviation per metric, plus deadlock and
/// collision rates as percentages of runs.
pub fn aggregate(runs: &[EpisodeMetrics]) -> Result<AggregateSummary> {
    if runs.is_empty() {
        return Err(Error::invalid_input("aggregate needs at least one run"));
    }
    let collect = |f: fn(&EpisodeMetrics) -> f64| -> Vec<f64> { runs.iter().map(f).collect() };
    Ok(AggregateSummary {
        runs: runs.len(),
        planning_effort: mean_std(&collect(|m| m.planning_effort)),
        mean_abs_accel: mean_std(&collect(|m| m.mean_abs_accel)),
        mean_abs_angular: mean_std(&collect(|m| m.mean_abs_angular)),
        distance_traveled: mean_std(&collect(|m| m.distance_traveled)),
        ticks_to_done: mean_std(&collect(|m| m.ticks_to_done as f64)),
        deadlock_pct: 100.0 * runs.iter().filter(|m| m.deadlocked).count() as f64 / runs.len() as f64,
        collision_pct: 100.0 * runs.iter().filter(|m| m.collided).count() as f64 / runs.len() as f64,
    })
}
