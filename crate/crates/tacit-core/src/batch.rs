//! Seeded batches: run every (lambda, seed) pair of a scenario, collect
//! metrics, aggregate per lambda, and render byte-stable CSV tables.
//!
//! Output order is fixed by sorting on (lambda, seed), so worker count and
//! completion order never change the bytes.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::exec;
use crate::logio;
use crate::metrics::{aggregate, compute_metrics, AggregateSummary, EpisodeMetrics};
use crate::scenario::{PredictorConfig, ScenarioFile};
use crate::simulation::{run_episode, EpisodeLog, Terminal};

/// Optional replacements applied to a scenario before a batch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub lambdas: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
    pub predictor: Option<PredictorConfig>,
}

impl Overrides {
    pub fn none() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RunStatus {
    Completed(Terminal),
    Failed(String),
}

impl RunStatus {
    pub fn label(&self) -> &'static str {
        match self {
            RunStatus::Completed(t) => t.label(),
            RunStatus::Failed(_) => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub lambda: f64,
    pub seed: u64,
    pub status: RunStatus,
    pub metrics: Option<EpisodeMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub scenario: String,
    /// Sorted by (lambda, seed).
    pub runs: Vec<RunRecord>,
    /// One aggregate per lambda, ascending, over completed runs.
    pub aggregates: Vec<(f64, AggregateSummary)>,
}

impl BatchResult {
    pub fn failed_runs(&self) -> usize {
        self.runs.iter().filter(|r| matches!(r.status, RunStatus::Failed(_))).count()
    }
}

/// Environment variable capping the worker count of batch runs.
pub const MAX_THREADS_ENV: &str = "TACIT_MAX_THREADS";

/// Effective worker count: the requested number (or all cores), capped by
/// `TACIT_MAX_THREADS` when set.
pub fn effective_jobs(requested: Option<usize>) -> usize {
    let mut jobs = requested.unwrap_or_else(|| {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    });
    if let Ok(cap) = std::env::var(MAX_THREADS_ENV) {
        if let Ok(cap) = cap.parse::<usize>() {
            if cap >= 1 {
                jobs = jobs.min(cap);
            }
        }
    }
    jobs.max(1)
}

fn apply_overrides(scenario: &ScenarioFile, overrides: &Overrides) -> ScenarioFile {
    let mut s = scenario.clone();
    if let Some(lambdas) = &overrides.lambdas {
        s.predictability.lambdas = lambdas.clone();
    }
    if let Some(seeds) = &overrides.seeds {
        s.seeds.count = None;
        s.seeds.list = Some(seeds.clone());
    }
    if let Some(pred) = &overrides.predictor {
        s.predictor = pred.clone();
    }
    s
}

fn one_run(
    scenario: &ScenarioFile,
    lambda: f64,
    seed: u64,
    log_dir: Option<&Path>,
) -> RunRecord {
    let outcome = run_episode(scenario, lambda, seed).and_then(|log| {
        let metrics = compute_metrics(&log)?;
        if let Some(dir) = log_dir {
            logio::write_episode_file(&log, log_path(dir, &log))?;
        }
        Ok((log.terminal, metrics))
    });
    match outcome {
        Ok((terminal, metrics)) => RunRecord {
            lambda,
            seed,
            status: RunStatus::Completed(terminal),
            metrics: Some(metrics),
        },
        Err(e) => RunRecord { lambda, seed, status: RunStatus::Failed(e.to_string()), metrics: None },
    }
}

fn log_path(dir: &Path, log: &EpisodeLog) -> PathBuf {
    dir.join(format!("{}_lambda{}_seed{}.jsonl", log.scenario, log.lambda, log.seed))
}

fn run_batch_inner(scenario: &ScenarioFile, log_dir: Option<&Path>) -> Result<BatchResult> {
    scenario.validate()?;
    let lambdas = scenario.predictability.lambdas.clone();
    let seeds = scenario.seeds.resolve();

    if let Some(dir) = log_dir {
        std::fs::create_dir_all(dir)?;
    }

    let pairs: Vec<(f64, u64)> = lambdas
        .iter()
        .flat_map(|l| seeds.iter().map(move |s| (*l, *s)))
        .collect();
    let mut runs = exec::map_indexed(pairs.len(), |i| {
        let (lambda, seed) = pairs[i];
        one_run(scenario, lambda, seed, log_dir)
    });
    runs.sort_by(|a, b| {
        a.lambda
            .partial_cmp(&b.lambda)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.seed.cmp(&b.seed))
    });

    let mut sorted_lambdas = lambdas;
    sorted_lambdas.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    sorted_lambdas.dedup();
    let mut aggregates = Vec::new();
    for lambda in sorted_lambdas {
        let completed: Vec<EpisodeMetrics> = runs
            .iter()
            .filter(|r| r.lambda == lambda)
            .filter_map(|r| r.metrics)
            .collect();
        if !completed.is_empty() {
            aggregates.push((lambda, aggregate(&completed)?));
        }
    }

    Ok(BatchResult { scenario: scenario.name.clone(), runs, aggregates })
}

/// Run the full (lambda x seed) grid of a scenario. `jobs` bounds the
/// worker pool; results are identical for any value.
pub fn run_batch(
    scenario: &ScenarioFile,
    overrides: &Overrides,
    jobs: Option<usize>,
    log_dir: Option<&Path>,
) -> Result<BatchResult> {
    let scenario = apply_overrides(scenario, overrides);

    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(effective_jobs(jobs))
            .build()
            .map_err(|e| crate::error::Error::invalid_input(format!("thread pool: {e}")))?;
        pool.install(|| run_batch_inner(&scenario, log_dir))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = jobs;
        run_batch_inner(&scenario, log_dir)
    }
}

fn fmt_metric(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.6}"),
        None => String::new(),
    }
}

/// Per-run table. Columns: scenario,lambda,seed,status,pe,acc,ang,dist,ticks.
pub fn runs_csv(result: &BatchResult) -> String {
    let mut out = String::from("scenario,lambda,seed,status,pe,acc,ang,dist,ticks\n");
    for run in &result.runs {
        let m = run.metrics.as_ref();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            result.scenario,
            run.lambda,
            run.seed,
            run.status.label(),
            fmt_metric(m.map(|m| m.planning_effort)),
            fmt_metric(m.map(|m| m.mean_abs_accel)),
            fmt_metric(m.map(|m| m.mean_abs_angular)),
            fmt_metric(m.map(|m| m.distance_traveled)),
            m.map(|m| m.ticks_to_done.to_string()).unwrap_or_default(),
        ));
    }
    out
}

/// Aggregate table: one row per lambda with mean/std per metric plus
/// deadlock and collision percentages.
pub fn aggregate_csv(result: &BatchResult) -> String {
    let mut out = String::from(
        "scenario,lambda,runs,pe_mean,pe_std,acc_mean,acc_std,ang_mean,ang_std,dist_mean,dist_std,ticks_mean,ticks_std,dlk_pct,col_pct\n",
    );
    for (lambda, agg) in &result.aggregates {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.1},{:.1}\n",
            result.scenario,
            lambda,
            agg.runs,
            agg.planning_effort.mean,
            agg.planning_effort.std,
            agg.mean_abs_accel.mean,
            agg.mean_abs_accel.std,
            agg.mean_abs_angular.mean,
            agg.mean_abs_angular.std,
            agg.distance_traveled.mean,
            agg.distance_traveled.std,
            agg.ticks_to_done.mean,
            agg.ticks_to_done.std,
            agg.deadlock_pct,
            agg.collision_pct,
        ));
    }
    out
}

/// Write per-agent trajectories, beliefs (when present) and per-tick plan
/// snapshots as plain CSV for external plotting. Returns the files written.
pub fn emit_plot_data(log: &EpisodeLog, out_dir: &Path) -> Result<Vec<PathBuf>> {
    use std::fmt::Write as _;
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    for (id, final_state) in &log.final_states {
        let mut text = String::from("tick,x,y,theta,v\n");
        for rec in &log.ticks {
            if let Some(a) = rec.snapshot.agent(*id) {
                writeln!(text, "{},{},{},{},{}", rec.tick, a.state.x, a.state.y, a.state.theta, a.state.v)
                    .expect("string write");
            }
        }
        writeln!(
            text,
            "{},{},{},{},{}",
            log.ticks.len(),
            final_state.x,
            final_state.y,
            final_state.theta,
            final_state.v
        )
        .expect("string write");
        let path = out_dir.join(format!("traj_agent{id}.csv"));
        std::fs::write(&path, text)?;
        written.push(path);
    }

    if let Some(first) = log.ticks.iter().find_map(|r| r.belief.as_ref()) {
        let mut text = String::from("tick");
        for goal in &first.goals {
            text.push_str(&format!(",b_{goal}"));
        }
        text.push('\n');
        for rec in &log.ticks {
            if let Some(belief) = &rec.belief {
                write!(text, "{}", rec.tick).expect("string write");
                for p in &belief.probs {
                    write!(text, ",{p}").expect("string write");
                }
                text.push('\n');
            }
        }
        let path = out_dir.join("beliefs.csv");
        std::fs::write(&path, text)?;
        written.push(path);
    }

    let mut plans = String::from("tick,agent,k,x,y\n");
    for rec in &log.ticks {
        for (id, plan) in &rec.plans {
            for (k, s) in plan.states.iter().enumerate() {
                writeln!(plans, "{},{},{},{},{}", rec.tick, id, k, s.x, s.y).expect("string write");
            }
        }
    }
    let path = out_dir.join("plans.csv");
    std::fs::write(&path, plans)?;
    written.push(path);

    Ok(written)
}
