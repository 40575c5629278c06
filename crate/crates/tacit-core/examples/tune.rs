use tacit_core::batch::{run_batch, Overrides};
use tacit_core::metrics::compute_metrics;
use tacit_core::scenario::builtin;
use tacit_core::simulation::run_episode;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let what = args.get(1).map(|s| s.as_str()).unwrap_or("free");
    match what {
        "free" => {
            let scenario = builtin::load("free_space").unwrap();
            let t0 = Instant::now();
            let mut ok = 0;
            let mut ticks_sum = 0;
            for seed in 0..20 {
                let log = run_episode(&scenario, 0.0, seed).unwrap();
                if log.terminal.label() == "goals" { ok += 1; ticks_sum += log.ticks.len(); }
            }
            eprintln!("reached {ok}/20, mean ticks {}, elapsed {:?}", ticks_sum.max(1) / ok.max(1), t0.elapsed());
        }
        "swap_all" => {
            let name = args.get(2).map(|s| s.as_str()).unwrap_or("swap_symmetric");
            let scenario = builtin::load(name).unwrap();
            let lambda: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.0);
            let seed: u64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0);
            let t0 = Instant::now();
            let log = run_episode(&scenario, lambda, seed).unwrap();
            let m = compute_metrics(&log).unwrap();
            eprintln!("{name} lambda {lambda} seed {seed}: {} ticks {} pe {:.3} acc {:.3} ang {:.3} elapsed {:?}",
                log.terminal.label(), log.ticks.len(), m.planning_effort, m.mean_abs_accel, m.mean_abs_angular, t0.elapsed());
            for rec in log.ticks.iter().step_by(15) {
                let mut line = format!("  t={:3}", rec.tick);
                for a in &rec.snapshot.agents {
                    line.push_str(&format!("  {}:({:6.2},{:6.2}) v{:.1}", a.id, a.state.x, a.state.y, a.state.v));
                }
                eprintln!("{line}");
            }
            let last = log.ticks.last().unwrap();
            for a in &last.snapshot.agents {
                let d = &last.diagnostics.get(&a.id);
                if let Some(d) = d {
                    eprintln!("  agent {} last diag: best {:.1} stage {:.1} col {:.1} pred {:.1}", a.id, d.best_sample_cost, d.plan_cost.stage, d.plan_cost.collision, d.plan_cost.predictability);
                }
            }
        }
        "swap_batch" => {
            let scenario = builtin::load("swap_symmetric").unwrap();
            let n: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(10);
            let t0 = Instant::now();
            let o = Overrides { lambdas: Some(vec![0.0, 5.0]), seeds: Some((0..n).collect()), predictor: None };
            let result = run_batch(&scenario, &o, Some(1), None).unwrap();
            for (l, agg) in &result.aggregates {
                eprintln!("lambda {l}: pe {:.3}±{:.3} acc {:.3} ang {:.3} dlk {:.0}% col {:.0}% ticks {:.0}",
                    agg.planning_effort.mean, agg.planning_effort.std, agg.mean_abs_accel.mean, agg.mean_abs_angular.mean, agg.deadlock_pct, agg.collision_pct, agg.ticks_to_done.mean);
            }
            let statuses: Vec<&str> = result.runs.iter().map(|r| r.status.label()).collect();
            eprintln!("statuses: {statuses:?}");
            eprintln!("elapsed {:?}", t0.elapsed());
        }
        "merge" => {
            let n: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(10);
            let t0 = Instant::now();
            let scenario = builtin::load("merge_corridor").unwrap();
            let o = Overrides { lambdas: Some(vec![0.0]), seeds: Some((0..n).collect()), predictor: None };
            let result = run_batch(&scenario, &o, Some(1), None).unwrap();
            for (l, agg) in &result.aggregates {
                eprintln!("CV lambda {l}: dlk {:.0}% col {:.0}% ticks {:.0} dist {:.1}", agg.deadlock_pct, agg.collision_pct, agg.ticks_to_done.mean, agg.distance_traveled.mean);
            }
            let conv = builtin::load("merge_corridor_convention").unwrap();
            let o = Overrides { lambdas: None, seeds: Some((0..n).collect()), predictor: None };
            let result = run_batch(&conv, &o, Some(1), None).unwrap();
            for (l, agg) in &result.aggregates {
                eprintln!("CONV lambda {l}: dlk {:.0}% col {:.0}% ticks {:.0} dist {:.1}", agg.deadlock_pct, agg.collision_pct, agg.ticks_to_done.mean, agg.distance_traveled.mean);
            }
            eprintln!("elapsed {:?}", t0.elapsed());
        }
        "merge_one" => {
            let name = args.get(2).map(|s| s.as_str()).unwrap_or("merge_corridor");
            let scenario = builtin::load(name).unwrap();
            let lambda: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.0);
            let seed: u64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0);
            let log = run_episode(&scenario, lambda, seed).unwrap();
            eprintln!("{name} lambda {lambda} seed {seed}: {} ticks {}", log.terminal.label(), log.ticks.len());
            for rec in log.ticks.iter().step_by(15) {
                let mut line = format!("  t={:3}", rec.tick);
                for a in &rec.snapshot.agents {
                    line.push_str(&format!("  {}:({:6.2},{:6.2}) v{:.1}", a.id, a.state.x, a.state.y, a.state.v));
                }
                eprintln!("{line}");
            }
        }
        "twogoal" => {
            let scenario = builtin::load("two_goal_observer").unwrap();
            let n: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(10);
            for lambda in [0.0, 10.0, 20.0] {
                let mut crossings = Vec::new();
                let mut reached = 0;
                for seed in 0..n {
                    let log = run_episode(&scenario, lambda, seed).unwrap();
                    let cross = log.ticks.iter().find(|r| r.belief.as_ref().unwrap().probs[1] > 0.9).map(|r| r.tick).unwrap_or(scenario.termination.t_max);
                    crossings.push(cross);
                    if log.terminal.label() == "goals" { reached += 1; }
                    if seed == 0 {
                        let b_last = log.ticks.last().unwrap().belief.as_ref().unwrap().probs[1];
                        let f = &log.final_states[&0];
                        eprintln!("  lambda {lambda} seed 0: {} ticks {} bB_end {:.3} final ({:.1},{:.1})", log.terminal.label(), log.ticks.len(), b_last, f.x, f.y);
                    }
                }
                let mean_cross: f64 = crossings.iter().map(|c| *c as f64).sum::<f64>() / crossings.len() as f64;
                eprintln!("lambda {lambda}: mean crossing tick {mean_cross:.1}, reached {reached}/{n}");
            }
        }

        "pe_series" => {
            let name = args.get(2).map(|s| s.as_str()).unwrap_or("swap_symmetric");
            let scenario = builtin::load(name).unwrap();
            let lambda: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.0);
            let seed: u64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0);
            let log = run_episode(&scenario, lambda, seed).unwrap();
            eprintln!("{name} lambda {lambda} seed {seed}: {} ticks {}", log.terminal.label(), log.ticks.len());
            // per-tick PE for agent 0: sum over k of |x_k^t - x_k^{t+1}|
            let mut series = Vec::new();
            for w in log.ticks.windows(2) {
                let (a, b) = (&w[0].plans.get(&0), &w[1].plans.get(&0));
                if let (Some(a), Some(b)) = (a, b) {
                    let d: f64 = a.states.iter().zip(&b.states).map(|(p, q)| (p.position() - q.position()).norm()).sum();
                    series.push(d);
                }
            }
            let n = series.len().max(1) as f64;
            let mean = series.iter().sum::<f64>() / n;
            let peak = series.iter().cloned().fold(0.0f64, f64::max);
            let over2 = series.iter().filter(|d| **d > 2.0 * mean).count();
            eprintln!("agent0 per-tick PE: mean {mean:.3} peak {peak:.3} ticks>2x-mean {over2}/{}", series.len());
            for (i, d) in series.iter().enumerate() {
                if *d > 2.0 * mean {
                    eprintln!("  flip tick {i}: {d:.2}");
                }
            }
        }
        _ => eprintln!("unknown mode"),
    }
}
