//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::thread;
use std::time::Instant;

use khop_ppo::funnel::{transform, transform_jacobian, Funnel};
use khop_ppo::graph::{NeighborhoodMode, Topology};
use khop_ppo::observer::ObserverVariant;
use khop_ppo::sim::{run, write_outputs, FunnelChoice, Integrator, Scenario, Trajectory};
use khop_ppo::Channel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn run_named(name: &str, overrides: &[&str]) -> Result<(Scenario, Trajectory), String> {
    let sc = common::try_load(name, overrides).map_err(|e| format!("{name}: {e}"))?;
    let traj = run(&sc).map_err(|e| format!("{name}: {e}"))?;
    Ok((sc, traj))
}

fn funnel_satisfaction(name: &str) -> Outcome {
    let start = Instant::now();
    let (sc, traj) = run_named(name, &[])?;
    let s = &traj.summary;
    check(
        s.violations() == 0 && s.clamp_events == 0 && s.committed_clamps == 0,
        format!(
            "{name}: {:?} dt={:e} T={}; violations xi {} mu {} x_err {} g_err {}, clamps {}, max|e| {:.3}, {:.1} s",
            sc.spec.integrator,
            sc.spec.dt,
            s.t_end,
            s.xi_violations,
            s.mu_violations,
            s.x_err_violations,
            s.g_err_violations,
            s.clamp_events,
            s.max_e,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn paper8_parameters() -> Outcome {
    let sc = common::try_load("paper8", &[]).map_err(|e| e.to_string())?;
    let f = &sc.spec.funnels;
    let agent4 = f.per_target.get(&3).ok_or("no funnels for agent 4")?;
    let explicit = |c: Option<FunnelChoice>| match c {
        Some(FunnelChoice::Explicit(f)) => Some(f),
        _ => None,
    };
    let expect = [
        (Some(f.delta), 13.96, 0.117),
        (Some(f.theta), 230.0, 1.39),
        (explicit(agent4.rho), 2.8, 0.02),
        (explicit(agent4.omega), 39.27, 0.033),
    ];
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
    let ok = expect.iter().all(|(got, gap, floor)| {
        got.is_some_and(|g: Funnel| close(g.rho0 - g.rho_inf, *gap) && close(g.rho_inf, *floor) && g.decay == 5.0)
    }) && sc.spec.integrator == Integrator::Rk4
        && sc.spec.dt == 1e-4
        && sc.spec.horizon == 3.0;
    check(ok, "scenario parameters match the reference funnels and desk profile".into())
}

fn criterion1() -> Outcome {
    paper8_parameters()?;
    funnel_satisfaction("paper8")
}

fn criterion2() -> Outcome {
    let sc = common::try_load("nodrift", &[]).map_err(|e| e.to_string())?;
    if sc.spec.variant != ObserverVariant::NoDrift {
        return Err(format!("nodrift runs variant {:?}", sc.spec.variant));
    }
    funnel_satisfaction("nodrift")
}

fn criterion3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let graphs = 240;
    let mut matrices = 0;
    let mut worst = f64::INFINITY;
    let mut mismatch = 0.0f64;
    for i in 0..graphs {
        let n = rng.random_range(3..=12);
        let p = rng.random_range(0.05..0.5);
        let g = common::random_connected(&mut rng, n, p);
        let k = 2 + i % 2;
        for mode in [NeighborhoodMode::Standard, NeighborhoodMode::Extended] {
            let topo = Topology::new(g.clone(), k, mode).map_err(|e| e.to_string())?;
            for agent in 0..n {
                let (members, m) = common::oracle_matrix(&g, agent, k, mode);
                if members.is_empty() {
                    if topo.matrices[agent].is_some() {
                        return Err(format!("graph {i}: agent {agent} should have no matrix"));
                    }
                    continue;
                }
                let lib = topo.matrices[agent]
                    .as_ref()
                    .ok_or_else(|| format!("graph {i}: agent {agent} lacks a matrix"))?;
                if lib.members != members {
                    return Err(format!("graph {i}: agent {agent} members differ"));
                }
                for a in 0..members.len() {
                    for b in 0..members.len() {
                        mismatch = mismatch.max((lib.m[(a, b)] - m[(a, b)]).abs());
                    }
                }
                let lmin = common::lambda_min(&m);
                mismatch = mismatch.max((lib.lambda_min - lmin).abs());
                worst = worst.min(lmin);
                matrices += 1;
            }
        }
    }
    check(
        worst > 1e-10 && mismatch <= 1e-9,
        format!("{graphs} graphs, {matrices} matrices, min lambda_min {worst:.3e}, library vs oracle {mismatch:.1e}"),
    )
}

fn stacked_residuals(sc: &Scenario, traj: &Trajectory) -> (f64, f64, usize) {
    let layout = &sc.layout;
    let (mut rx, mut rg) = (0.0f64, 0.0f64);
    let xo = layout.x_hat_offset();
    let go = layout.g_hat_offset();
    let oracles: Vec<_> = (0..layout.agents())
        .map(|t| common::oracle_matrix(&sc.topology.graph, t, sc.spec.k, sc.spec.mode))
        .collect();
    for sample in &traj.samples {
        for (target, (members, m)) in oracles.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            let block = layout.target_block(target);
            let pr = layout.plant_range(target);
            let dim = layout.dim(target);
            let x_hat = &sample.state[xo + block.start..xo + block.end];
            rx = rx.max(common::oracle_residual(m, dim, &sample.xi[block.clone()], x_hat, &sample.state[pr.clone()]));
            if sc.input_banks[target].is_some() {
                let g_hat = &sample.state[go + block.start..go + block.end];
                rg = rg.max(common::oracle_residual(m, dim, &sample.mu[block.clone()], g_hat, &sample.g[pr]));
            }
        }
    }
    (rx, rg, traj.samples.len())
}

fn criterion4() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for name in common::BUNDLED {
        let (sc, traj) = run_named(name, &[])?;
        let (rx, rg, n) = stacked_residuals(&sc, &traj);
        ok &= rx <= 1e-10 && rg <= 1e-10 && n > 0;
        lines.push(format!("{name}: {n} samples, xi {rx:.1e}, mu {rg:.1e}"));
    }
    check(ok, lines.join("; "))
}

fn criterion5() -> Outcome {
    let mut banks = 0;
    let mut min_slack = f64::INFINITY;
    for name in common::BUNDLED {
        let sc = common::try_load(name, &[]).map_err(|e| e.to_string())?;
        let funnels = &sc.spec.funnels;
        for channel in [Channel::State, Channel::Input] {
            let list = match channel {
                Channel::State => &sc.state_banks,
                Channel::Input => &sc.input_banks,
            };
            for bank in list.iter().flatten() {
                let over = funnels.per_target.get(&bank.target);
                let choice = match channel {
                    Channel::State => over.and_then(|o| o.rho).unwrap_or(funnels.rho),
                    Channel::Input => over.and_then(|o| o.omega).unwrap_or(funnels.omega),
                };
                if choice != FunnelChoice::Auto {
                    continue;
                }
                let (_, m) = common::oracle_matrix(&sc.topology.graph, bank.target, sc.spec.k, sc.spec.mode);
                let lmin = common::lambda_min(&m);
                let norm = |t: f64| bank.funnels.iter().map(|f| f.value(t).powi(2)).sum::<f64>().sqrt();
                let sup = bank.funnels.iter().map(|f| f.rho0.powi(2)).sum::<f64>().sqrt();
                let dsup = bank
                    .funnels
                    .iter()
                    .map(|f| (f.decay * (f.rho0 - f.rho_inf)).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let horizon = sc.spec.horizon;
                for i in 0..1000 {
                    let t = horizon * i as f64 / 999.0;
                    let v = norm(t);
                    let h = 1e-6;
                    let dv = (norm(t + h) - norm((t - h).max(0.0))) / (t + h - (t - h).max(0.0));
                    if !(v > 0.0 && v <= sup * (1.0 + 1e-12) && dv.abs() <= dsup * (1.0 + 1e-6)) {
                        return Err(format!("{name}: bank of agent {} is not a PPF at t={t}", bank.target + 1));
                    }
                    let bound = match channel {
                        Channel::State => funnels.delta,
                        Channel::Input => funnels.theta,
                    };
                    min_slack = min_slack.min(lmin * bound.value(t) - v);
                }
                banks += 1;
            }
        }
    }
    check(
        banks > 0 && min_slack >= 0.0,
        format!("{banks} auto-designed banks, 1000-point grid, min slack {min_slack:.3e}"),
    )
}

fn criterion6() -> Outcome {
    let mut worst = 0.0f64;
    for i in 0..=1800 {
        let e = -0.9 + i as f64 * 1e-3;
        let h = 1e-6;
        let fd = (transform(e + h) - transform(e - h)) / (2.0 * h);
        let j = transform_jacobian(e);
        worst = worst.max((fd - j).abs() / j.abs());
    }
    let grid: Vec<f64> = (0..1000).map(|i| -1.0 + 2.0 * (i + 1) as f64 / 1001.0).collect();
    let monotone = grid.windows(2).all(|w| transform(w[0]) < transform(w[1]));
    check(
        worst <= 1e-6 && monotone,
        format!("max relative derivative error {worst:.2e}, strictly increasing on 1000 points: {monotone}"),
    )
}

fn observed_order(integrator: &str) -> Result<f64, String> {
    let mut finals = Vec::new();
    for dt in [2e-3, 1e-3, 5e-4] {
        let dt = format!("dt={dt}");
        let ig = format!("integrator=\"{integrator}\"");
        let (_, traj) = run_named("minimal", &["horizon=0.5", "record_interval=0.5", &dt, &ig])?;
        finals.push(traj.final_state);
    }
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    Ok((diff(&finals[0], &finals[1]) / diff(&finals[1], &finals[2])).log2())
}

fn criterion7() -> Outcome {
    let euler = observed_order("euler")?;
    let rk4 = observed_order("rk4")?;
    check(
        (euler - 1.0).abs() <= 0.3 && (rk4 - 4.0).abs() <= 0.3,
        format!("minimal, dt 2e-3/1e-3/5e-4 over 0.5 s: Euler {euler:.3}, RK4 {rk4:.3}"),
    )
}

/// Overrides shrinking every state error bound tenfold at steady state.
/// Agent 4's hand-picked funnel is lowered with it so that it still
/// certifies the tighter bound.
const TIGHT: [&str; 2] = [
    "funnels.delta.rho_inf=0.0117",
    "funnels.target=[{agent=4, rho={rho0=2.802, rho_inf=0.002, decay=5.0}, omega={rho0=39.303, rho_inf=0.033, decay=5.0}}]",
];

fn criterion8() -> Outcome {
    let start = Instant::now();
    // The plant in truth mode never reads the estimates, so the reference run
    // keeps the default step.
    let (_, truth) = run_named("paper8", &["controller.mode=\"truth\""])?;
    let probe = common::try_load("paper8", &TIGHT).map_err(|e| e.to_string())?;
    let horizon = probe.spec.horizon;
    let steps = (horizon / (0.8 * probe.stable_step_bound())).ceil();
    let dt = format!("dt={:e}", horizon / steps);
    let mut over = TIGHT.to_vec();
    over.extend([dt.as_str(), "record_interval=0.01"]);
    let (sc, est) = run_named("paper8", &over)?;

    let initial = truth.summary.initial_consensus.ok_or("no consensus metric")?;
    let truth_end = truth.summary.terminal_consensus.ok_or("no consensus metric")?;
    let est_end = est.summary.terminal_consensus.ok_or("no consensus metric")?;
    check(
        est_end <= 2.0 * truth_end && truth_end <= 0.05 * initial,
        format!(
            "|Pi x(0)| {initial:.4e}, truth {truth_end:.4e}, estimated {est_end:.4e} (dt {:e}, violations {}, clamps {}), {:.0} s",
            sc.spec.dt,
            est.summary.violations(),
            est.summary.clamp_events,
            start.elapsed().as_secs_f64()
        ),
    )
}

fn criterion9() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for name in common::BUNDLED {
        let mut files = Vec::new();
        for _ in 0..2 {
            let (sc, traj) = run_named(name, &[])?;
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let paths = write_outputs(dir.path(), &sc, &traj).map_err(|e| e.to_string())?;
            files.push(std::fs::read(paths.trajectory).map_err(|e| e.to_string())?);
        }
        let same = files[0] == files[1];
        ok &= same;
        lines.push(format!("{name}: {} bytes {}", files[0].len(), if same { "identical" } else { "differ" }));
    }
    check(ok, lines.join("; "))
}

fn guarded(f: fn() -> Outcome) -> Outcome {
    panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    })
}

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "funnel satisfaction, paper8", criterion1),
        (2, "funnel satisfaction without drift model, nodrift", criterion2),
        (3, "disagreement matrices positive definite", criterion3),
        (4, "stacked disagreement identity", criterion4),
        (5, "designed funnels certify the error bounds", criterion5),
        (6, "error transformation calculus", criterion6),
        (7, "integrator orders", criterion7),
        (8, "consensus with estimated states", criterion8),
        (9, "deterministic trajectories", criterion9),
    ];
    // The consensus check needs a very small step; start it first.
    let (slow, fast): (Vec<_>, Vec<_>) = criteria.iter().partition(|c| c.0 == 8);
    let handle = slow.first().map(|&&(id, name, f)| (id, name, thread::spawn(move || guarded(f))));

    let mut results: Vec<(u32, &str, Outcome)> = fast.iter().map(|&&(id, name, f)| (id, name, guarded(f))).collect();
    if let Some((id, name, h)) = handle {
        let outcome = h.join().unwrap_or_else(|_| Err("thread panicked".into()));
        results.push((id, name, outcome));
    }
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    for (id, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS {id} {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id} {name}: {detail}");
            }
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
