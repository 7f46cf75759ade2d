use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::linalg::norm2;
use crate::observer::stacked_identity_residual;
use crate::funnel::Channel;
use crate::plant::consensus_norm;

use super::engine::{funnel_values, Signals};
use super::layout::SlotLayout;
use super::{Integrator, Scenario};

/// Relative slack allowed on `||x_tilde|| <= ||xi|| / lambda_min` for rounding.
const BOUND_CHAIN_TOL: f64 = 1e-9;

/// One recorded instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    /// Full flat state: plant, then `x_hat` block, then `g_hat` block.
    pub state: Vec<f64>,
    pub u: Vec<f64>,
    pub g: Vec<f64>,
    pub xi: Vec<f64>,
    pub mu: Vec<f64>,
    /// Rate of every slot's state estimation error, `x_hat' - x_target'`,
    /// laid out like the estimate block.
    pub x_err_rate: Vec<f64>,
    pub consensus_norm: Option<f64>,
}

/// Per-step assertion outcome at a recorded instant. Margins are
/// `bound - |value|` minimized over slots and components; `None` when the
/// channel has no funnels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub xi_margin: f64,
    pub mu_margin: Option<f64>,
    pub x_err_margin: f64,
    pub g_err_margin: Option<f64>,
    pub max_e: f64,
    pub max_q: Option<f64>,
    pub clamps: usize,
    pub residual_state: f64,
    pub residual_input: f64,
    pub bound_chain_slack: f64,
    pub consensus_norm: Option<f64>,
}

/// Aggregates over every integration step.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub scenario: String,
    pub integrator: Integrator,
    pub dt: f64,
    pub steps: usize,
    pub t_end: f64,
    pub input_observer: bool,
    pub xi_violations: u64,
    pub mu_violations: u64,
    pub x_err_violations: u64,
    pub g_err_violations: u64,
    pub bound_chain_violations: u64,
    /// Clamped normalized errors at committed states.
    pub committed_clamps: u64,
    /// Clamped normalized errors over all vector field evaluations.
    pub clamp_events: u64,
    pub min_xi_margin: f64,
    pub min_mu_margin: f64,
    pub min_x_err_margin: f64,
    pub min_g_err_margin: f64,
    pub max_e: f64,
    pub max_q: f64,
    pub max_x_err_ratio: f64,
    pub max_g_err_ratio: f64,
    pub max_residual_state: f64,
    pub max_residual_input: f64,
    pub initial_consensus: Option<f64>,
    pub terminal_consensus: Option<f64>,
    pub max_control: f64,
    /// Largest `|g(t + dt) - g(t)| / dt` seen, a sampled bound on the input
    /// map's rate.
    pub max_input_rate: f64,
}

impl RunSummary {
    /// Violations of any funnel or of the error bound chain.
    pub fn violations(&self) -> u64 {
        self.xi_violations
            + self.mu_violations
            + self.x_err_violations
            + self.g_err_violations
            + self.bound_chain_violations
    }

    /// Zero violations and zero funnel contacts.
    pub fn is_certified(&self) -> bool {
        self.violations() == 0 && self.clamp_events == 0
    }
}

fn opt(v: f64, present: bool, ratio: bool) -> String {
    if !present {
        "n/a".to_string()
    } else if ratio {
        format!("{v:.6}")
    } else {
        format!("{v:.6e}")
    }
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let io = self.input_observer;
        writeln!(f, "scenario: {}", self.scenario)?;
        writeln!(f, "integrator: {:?}, dt = {:e}, steps = {}, t_end = {}", self.integrator, self.dt, self.steps, self.t_end)?;
        writeln!(f, "certified: {}", self.is_certified())?;
        writeln!(f, "violations |xi| < rho: {}", self.xi_violations)?;
        writeln!(f, "violations |mu| < omega: {}", self.mu_violations)?;
        writeln!(f, "violations |x_err| < delta: {}", self.x_err_violations)?;
        writeln!(f, "violations |g_err| < theta: {}", self.g_err_violations)?;
        writeln!(f, "violations error bound chain: {}", self.bound_chain_violations)?;
        writeln!(f, "clamp events (committed steps): {}", self.committed_clamps)?;
        writeln!(f, "clamp events (all stages): {}", self.clamp_events)?;
        writeln!(f, "min margin rho - |xi|: {:.6e}", self.min_xi_margin)?;
        writeln!(f, "min margin omega - |mu|: {}", opt(self.min_mu_margin, io, false))?;
        writeln!(f, "min margin delta - |x_err|: {:.6e}", self.min_x_err_margin)?;
        writeln!(f, "min margin theta - |g_err|: {}", opt(self.min_g_err_margin, io, false))?;
        writeln!(f, "max |e| = max |xi| / rho: {:.6}", self.max_e)?;
        writeln!(f, "max |q| = max |mu| / omega: {}", opt(self.max_q, io, true))?;
        writeln!(f, "max |x_err| / delta: {:.6}", self.max_x_err_ratio)?;
        writeln!(f, "max |g_err| / theta: {}", opt(self.max_g_err_ratio, io, true))?;
        writeln!(f, "max stacked residual (state): {:.3e}", self.max_residual_state)?;
        writeln!(f, "max stacked residual (input): {:.3e}", self.max_residual_input)?;
        match (self.initial_consensus, self.terminal_consensus) {
            (Some(a), Some(b)) => {
                writeln!(f, "initial consensus norm: {a:.6e}")?;
                writeln!(f, "terminal consensus norm: {b:.6e}")?;
            }
            _ => writeln!(f, "consensus norm: n/a (agent dimensions differ)")?,
        }
        writeln!(f, "max |u|: {:.6}", self.max_control)?;
        write!(f, "max |dg/dt| (sampled): {:.6}", self.max_input_rate)
    }
}

/// Recorded samples and per-step assertions of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub layout: SlotLayout,
    pub samples: Vec<Sample>,
    pub records: Vec<StepRecord>,
    pub summary: RunSummary,
    pub final_state: Vec<f64>,
}

pub(crate) struct Recorder<'a> {
    sc: &'a Scenario,
    samples: Vec<Sample>,
    records: Vec<StepRecord>,
    summary: RunSummary,
    prev_g: Option<Vec<f64>>,
    rho: Vec<f64>,
    omega: Vec<f64>,
}

impl<'a> Recorder<'a> {
    pub(crate) fn new(sc: &'a Scenario) -> Self {
        let input_observer = sc.input_banks.iter().any(Option::is_some);
        Recorder {
            sc,
            samples: Vec::new(),
            records: Vec::new(),
            summary: RunSummary {
                scenario: sc.spec.name.clone(),
                integrator: sc.spec.integrator,
                dt: sc.spec.dt,
                steps: sc.steps(),
                t_end: sc.steps() as f64 * sc.spec.dt,
                input_observer,
                xi_violations: 0,
                mu_violations: 0,
                x_err_violations: 0,
                g_err_violations: 0,
                bound_chain_violations: 0,
                committed_clamps: 0,
                clamp_events: 0,
                min_xi_margin: f64::INFINITY,
                min_mu_margin: f64::INFINITY,
                min_x_err_margin: f64::INFINITY,
                min_g_err_margin: f64::INFINITY,
                max_e: 0.0,
                max_q: 0.0,
                max_x_err_ratio: 0.0,
                max_g_err_ratio: 0.0,
                max_residual_state: 0.0,
                max_residual_input: 0.0,
                initial_consensus: None,
                terminal_consensus: None,
                max_control: 0.0,
                max_input_rate: 0.0,
            },
            prev_g: None,
            rho: vec![0.0; sc.layout.block_len()],
            omega: vec![0.0; sc.layout.block_len()],
        }
    }

    pub(crate) fn observe(
        &mut self,
        t: f64,
        y: &[f64],
        sig: &Signals,
        dy: &[f64],
        clamps: usize,
        record: bool,
    ) {
        let sc = self.sc;
        let layout = &sc.layout;
        let s = &mut self.summary;
        let x = &y[..layout.plant_len()];
        let (xo, go) = (layout.x_hat_offset(), layout.g_hat_offset());
        let x_hat = &y[xo..go];
        let g_hat = &y[go..];

        let mut rec = StepRecord {
            t,
            xi_margin: f64::INFINITY,
            mu_margin: None,
            x_err_margin: f64::INFINITY,
            g_err_margin: None,
            max_e: 0.0,
            max_q: None,
            clamps,
            residual_state: 0.0,
            residual_input: 0.0,
            bound_chain_slack: f64::INFINITY,
            consensus_norm: None,
        };
        s.committed_clamps += clamps as u64;
        funnel_values(sc, Channel::State, t, &mut self.rho);
        funnel_values(sc, Channel::Input, t, &mut self.omega);

        for slot in layout.slots() {
            let bank = sc.state_banks[slot.target].as_ref().expect("slot without bank");
            let delta = bank.target_bound.value(t);
            let truth = &x[layout.plant_range(slot.target)];
            let g_truth = &sig.g[layout.plant_range(slot.target)];
            let theta = sc.input_banks[slot.target].as_ref().map(|b| b.target_bound.value(t));
            for c in 0..slot.dim {
                let i = slot.offset + c;
                let rho = self.rho[i];
                let xi = sig.xi[i].abs();
                if !(xi < rho) {
                    s.xi_violations += 1;
                }
                rec.xi_margin = rec.xi_margin.min(rho - xi);
                rec.max_e = rec.max_e.max(xi / rho);
                let err = (x_hat[i] - truth[c]).abs();
                if !(err < delta) {
                    s.x_err_violations += 1;
                }
                rec.x_err_margin = rec.x_err_margin.min(delta - err);
                s.max_x_err_ratio = s.max_x_err_ratio.max(err / delta);

                if let Some(theta) = theta {
                    let omega = self.omega[i];
                    let mu = sig.mu[i].abs();
                    if !(mu < omega) {
                        s.mu_violations += 1;
                    }
                    let gerr = (g_hat[i] - g_truth[c]).abs();
                    if !(gerr < theta) {
                        s.g_err_violations += 1;
                    }
                    rec.mu_margin = Some(rec.mu_margin.unwrap_or(f64::INFINITY).min(omega - mu));
                    rec.g_err_margin = Some(rec.g_err_margin.unwrap_or(f64::INFINITY).min(theta - gerr));
                    rec.max_q = Some(rec.max_q.unwrap_or(0.0).max(mu / omega));
                    s.max_g_err_ratio = s.max_g_err_ratio.max(gerr / theta);
                }
            }
        }

        for target in 0..layout.agents() {
            let Some(matrix) = sc.topology.matrices[target].as_ref() else {
                continue;
            };
            let block = layout.target_block(target);
            let dim = layout.dim(target);
            let pr = layout.plant_range(target);
            let res_x = stacked_identity_residual(matrix, dim, &sig.xi[block.clone()], &x_hat[block.clone()], &x[pr.clone()]);
            let res_g = stacked_identity_residual(matrix, dim, &sig.mu[block.clone()], &g_hat[block.clone()], &sig.g[pr.clone()]);
            rec.residual_state = rec.residual_state.max(res_x);
            rec.residual_input = rec.residual_input.max(res_g);

            let lhs = x_hat[block.clone()]
                .chunks(dim)
                .flat_map(|est| est.iter().zip(&x[pr.clone()]).map(|(a, b)| (a - b) * (a - b)))
                .sum::<f64>()
                .sqrt();
            let rhs = norm2(&sig.xi[block]) / matrix.lambda_min;
            if lhs > rhs * (1.0 + BOUND_CHAIN_TOL) + f64::MIN_POSITIVE {
                s.bound_chain_violations += 1;
            }
            rec.bound_chain_slack = rec.bound_chain_slack.min(rhs - lhs);
        }

        if sc.homogeneous_dim().is_some() {
            let norm = consensus_norm(x, layout.agents());
            rec.consensus_norm = Some(norm);
            s.initial_consensus.get_or_insert(norm);
            s.terminal_consensus = Some(norm);
        }

        s.min_xi_margin = s.min_xi_margin.min(rec.xi_margin);
        s.min_x_err_margin = s.min_x_err_margin.min(rec.x_err_margin);
        s.max_e = s.max_e.max(rec.max_e);
        if let Some(m) = rec.mu_margin {
            s.min_mu_margin = s.min_mu_margin.min(m);
        }
        if let Some(m) = rec.g_err_margin {
            s.min_g_err_margin = s.min_g_err_margin.min(m);
        }
        if let Some(q) = rec.max_q {
            s.max_q = s.max_q.max(q);
        }
        s.max_residual_state = s.max_residual_state.max(rec.residual_state);
        s.max_residual_input = s.max_residual_input.max(rec.residual_input);
        s.max_control = sig.u.iter().fold(s.max_control, |m, v| m.max(v.abs()));
        if let Some(prev) = &self.prev_g {
            let rate = prev
                .iter()
                .zip(&sig.g)
                .fold(0.0f64, |m, (a, b)| m.max((b - a).abs()))
                / sc.spec.dt;
            s.max_input_rate = s.max_input_rate.max(rate);
        }
        match &mut self.prev_g {
            Some(p) => p.copy_from_slice(&sig.g),
            None => self.prev_g = Some(sig.g.clone()),
        }

        if record {
            let mut rate = vec![0.0; layout.block_len()];
            for slot in layout.slots() {
                let pr = layout.plant_range(slot.target);
                for c in 0..slot.dim {
                    rate[slot.offset + c] = dy[xo + slot.offset + c] - dy[pr.start + c];
                }
            }
            self.samples.push(Sample {
                t,
                state: y.to_vec(),
                u: sig.u.clone(),
                g: sig.g.clone(),
                xi: sig.xi.clone(),
                mu: sig.mu.clone(),
                x_err_rate: rate,
                consensus_norm: rec.consensus_norm,
            });
            self.records.push(rec);
        }
    }

    pub(crate) fn finish(mut self, final_state: Vec<f64>, clamp_events: u64) -> Trajectory {
        self.summary.clamp_events = clamp_events;
        if !self.summary.input_observer {
            self.summary.min_mu_margin = f64::NAN;
            self.summary.min_g_err_margin = f64::NAN;
            self.summary.max_q = f64::NAN;
            self.summary.max_g_err_ratio = f64::NAN;
        }
        Trajectory {
            layout: self.sc.layout.clone(),
            samples: self.samples,
            records: self.records,
            summary: self.summary,
            final_state,
        }
    }
}

/// Paths written by [`write_outputs`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputPaths {
    pub trajectory: PathBuf,
    pub assertions: PathBuf,
    pub summary: PathBuf,
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Header of `trajectory.csv`. Agent ids are 1-based.
pub fn trajectory_header(sc: &Scenario) -> Vec<String> {
    let layout = &sc.layout;
    let mut h = vec!["t".to_string()];
    for i in 0..layout.agents() {
        for q in ["x", "u", "g"] {
            for c in 1..=layout.dim(i) {
                h.push(format!("agent{}.self.{q}.{c}", i + 1));
            }
        }
    }
    for slot in layout.slots() {
        let input = sc.input_banks[slot.target].is_some();
        let quantities: &[&str] = if input {
            &["x_hat", "x_err", "xi", "e", "rho", "delta", "g_hat", "g_err", "mu", "q", "omega", "theta"]
        } else {
            &["x_hat", "x_err", "xi", "e", "rho", "delta", "g_hat", "g_err", "mu"]
        };
        for q in quantities {
            for c in 1..=slot.dim {
                h.push(format!("agent{}.est{}.{q}.{c}", slot.estimator + 1, slot.target + 1));
            }
        }
    }
    if sc.homogeneous_dim().is_some() {
        h.push("consensus_norm".to_string());
    }
    h
}

fn trajectory_row(sc: &Scenario, s: &Sample) -> Vec<String> {
    let layout = &sc.layout;
    let (xo, go) = (layout.x_hat_offset(), layout.g_hat_offset());
    let x = &s.state[..layout.plant_len()];
    let mut row = vec![num(s.t)];
    for i in 0..layout.agents() {
        let r = layout.plant_range(i);
        for v in x[r.clone()].iter().chain(&s.u[r.clone()]).chain(&s.g[r]) {
            row.push(num(*v));
        }
    }
    for slot in layout.slots() {
        let pr = layout.plant_range(slot.target);
        let bank = sc.state_banks[slot.target].as_ref().expect("slot without bank");
        let input = sc.input_banks[slot.target].as_ref();
        let r = slot.range();
        let rho: Vec<f64> = (0..slot.dim).map(|c| bank.get(slot.member_index, c).value(s.t)).collect();
        let x_hat = &s.state[xo + r.start..xo + r.end];
        let g_hat = &s.state[go + r.start..go + r.end];
        let xi = &s.xi[r.clone()];
        let mu = &s.mu[r.clone()];
        let mut push_all = |vals: &mut dyn Iterator<Item = f64>| row.extend(vals.map(num));
        push_all(&mut x_hat.iter().copied());
        push_all(&mut x_hat.iter().zip(&x[pr.clone()]).map(|(a, b)| a - b));
        push_all(&mut xi.iter().copied());
        push_all(&mut xi.iter().zip(&rho).map(|(a, b)| a / b));
        push_all(&mut rho.iter().copied());
        push_all(&mut (0..slot.dim).map(|_| bank.target_bound.value(s.t)));
        push_all(&mut g_hat.iter().copied());
        push_all(&mut g_hat.iter().zip(&s.g[pr.clone()]).map(|(a, b)| a - b));
        push_all(&mut mu.iter().copied());
        if let Some(ib) = input {
            let omega: Vec<f64> = (0..slot.dim).map(|c| ib.get(slot.member_index, c).value(s.t)).collect();
            push_all(&mut mu.iter().zip(&omega).map(|(a, b)| a / b));
            push_all(&mut omega.iter().copied());
            push_all(&mut (0..slot.dim).map(|_| ib.target_bound.value(s.t)));
        }
    }
    if let Some(n) = s.consensus_norm {
        row.push(num(n));
    }
    row
}

/// Writes `trajectory.csv`, `assertions.csv` and `summary.txt` into `dir`.
pub fn write_outputs(dir: &Path, sc: &Scenario, traj: &Trajectory) -> Result<OutputPaths> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = OutputPaths {
        trajectory: dir.join("trajectory.csv"),
        assertions: dir.join("assertions.csv"),
        summary: dir.join("summary.txt"),
    };

    let mut w = csv::Writer::from_path(&paths.trajectory)?;
    w.write_record(trajectory_header(sc))?;
    for s in &traj.samples {
        w.write_record(trajectory_row(sc, s))?;
    }
    w.flush().map_err(|e| Error::io(&paths.trajectory, e))?;

    let mut w = csv::Writer::from_path(&paths.assertions)?;
    w.write_record([
        "t",
        "xi_margin",
        "mu_margin",
        "x_err_margin",
        "g_err_margin",
        "max_e",
        "max_q",
        "clamps",
        "residual_state",
        "residual_input",
        "bound_chain_slack",
        "consensus_norm",
    ])?;
    for r in &traj.records {
        w.write_record([
            num(r.t),
            num(r.xi_margin),
            opt_num(r.mu_margin),
            num(r.x_err_margin),
            opt_num(r.g_err_margin),
            num(r.max_e),
            opt_num(r.max_q),
            r.clamps.to_string(),
            num(r.residual_state),
            num(r.residual_input),
            num(r.bound_chain_slack),
            opt_num(r.consensus_norm),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&paths.assertions, e))?;

    fs::write(&paths.summary, format!("{}\n", traj.summary))
        .map_err(|e| Error::io(&paths.summary, e))?;
    Ok(paths)
}

/// Comparison of central differences of the recorded disagreements with the
/// disagreement matrix applied to the recorded error rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditReport {
    pub samples_checked: usize,
    pub max_residual: f64,
    /// Largest magnitude of the model side `(M kron I) x_tilde'`.
    pub max_reference: f64,
    /// `max_residual / max_reference`, zero when both vanish.
    pub relative: f64,
}

/// Checks `d xi / dt = (M kron I) d x_tilde / dt` along a trajectory. Only
/// interior samples with equally spaced neighbors are used.
pub fn finite_difference_audit(sc: &Scenario, traj: &Trajectory) -> AuditReport {
    let layout = &sc.layout;
    let mut report = AuditReport {
        samples_checked: 0,
        max_residual: 0.0,
        max_reference: 0.0,
        relative: 0.0,
    };
    for w in traj.samples.windows(3) {
        let (a, b, c) = (&w[0], &w[1], &w[2]);
        let (h1, h2) = (b.t - a.t, c.t - b.t);
        if (h1 - h2).abs() > 1e-9 * h1.abs().max(h2.abs()) || h1 <= 0.0 {
            continue;
        }
        report.samples_checked += 1;
        for target in 0..layout.agents() {
            let Some(matrix) = sc.topology.matrices[target].as_ref() else {
                continue;
            };
            let dim = layout.dim(target);
            let base = layout.target_block(target).start;
            let eta = matrix.eta();
            for row in 0..eta {
                for comp in 0..dim {
                    let i = base + row * dim + comp;
                    let fd = (c.xi[i] - a.xi[i]) / (h1 + h2);
                    let model: f64 = (0..eta)
                        .map(|col| matrix.m[(row, col)] * b.x_err_rate[base + col * dim + comp])
                        .sum();
                    report.max_residual = report.max_residual.max((fd - model).abs());
                    report.max_reference = report.max_reference.max(model.abs());
                }
            }
        }
    }
    report.relative = if report.max_residual == 0.0 {
        0.0
    } else {
        report.max_residual / report.max_reference
    };
    report
}
