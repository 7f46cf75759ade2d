use crate::error::{Error, Result};
use crate::funnel::{Channel, Funnel};
use crate::observer::{disagreement, ppio_derivative, ppso_derivative, LocalView};
use crate::plant::{consensus_control, ControlLaw};

use super::layout::SlotLayout;
use super::record::{Recorder, Trajectory};
use super::{Integrator, Scenario};

/// Quantities derived from one full state: controls, input-map values and
/// every slot's disagreements.
#[derive(Debug, Clone, PartialEq)]
pub struct Signals {
    pub u: Vec<f64>,
    pub g: Vec<f64>,
    pub xi: Vec<f64>,
    pub mu: Vec<f64>,
}

impl Signals {
    pub fn new(layout: &SlotLayout) -> Self {
        Signals {
            u: vec![0.0; layout.plant_len()],
            g: vec![0.0; layout.plant_len()],
            xi: vec![0.0; layout.block_len()],
            mu: vec![0.0; layout.block_len()],
        }
    }
}

/// Estimates of one channel and the matching true values, as seen by the
/// simulator. Information flow is synchronous, so the relaying neighbor does
/// not change the value delivered.
struct BlockView<'a> {
    layout: &'a SlotLayout,
    estimates: &'a [f64],
    truth: &'a [f64],
}

impl LocalView for BlockView<'_> {
    fn estimate(&self, holder: usize, target: usize) -> Option<&[f64]> {
        let s = self.layout.slot_of(holder, target)?;
        Some(&self.estimates[self.layout.slots()[s].range()])
    }

    fn truth(&self, _source: usize, target: usize) -> Option<&[f64]> {
        Some(&self.truth[self.layout.plant_range(target)])
    }
}

pub(crate) fn compute_signals(sc: &Scenario, y: &[f64], sig: &mut Signals) -> Result<()> {
    let layout = &sc.layout;
    let x = &y[..layout.plant_len()];
    let x_hat = &y[layout.x_hat_offset()..layout.g_hat_offset()];
    let g_hat = &y[layout.g_hat_offset()..];
    let Signals { u, g, xi, mu } = sig;

    match sc.spec.control {
        ControlLaw::None => u.fill(0.0),
        ControlLaw::Consensus { gain, .. } => {
            for i in 0..layout.agents() {
                let split = &sc.task_neighbors[i];
                let truth = split.shared.iter().map(|&j| &x[layout.plant_range(j)]);
                let estimated = split.remote.iter().map(|&j| {
                    let s = layout.slot_of(i, j).expect("remote task neighbor without slot");
                    &x_hat[layout.slots()[s].range()]
                });
                let r = layout.plant_range(i);
                consensus_control(&x[r.clone()], truth, estimated, gain, &mut u[r]);
            }
        }
    }
    for (i, agent) in sc.spec.agents.iter().enumerate() {
        let r = layout.plant_range(i);
        agent.input_map.eval(&u[r.clone()], &mut g[r]);
    }

    let state_view = BlockView {
        layout,
        estimates: x_hat,
        truth: x,
    };
    let input_view = BlockView {
        layout,
        estimates: g_hat,
        truth: g,
    };
    let graph = &sc.topology.graph;
    for slot in layout.slots() {
        let nbhd = &sc.topology.neighborhoods[slot.target];
        disagreement(graph, nbhd, slot.estimator, &state_view, &mut xi[slot.range()])?;
        disagreement(graph, nbhd, slot.estimator, &input_view, &mut mu[slot.range()])?;
    }
    Ok(())
}

/// Writes every slot's funnel value at `t` for one channel, laid out like the
/// estimate block. Consecutive identical funnels share one evaluation.
pub(crate) fn funnel_values(sc: &Scenario, channel: Channel, t: f64, out: &mut [f64]) {
    let banks = match channel {
        Channel::State => &sc.state_banks,
        Channel::Input => &sc.input_banks,
    };
    let mut last: Option<(Funnel, f64)> = None;
    for slot in sc.layout.slots() {
        let Some(bank) = banks[slot.target].as_ref() else {
            continue;
        };
        for c in 0..slot.dim {
            let f = bank.get(slot.member_index, c);
            out[slot.offset + c] = match last {
                Some((g, v)) if g == *f => v,
                _ => {
                    let v = f.value(t);
                    last = Some((*f, v));
                    v
                }
            };
        }
    }
}

#[derive(Debug, Clone)]
struct Scratch {
    signals: Signals,
    buf: Vec<f64>,
    rho: Vec<f64>,
    omega: Vec<f64>,
}

/// Coupled vector field; returns the number of clamped normalized errors.
fn derivative(sc: &Scenario, t: f64, y: &[f64], dy: &mut [f64], scratch: &mut Scratch) -> Result<usize> {
    compute_signals(sc, y, &mut scratch.signals)?;
    let layout = &sc.layout;
    let Scratch {
        signals,
        buf,
        rho,
        omega,
    } = scratch;
    funnel_values(sc, Channel::State, t, rho);
    funnel_values(sc, Channel::Input, t, omega);
    let x = &y[..layout.plant_len()];

    for (i, agent) in sc.spec.agents.iter().enumerate() {
        let r = layout.plant_range(i);
        let w = &mut buf[..r.len()];
        sc.disturbance.eval(i, x, t, w);
        agent.drift.eval(&x[r.clone()], &mut dy[r.clone()]);
        for ((d, g), w) in dy[r.clone()].iter_mut().zip(&signals.g[r]).zip(w.iter()) {
            *d += g + w;
        }
    }

    let variant = sc.spec.variant;
    let (xo, go) = (layout.x_hat_offset(), layout.g_hat_offset());
    let mut clamps = 0;
    for slot in layout.slots() {
        let r = slot.range();
        let est = &y[xo + r.start..xo + r.end];
        let drift = &mut buf[..slot.dim];
        if variant.uses_drift() {
            sc.spec.agents[slot.target].drift.eval(est, drift);
        }
        clamps += ppso_derivative(
            variant,
            drift,
            &y[go + r.start..go + r.end],
            &signals.xi[r.clone()],
            &rho[r.clone()],
            &mut dy[xo + r.start..xo + r.end],
        );
        if sc.input_banks[slot.target].is_some() {
            clamps += ppio_derivative(&signals.mu[r.clone()], &omega[r.clone()], &mut dy[go + r.start..go + r.end]);
        } else {
            dy[go + r.start..go + r.end].fill(0.0);
        }
    }
    Ok(clamps)
}

/// Fixed-step integrator of a built scenario.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    scenario: &'a Scenario,
    stages: [Vec<f64>; 4],
    tmp: Vec<f64>,
    scratch: Scratch,
    clamp_events: u64,
}

impl<'a> Simulator<'a> {
    pub fn new(scenario: &'a Scenario) -> Self {
        let len = scenario.layout.state_len();
        let width = scenario.layout.dims().iter().copied().max().unwrap_or(0);
        Simulator {
            scenario,
            stages: std::array::from_fn(|_| vec![0.0; len]),
            tmp: vec![0.0; len],
            scratch: Scratch {
                signals: Signals::new(&scenario.layout),
                buf: vec![0.0; width],
                rho: vec![0.0; scenario.layout.block_len()],
                omega: vec![0.0; scenario.layout.block_len()],
            },
            clamp_events: 0,
        }
    }

    /// Evaluates the coupled vector field at `(t, y)` into `dy`.
    pub fn derivative(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<usize> {
        let c = derivative(self.scenario, t, y, dy, &mut self.scratch)?;
        self.clamp_events += c as u64;
        Ok(c)
    }

    /// Signals of the most recent vector field evaluation.
    pub fn signals(&self) -> &Signals {
        &self.scratch.signals
    }

    /// Clamped normalized errors over all evaluations so far, stages included.
    pub fn clamp_events(&self) -> u64 {
        self.clamp_events
    }

    /// Advances `y` from `t` by one step.
    pub fn step(&mut self, t: f64, y: &mut [f64]) -> Result<()> {
        self.first_stage(t, y)?;
        self.advance(t, y)
    }

    fn first_stage(&mut self, t: f64, y: &[f64]) -> Result<usize> {
        let c = derivative(self.scenario, t, y, &mut self.stages[0], &mut self.scratch)?;
        self.clamp_events += c as u64;
        Ok(c)
    }

    /// Completes a step whose first stage is already in `stages[0]`.
    fn advance(&mut self, t: f64, y: &mut [f64]) -> Result<()> {
        let h = self.scenario.spec.dt;
        match self.scenario.spec.integrator {
            Integrator::Euler => {
                for (v, d) in y.iter_mut().zip(&self.stages[0]) {
                    *v += h * d;
                }
            }
            Integrator::Rk4 => {
                let nodes = [0.5, 0.5, 1.0];
                for s in 1..4 {
                    let a = nodes[s - 1] * h;
                    let (prev, rest) = self.stages.split_at_mut(s);
                    for ((tv, v), d) in self.tmp.iter_mut().zip(y.iter()).zip(&prev[s - 1]) {
                        *tv = v + a * d;
                    }
                    let c = derivative(self.scenario, t + a, &self.tmp, &mut rest[0], &mut self.scratch)?;
                    self.clamp_events += c as u64;
                }
                let [k1, k2, k3, k4] = &self.stages;
                for i in 0..y.len() {
                    y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
        Ok(())
    }
}

fn check_finite(sc: &Scenario, t: f64, y: &[f64]) -> Result<()> {
    match y.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::NonFinite {
            t,
            location: sc.layout.describe(i),
        }),
    }
}

/// Integrates the scenario over its horizon, checking every funnel and the
/// stacked identities at each step.
pub fn run(scenario: &Scenario) -> Result<Trajectory> {
    let mut sim = Simulator::new(scenario);
    let mut y = scenario.initial_state.clone();
    let mut recorder = Recorder::new(scenario);
    let steps = scenario.steps();
    let every = scenario.spec.record_every;
    for n in 0..=steps {
        let t = n as f64 * scenario.spec.dt;
        check_finite(scenario, t, &y)?;
        let clamps = sim.first_stage(t, &y)?;
        let record = n % every == 0 || n == steps;
        recorder.observe(t, &y, &sim.scratch.signals, &sim.stages[0], clamps, record);
        if n == steps {
            break;
        }
        sim.advance(t, &mut y)?;
    }
    Ok(recorder.finish(y, sim.clamp_events))
}
