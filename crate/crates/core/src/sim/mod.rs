//! Closed-loop simulation: plant, controllers and every observer slot
//! integrated as one coupled ODE with a fixed step.

mod engine;
mod layout;
mod record;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funnel::{check_initial, design_funnel_bank, Channel, Funnel, FunnelBank, DEFAULT_SAFETY};
use crate::graph::{Graph, NeighborhoodMode, Topology};
use crate::observer::ObserverVariant;
use crate::plant::{AgentModel, ControlLaw, ControlMode, Disturbance, DisturbanceKind, TaskNeighbors};

pub use engine::{run, Signals, Simulator};
pub use layout::{SlotInfo, SlotLayout};
pub use record::{
    finite_difference_audit, write_outputs, AuditReport, OutputPaths, RunSummary, Sample,
    StepRecord, Trajectory,
};

/// Number of grid points on which explicit funnels are certified.
pub const CERTIFICATE_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Euler,
    #[default]
    Rk4,
}

/// Either a designed (`Auto`) or a user-supplied disagreement funnel.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum FunnelChoice {
    #[default]
    Auto,
    Explicit(Funnel),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TargetFunnels {
    pub rho: Option<FunnelChoice>,
    pub omega: Option<FunnelChoice>,
}

/// Target bounds `delta` (state errors) and `theta` (input errors) and how the
/// disagreement funnels `rho`, `omega` are obtained from them.
#[derive(Debug, Clone, PartialEq)]
pub struct FunnelSpecs {
    pub delta: Funnel,
    pub theta: Funnel,
    pub rho: FunnelChoice,
    pub omega: FunnelChoice,
    pub safety: f64,
    /// Per-target overrides, keyed by 0-based agent id.
    pub per_target: BTreeMap<usize, TargetFunnels>,
}

impl FunnelSpecs {
    pub fn auto(delta: Funnel, theta: Funnel) -> Self {
        FunnelSpecs {
            delta,
            theta,
            rho: FunnelChoice::Auto,
            omega: FunnelChoice::Auto,
            safety: DEFAULT_SAFETY,
            per_target: BTreeMap::new(),
        }
    }

    fn choice(&self, channel: Channel, target: usize) -> FunnelChoice {
        let over = self.per_target.get(&target);
        match channel {
            Channel::State => over.and_then(|o| o.rho).unwrap_or(self.rho),
            Channel::Input => over.and_then(|o| o.omega).unwrap_or(self.omega),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialStates {
    Explicit(Vec<Vec<f64>>),
    /// Agents on a regular lattice filling `[-half_width, half_width]^dim`.
    Grid { half_width: f64 },
    /// Seeded uniform samples in `[-half_width, half_width]^dim`.
    Random { half_width: f64 },
}

impl Default for InitialStates {
    fn default() -> Self {
        InitialStates::Grid { half_width: 5.0 }
    }
}

impl InitialStates {
    fn resolve(&self, dims: &[usize], seed: u64) -> Result<Vec<Vec<f64>>> {
        match self {
            InitialStates::Explicit(states) => {
                if states.len() != dims.len() {
                    return Err(Error::config(format!(
                        "{} initial states given for {} agents",
                        states.len(),
                        dims.len()
                    )));
                }
                for (i, (s, &d)) in states.iter().zip(dims).enumerate() {
                    if s.len() != d || s.iter().any(|v| !v.is_finite()) {
                        return Err(Error::config(format!(
                            "initial state of agent {} must have {d} finite entries",
                            i + 1
                        )));
                    }
                }
                Ok(states.clone())
            }
            InitialStates::Grid { half_width } => {
                let w = *half_width;
                Ok(dims
                    .iter()
                    .enumerate()
                    .map(|(i, &d)| lattice_point(i, dims.len(), d, w))
                    .collect())
            }
            InitialStates::Random { half_width } => {
                let w = half_width.abs();
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e_ed0f_a9e7);
                Ok(dims
                    .iter()
                    .map(|&d| (0..d).map(|_| rng.random_range(-w..=w)).collect())
                    .collect())
            }
        }
    }
}

fn lattice_point(index: usize, count: usize, dim: usize, w: f64) -> Vec<f64> {
    let side = (count as f64).powf(1.0 / dim as f64).ceil().max(1.0) as usize;
    let mut rest = index;
    (0..dim)
        .map(|_| {
            let digit = rest % side;
            rest /= side;
            if side == 1 {
                0.0
            } else {
                -w + 2.0 * w * digit as f64 / (side - 1) as f64
            }
        })
        .collect()
}

/// Everything needed to build a scenario, before validation.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub name: String,
    pub comm: Graph,
    /// Task graph of the consensus law; the communication graph when absent.
    pub task: Option<Graph>,
    pub k: usize,
    pub mode: NeighborhoodMode,
    pub variant: ObserverVariant,
    pub agents: Vec<AgentModel>,
    pub initial: InitialStates,
    pub control: ControlLaw,
    pub disturbance: DisturbanceKind,
    pub funnels: FunnelSpecs,
    /// Initial value of every estimate entry.
    pub x_hat0: f64,
    pub g_hat0: f64,
    pub horizon: f64,
    pub dt: f64,
    pub integrator: Integrator,
    /// Record every n-th step (the final step is always recorded).
    pub record_every: usize,
    pub seed: u64,
}

/// A validated scenario whose funnels passed the feasibility gate.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub topology: Topology,
    pub task: Graph,
    pub layout: SlotLayout,
    pub disturbance: Disturbance,
    pub task_neighbors: Vec<TaskNeighbors>,
    pub state_banks: Vec<Option<FunnelBank>>,
    /// Empty banks when the variant runs no input observer.
    pub input_banks: Vec<Option<FunnelBank>>,
    pub initial_state: Vec<f64>,
}

impl Scenario {
    pub fn build(spec: ScenarioSpec) -> Result<Scenario> {
        let n = spec.comm.node_count();
        if !(spec.dt > 0.0 && spec.dt.is_finite()) {
            return Err(Error::config(format!("step size must be positive, got {}", spec.dt)));
        }
        if !(spec.horizon > 0.0 && spec.horizon.is_finite()) {
            return Err(Error::config(format!("horizon must be positive, got {}", spec.horizon)));
        }
        if spec.record_every == 0 {
            return Err(Error::config("record_every must be at least 1"));
        }
        if spec.agents.len() != n {
            return Err(Error::config(format!(
                "{} agent models given for a graph with {n} nodes",
                spec.agents.len()
            )));
        }
        for (i, a) in spec.agents.iter().enumerate() {
            a.validate(i)?;
        }
        if !spec.comm.is_connected() {
            return Err(Error::Disconnected);
        }
        if !(spec.x_hat0.is_finite() && spec.g_hat0.is_finite()) {
            return Err(Error::config("initial estimates must be finite"));
        }
        if !(spec.funnels.safety > 0.0 && spec.funnels.safety <= 1.0) {
            return Err(Error::config(format!(
                "funnel safety factor must lie in (0, 1], got {}",
                spec.funnels.safety
            )));
        }
        if let Some(&t) = spec.funnels.per_target.keys().find(|&&t| t >= n) {
            return Err(Error::config(format!("funnel override for unknown agent {}", t + 1)));
        }
        spec.funnels.delta.validate()?;
        spec.funnels.theta.validate()?;

        let dims: Vec<usize> = spec.agents.iter().map(|a| a.dim).collect();
        let topology = Topology::new(spec.comm.clone(), spec.k, spec.mode)?;
        let layout = SlotLayout::new(&topology, &dims);
        let task = spec.task.clone().unwrap_or_else(|| spec.comm.clone());
        if task.node_count() != n {
            return Err(Error::config(format!(
                "task graph has {} nodes, communication graph {n}",
                task.node_count()
            )));
        }
        let task_neighbors = task_split(&spec, &task, &layout)?;
        let disturbance = Disturbance::new(spec.disturbance, &dims, spec.horizon, spec.seed)?;

        let x0 = spec.initial.resolve(&dims, spec.seed)?;
        let mut y0 = vec![0.0; layout.state_len()];
        for (i, x) in x0.iter().enumerate() {
            y0[layout.plant_range(i)].copy_from_slice(x);
        }
        y0[layout.x_hat_offset()..layout.g_hat_offset()].fill(spec.x_hat0);
        y0[layout.g_hat_offset()..].fill(spec.g_hat0);

        let mut scenario = Scenario {
            spec,
            topology,
            task,
            layout,
            disturbance,
            task_neighbors,
            state_banks: Vec::new(),
            input_banks: Vec::new(),
            initial_state: y0,
        };
        scenario.design_banks()?;
        Ok(scenario)
    }

    /// Designs or checks every funnel bank against the disagreements at `t = 0`.
    fn design_banks(&mut self) -> Result<()> {
        let mut signals = Signals::new(&self.layout);
        engine::compute_signals(self, &self.initial_state, &mut signals)?;
        let n = self.layout.agents();
        let mut state_banks = Vec::with_capacity(n);
        let mut input_banks = Vec::with_capacity(n);
        for target in 0..n {
            let Some(matrix) = self.topology.matrices[target].as_ref() else {
                state_banks.push(None);
                input_banks.push(None);
                continue;
            };
            let block = self.layout.target_block(target);
            let dim = self.layout.dim(target);
            state_banks.push(Some(self.bank(
                Channel::State,
                target,
                matrix,
                dim,
                &signals.xi[block.clone()],
            )?));
            input_banks.push(if self.spec.variant.uses_input_observer() {
                Some(self.bank(Channel::Input, target, matrix, dim, &signals.mu[block])?)
            } else {
                None
            });
        }
        self.state_banks = state_banks;
        self.input_banks = input_banks;
        Ok(())
    }

    fn bank(
        &self,
        channel: Channel,
        target: usize,
        matrix: &crate::graph::DisagreementMatrix,
        dim: usize,
        initial: &[f64],
    ) -> Result<FunnelBank> {
        let bound = match channel {
            Channel::State => self.spec.funnels.delta,
            Channel::Input => self.spec.funnels.theta,
        };
        match self.spec.funnels.choice(channel, target) {
            FunnelChoice::Auto => {
                design_funnel_bank(matrix, channel, &bound, dim, initial, self.spec.funnels.safety)
            }
            FunnelChoice::Explicit(f) => {
                f.validate()?;
                let bank = FunnelBank::uniform(
                    target,
                    f,
                    matrix.eta(),
                    dim,
                    bound,
                    matrix.lambda_min,
                );
                check_initial(&bank, channel, &matrix.members, initial)?;
                bank.check_component_certificate(channel, self.spec.horizon, CERTIFICATE_SAMPLES)?;
                Ok(bank)
            }
        }
    }

    pub fn agents(&self) -> usize {
        self.layout.agents()
    }

    /// Number of integration steps covering the horizon.
    pub fn steps(&self) -> usize {
        (self.spec.horizon / self.spec.dt).round().max(1.0) as usize
    }

    /// Whether every agent has the same dimension, so the consensus metric exists.
    pub fn homogeneous_dim(&self) -> Option<usize> {
        let d = self.layout.dim(0);
        self.layout.dims().iter().all(|&x| x == d).then_some(d)
    }

    /// Largest step for which the linearized observer corrections stay inside
    /// the real stability interval of the integrator, at the funnels' steady
    /// state where they are stiffest.
    ///
    /// Near zero disagreement the correction behaves like `-4 M x_tilde / rho^2`.
    pub fn stable_step_bound(&self) -> f64 {
        let reach = match self.spec.integrator {
            Integrator::Euler => 2.0,
            Integrator::Rk4 => 2.785,
        };
        let mut bound = f64::INFINITY;
        let banks = self.state_banks.iter().chain(&self.input_banks);
        for bank in banks.flatten() {
            let matrix = self.topology.matrices[bank.target].as_ref().expect("bank without matrix");
            let floor = bank
                .funnels
                .iter()
                .map(|f| f.rho_inf.min(f.rho0))
                .fold(f64::INFINITY, f64::min);
            let rate = 4.0 * matrix.lambda_max / (floor * floor);
            bound = bound.min(reach / rate);
        }
        bound
    }
}

fn task_split(spec: &ScenarioSpec, task: &Graph, layout: &SlotLayout) -> Result<Vec<TaskNeighbors>> {
    let n = task.node_count();
    let mode = match spec.control {
        ControlLaw::None => return Ok(vec![TaskNeighbors { shared: vec![], remote: vec![] }; n]),
        ControlLaw::Consensus { gain, mode } => {
            if !(gain > 0.0 && gain.is_finite()) {
                return Err(Error::config(format!("controller gain must be positive, got {gain}")));
            }
            let d = layout.dim(0);
            if layout.dims().iter().any(|&x| x != d) {
                return Err(Error::config("consensus control needs equal agent dimensions"));
            }
            mode
        }
    };
    (0..n)
        .map(|i| {
            let mut split = TaskNeighbors { shared: vec![], remote: vec![] };
            for &j in task.neighbors(i) {
                if mode == ControlMode::Truth || spec.comm.has_edge(i, j) {
                    split.shared.push(j);
                } else if layout.slot_of(i, j).is_some() {
                    split.remote.push(j);
                } else {
                    return Err(Error::config(format!(
                        "agent {} must estimate task neighbor {} but is not within its {}-hop neighborhood",
                        i + 1,
                        j + 1,
                        spec.k
                    )));
                }
            }
            Ok(split)
        })
        .collect()
}
