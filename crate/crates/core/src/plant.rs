//! Agent dynamics `x' = f(x) + g(u) + w(x, t)`, disturbance families and the
//! consensus feedback law.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Drift of the two-dimensional demonstration agents,
/// `[tanh(0.5 x1 + 0.5 x2), sin(0.5 x1 - 0.5 x2)]`, Lipschitz with constant 1.
pub fn sim_drift(x: [f64; 2]) -> [f64; 2] {
    [
        (0.5 * x[0] + 0.5 * x[1]).tanh(),
        (0.5 * x[0] - 0.5 * x[1]).sin(),
    ]
}

/// Flow drift `f_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Drift {
    Zero,
    /// [`sim_drift`]; two-dimensional agents only.
    TanhSin,
    /// `f(x) = rate * x`.
    Linear { rate: f64 },
}

impl Drift {
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        match *self {
            Drift::Zero => out.fill(0.0),
            Drift::TanhSin => {
                let f = sim_drift([x[0], x[1]]);
                out[..2].copy_from_slice(&f);
            }
            Drift::Linear { rate } => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = rate * v;
                }
            }
        }
    }

    /// Declared Lipschitz constant in the Euclidean norm.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            Drift::Zero => 0.0,
            Drift::TanhSin => 1.0,
            Drift::Linear { rate } => rate.abs(),
        }
    }

    pub fn required_dim(&self) -> Option<usize> {
        match self {
            Drift::TanhSin => Some(2),
            _ => None,
        }
    }
}

/// Boundedness class of an input map, deciding which observer variants are
/// backed by the theory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputBound {
    Bounded,
    DerivativeBounded,
    Neither,
}

/// Input map `g_i`, acting componentwise (`m_i = n_i`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputMap {
    Identity,
    Scaled { gain: f64 },
    /// `g(u) = limit * tanh(u / limit)`.
    Saturated { limit: f64 },
}

impl InputMap {
    pub fn eval(&self, u: &[f64], out: &mut [f64]) {
        match *self {
            InputMap::Identity => out.copy_from_slice(u),
            InputMap::Scaled { gain } => {
                for (o, v) in out.iter_mut().zip(u) {
                    *o = gain * v;
                }
            }
            InputMap::Saturated { limit } => {
                for (o, v) in out.iter_mut().zip(u) {
                    *o = limit * (v / limit).tanh();
                }
            }
        }
    }

    pub fn bound_class(&self) -> InputBound {
        match self {
            InputMap::Saturated { .. } => InputBound::Bounded,
            // Smooth maps: the derivative is bounded whenever the input's is.
            InputMap::Identity | InputMap::Scaled { .. } => InputBound::DerivativeBounded,
        }
    }
}

/// Disturbance family shared by all agents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisturbanceKind {
    #[default]
    Zero,
    /// `amplitude * sin(frequency * t + phase)` with a fixed phase per agent
    /// and component.
    Sinusoid { amplitude: f64, frequency: f64 },
    /// Piecewise-linear interpolation of seeded uniform samples in
    /// `[-amplitude, amplitude]`, one knot every `interval` seconds.
    Random { amplitude: f64, interval: f64 },
}

/// Evaluable disturbance `w_i(x, t)` for every agent.
#[derive(Debug, Clone)]
pub struct Disturbance {
    kind: DisturbanceKind,
    /// Per agent, per component: phases (sinusoid) or knot values (random).
    channels: Vec<Vec<Vec<f64>>>,
}

impl Disturbance {
    pub fn new(kind: DisturbanceKind, dims: &[usize], horizon: f64, seed: u64) -> Result<Self> {
        let total: usize = dims.iter().sum();
        let channels = match kind {
            DisturbanceKind::Zero => dims.iter().map(|&d| vec![Vec::new(); d]).collect(),
            DisturbanceKind::Sinusoid {
                amplitude,
                frequency,
            } => {
                check_nonneg("disturbance amplitude", amplitude)?;
                check_nonneg("disturbance frequency", frequency)?;
                let mut flat = 0usize;
                dims.iter()
                    .map(|&d| {
                        (0..d)
                            .map(|_| {
                                let phase =
                                    2.0 * std::f64::consts::PI * flat as f64 / total.max(1) as f64;
                                flat += 1;
                                vec![phase]
                            })
                            .collect()
                    })
                    .collect()
            }
            DisturbanceKind::Random {
                amplitude,
                interval,
            } => {
                check_nonneg("disturbance amplitude", amplitude)?;
                if !(interval > 0.0) {
                    return Err(Error::config("random disturbance interval must be positive"));
                }
                let knots = (horizon.max(0.0) / interval).ceil() as usize + 2;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                dims.iter()
                    .map(|&d| {
                        (0..d)
                            .map(|_| {
                                (0..knots)
                                    .map(|_| rng.random_range(-amplitude..=amplitude))
                                    .collect()
                            })
                            .collect()
                    })
                    .collect()
            }
        };
        Ok(Disturbance { kind, channels })
    }

    pub fn kind(&self) -> DisturbanceKind {
        self.kind
    }

    /// Declared uniform bound on every component.
    pub fn bound(&self) -> f64 {
        match self.kind {
            DisturbanceKind::Zero => 0.0,
            DisturbanceKind::Sinusoid { amplitude, .. } => amplitude,
            DisturbanceKind::Random { amplitude, .. } => amplitude,
        }
    }

    /// `w_agent(x, t)`. The built-in families do not depend on the state.
    pub fn eval(&self, agent: usize, _x_global: &[f64], t: f64, out: &mut [f64]) {
        match self.kind {
            DisturbanceKind::Zero => out.fill(0.0),
            DisturbanceKind::Sinusoid {
                amplitude,
                frequency,
            } => {
                for (o, phase) in out.iter_mut().zip(&self.channels[agent]) {
                    *o = amplitude * (frequency * t + phase[0]).sin();
                }
            }
            DisturbanceKind::Random { interval, .. } => {
                let s = (t.max(0.0) / interval).max(0.0);
                for (o, knots) in out.iter_mut().zip(&self.channels[agent]) {
                    let last = knots.len() - 1;
                    let i = (s.floor() as usize).min(last - 1);
                    let frac = (s - i as f64).clamp(0.0, 1.0);
                    *o = knots[i] + frac * (knots[i + 1] - knots[i]);
                }
            }
        }
    }
}

fn check_nonneg(what: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("{what} must be a nonnegative number, got {v}")))
    }
}

/// Dynamics of one agent, `x' = f(x) + g(u) + w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentModel {
    pub dim: usize,
    pub drift: Drift,
    pub input_map: InputMap,
}

impl AgentModel {
    pub fn validate(&self, agent: usize) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config(format!("agent {} has zero state dimension", agent + 1)));
        }
        if let Some(d) = self.drift.required_dim() {
            if d != self.dim {
                return Err(Error::config(format!(
                    "agent {}: drift {:?} needs dimension {d}, agent has {}",
                    agent + 1,
                    self.drift,
                    self.dim
                )));
            }
        }
        let ok = match self.input_map {
            InputMap::Identity => true,
            InputMap::Scaled { gain } => gain.is_finite(),
            InputMap::Saturated { limit } => limit.is_finite() && limit > 0.0,
        };
        if !ok {
            return Err(Error::config(format!(
                "agent {}: invalid input map {:?}",
                agent + 1,
                self.input_map
            )));
        }
        Ok(())
    }
}

/// Feedback law producing every agent's input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlLaw {
    /// `u = 0`.
    #[default]
    None,
    /// Tanh consensus over the task graph, see [`consensus_control`].
    Consensus { gain: f64, mode: ControlMode },
}

/// Which neighbor states the consensus law may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    /// Every task neighbor's true state (the nominal, centralized-information law).
    Truth,
    /// True states of task neighbors that are also communication neighbors,
    /// own estimates for the others.
    #[default]
    Estimated,
}

/// `gain * (sum tanh(x_j - x) over truth neighbors + sum tanh(x_hat_j - x)
/// over estimated neighbors)`, componentwise tanh.
pub fn consensus_control<'a>(
    x_own: &[f64],
    truth_neighbors: impl IntoIterator<Item = &'a [f64]>,
    estimated_neighbors: impl IntoIterator<Item = &'a [f64]>,
    gain: f64,
    out: &mut [f64],
) {
    out.fill(0.0);
    for xj in truth_neighbors.into_iter().chain(estimated_neighbors) {
        for ((o, a), b) in out.iter_mut().zip(xj).zip(x_own) {
            *o += (a - b).tanh();
        }
    }
    for o in out.iter_mut() {
        *o *= gain;
    }
}

/// Task-graph neighbor split of one agent for the consensus law.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskNeighbors {
    /// Task neighbors that are also communication neighbors.
    pub shared: Vec<usize>,
    /// Task neighbors the agent cannot observe directly.
    pub remote: Vec<usize>,
}

/// `Pi = I - (1 1^T kron I_dim) / n`.
pub fn consensus_projector(agents: usize, dim: usize) -> Matrix {
    let size = agents * dim;
    let mut p = Matrix::identity(size);
    let inv = 1.0 / agents as f64;
    for a in 0..agents {
        for b in 0..agents {
            for c in 0..dim {
                p[(a * dim + c, b * dim + c)] -= inv;
            }
        }
    }
    p
}

/// `||Pi x||` without forming the projection.
pub fn consensus_norm(x_global: &[f64], agents: usize) -> f64 {
    assert!(agents > 0 && x_global.len().is_multiple_of(agents));
    let dim = x_global.len() / agents;
    let mut sq = 0.0;
    for c in 0..dim {
        let mean = x_global.iter().skip(c).step_by(dim).sum::<f64>() / agents as f64;
        sq += x_global
            .iter()
            .skip(c)
            .step_by(dim)
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>();
    }
    sq.sqrt()
}

/// `(Pi x, ||Pi x||)` for equal-dimension agents stacked in `x_global`.
///
/// Computed as deviation from the componentwise mean, which is the projector
/// applied without forming it.
pub fn consensus_disagreement(x_global: &[f64], agents: usize) -> (Vec<f64>, f64) {
    assert!(agents > 0 && x_global.len().is_multiple_of(agents));
    let dim = x_global.len() / agents;
    let mut mean = vec![0.0; dim];
    for chunk in x_global.chunks(dim) {
        for (m, v) in mean.iter_mut().zip(chunk) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= agents as f64;
    }
    let proj: Vec<f64> = x_global
        .chunks(dim)
        .flat_map(|chunk| chunk.iter().zip(&mean).map(|(v, m)| v - m).collect::<Vec<_>>())
        .collect();
    let norm = crate::linalg::norm2(&proj);
    (proj, norm)
}
