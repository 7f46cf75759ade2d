//! Prescribed performance functions, the logarithmic error transformation and
//! the design of disagreement funnels from target error bounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::DisagreementMatrix;

/// Normalized errors are clamped into `[-1 + GUARD, 1 - GUARD]` before the
/// transformation is applied.
pub const SATURATION_GUARD: f64 = 1e-9;

/// Default shrink factor applied to the certified funnel allocation.
pub const DEFAULT_SAFETY: f64 = 0.95;

/// Exponentially decaying performance function
/// `rho(t) = (rho0 - rho_inf) * exp(-decay * t) + rho_inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Funnel {
    pub rho0: f64,
    pub rho_inf: f64,
    pub decay: f64,
}

impl Funnel {
    pub fn new(rho0: f64, rho_inf: f64, decay: f64) -> Result<Self> {
        let f = Funnel {
            rho0,
            rho_inf,
            decay,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn constant(value: f64) -> Result<Self> {
        Funnel::new(value, value, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let Funnel {
            rho0,
            rho_inf,
            decay,
        } = *self;
        if !(rho0.is_finite() && rho_inf.is_finite() && decay.is_finite()) {
            return Err(Error::InvalidFunnel(format!("non-finite parameter in {self:?}")));
        }
        if rho_inf <= 0.0 {
            return Err(Error::InvalidFunnel(format!(
                "steady-state value must be positive, got {rho_inf}"
            )));
        }
        if rho0 < rho_inf {
            return Err(Error::InvalidFunnel(format!(
                "initial value {rho0} is below the steady-state value {rho_inf}"
            )));
        }
        if decay <= 0.0 {
            return Err(Error::InvalidFunnel(format!(
                "decay rate must be positive, got {decay}"
            )));
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> f64 {
        (self.rho0 - self.rho_inf) * (-self.decay * t).exp() + self.rho_inf
    }

    pub fn derivative(&self, t: f64) -> f64 {
        -self.decay * (self.rho0 - self.rho_inf) * (-self.decay * t).exp()
    }

    /// Supremum of the function over `t >= 0`.
    pub fn upper_bound(&self) -> f64 {
        self.rho0
    }

    /// Supremum of `|derivative|` over `t >= 0`.
    pub fn derivative_bound(&self) -> f64 {
        self.decay * (self.rho0 - self.rho_inf)
    }

    pub fn scaled(&self, factor: f64) -> Funnel {
        Funnel {
            rho0: self.rho0 * factor,
            rho_inf: self.rho_inf * factor,
            decay: self.decay,
        }
    }

    /// Time after which the transient part is below `1e-6` of the gap.
    pub fn settling_time(&self) -> f64 {
        6.0 * std::f64::consts::LN_10 / self.decay
    }
}

/// `T(e) = ln((1 + e) / (1 - e))`, evaluated as `2 atanh(e)` so it stays
/// accurate near zero. Defined on `(-1, 1)`.
pub fn transform(e: f64) -> f64 {
    2.0 * e.atanh()
}

/// Derivative of [`transform`], `2 / (1 - e^2)`.
pub fn transform_jacobian(e: f64) -> f64 {
    2.0 / ((1.0 - e) * (1.0 + e))
}

/// Clamps a normalized error into the open interval where the transformation is
/// finite. Returns the clamped value and whether clamping happened.
pub fn saturate(e: f64) -> (f64, bool) {
    let lim = 1.0 - SATURATION_GUARD;
    if e > lim {
        (lim, true)
    } else if e < -lim {
        (-lim, true)
    } else {
        (e, false)
    }
}

/// The two estimation channels: states (funnels rho over delta) and input maps
/// (funnels omega over theta).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    State,
    Input,
}

impl Channel {
    pub fn disagreement_name(self) -> &'static str {
        match self {
            Channel::State => "state disagreement",
            Channel::Input => "input disagreement",
        }
    }
}

/// Disagreement funnels of one target agent, one per (member, component),
/// stored member-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FunnelBank {
    pub target: usize,
    pub eta: usize,
    pub dim: usize,
    pub funnels: Vec<Funnel>,
    /// Bound the bank must certify on every estimation error.
    pub target_bound: Funnel,
    pub lambda_min: f64,
}

impl FunnelBank {
    pub fn uniform(
        target: usize,
        funnel: Funnel,
        eta: usize,
        dim: usize,
        target_bound: Funnel,
        lambda_min: f64,
    ) -> Self {
        FunnelBank {
            target,
            eta,
            dim,
            funnels: vec![funnel; eta * dim],
            target_bound,
            lambda_min,
        }
    }

    pub fn get(&self, member: usize, component: usize) -> &Funnel {
        &self.funnels[member * self.dim + component]
    }

    /// Euclidean norm of all funnels at `t`.
    pub fn norm(&self, t: f64) -> f64 {
        self.funnels
            .iter()
            .map(|f| f.value(t).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Time derivative of [`FunnelBank::norm`].
    pub fn norm_derivative(&self, t: f64) -> f64 {
        let dot: f64 = self
            .funnels
            .iter()
            .map(|f| f.value(t) * f.derivative(t))
            .sum();
        dot / self.norm(t)
    }

    /// Norm over members of the funnels of one state component.
    pub fn component_norm(&self, t: f64, component: usize) -> f64 {
        (0..self.eta)
            .map(|j| self.get(j, component).value(t).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// `lambda_min * bound(t) - norm(t)`: nonnegative where the whole stack is
    /// certified.
    pub fn certificate_slack(&self, t: f64) -> f64 {
        self.lambda_min * self.target_bound.value(t) - self.norm(t)
    }

    /// Smallest per-component slack `lambda_min * bound(t) - component_norm`.
    pub fn component_certificate_slack(&self, t: f64) -> f64 {
        let limit = self.lambda_min * self.target_bound.value(t);
        (0..self.dim)
            .map(|c| limit - self.component_norm(t, c))
            .fold(f64::INFINITY, f64::min)
    }

    /// Checks the per-component certificate on a uniform grid of `samples`
    /// points over `[0, horizon]`.
    pub fn check_component_certificate(
        &self,
        channel: Channel,
        horizon: f64,
        samples: usize,
    ) -> Result<()> {
        for t in sample_grid(horizon, samples) {
            let slack = self.component_certificate_slack(t);
            if slack < 0.0 {
                let limit = self.lambda_min * self.target_bound.value(t);
                return Err(Error::Certificate {
                    what: channel.disagreement_name(),
                    target: self.target + 1,
                    t,
                    norm: limit - slack,
                    limit,
                });
            }
        }
        Ok(())
    }
}

/// `samples` evenly spaced times covering `[0, horizon]` inclusive.
pub fn sample_grid(horizon: f64, samples: usize) -> impl Iterator<Item = f64> {
    let n = samples.max(2);
    (0..n).map(move |i| horizon * i as f64 / (n - 1) as f64)
}

/// Allocates uniform disagreement funnels
/// `lambda_min * bound(t) * safety / sqrt(eta * dim)` for one target and checks
/// that the initial disagreement `xi0` (member-major, `eta * dim` entries)
/// starts strictly inside them.
///
/// The funnels are never inflated to fit the initial disagreement: that would
/// void the guarantee on the estimation error. An infeasible start is an error
/// carrying the smallest initial target bound that would have been feasible.
pub fn design_funnel_bank(
    matrix: &DisagreementMatrix,
    channel: Channel,
    bound: &Funnel,
    dim: usize,
    xi0: &[f64],
    safety: f64,
) -> Result<FunnelBank> {
    bound.validate()?;
    let eta = matrix.eta();
    if !(matrix.lambda_min > 0.0) {
        return Err(Error::config(format!(
            "disagreement matrix of agent {} is not positive definite (lambda_min = {})",
            matrix.agent + 1,
            matrix.lambda_min
        )));
    }
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(Error::config(format!("safety factor must lie in (0, 1], got {safety}")));
    }
    assert_eq!(xi0.len(), eta * dim, "initial disagreement has wrong length");

    let scale = safety * matrix.lambda_min / ((eta * dim) as f64).sqrt();
    let funnel = bound.scaled(scale);
    let bank = FunnelBank::uniform(matrix.agent, funnel, eta, dim, *bound, matrix.lambda_min);
    check_initial(&bank, channel, &matrix.members, xi0).map_err(|e| match e {
        Error::Infeasible {
            what,
            target,
            estimator,
            component,
            value,
            bound,
            ..
        } => Error::Infeasible {
            what,
            target,
            estimator,
            component,
            value,
            bound,
            min_target0: value.abs() / scale,
        },
        other => other,
    })?;
    Ok(bank)
}

/// Verifies `|xi0| < funnel(0)` entrywise. `members` maps member index to node id.
pub fn check_initial(
    bank: &FunnelBank,
    channel: Channel,
    members: &[usize],
    xi0: &[f64],
) -> Result<()> {
    for (j, &member) in members.iter().enumerate() {
        for c in 0..bank.dim {
            let value = xi0[j * bank.dim + c];
            let f = bank.get(j, c);
            let bound = f.value(0.0);
            if !(value.abs() < bound) {
                return Err(Error::Infeasible {
                    what: channel.disagreement_name(),
                    target: bank.target + 1,
                    estimator: member + 1,
                    component: c + 1,
                    value,
                    bound,
                    min_target0: value.abs() * bank.target_bound.rho0 / bound,
                });
            }
        }
    }
    Ok(())
}

/// Numerically checks that the norm of a funnel bank is itself a prescribed
/// performance function on the sample grid: positive, bounded by the norm of
/// the individual suprema, with a derivative bounded by the norm of the
/// individual derivative bounds and matching a central difference of the norm.
pub fn ppf_norm_is_ppf(bank: &FunnelBank, sample_times: &[f64]) -> bool {
    if bank.funnels.is_empty() {
        return false;
    }
    let sup = bank
        .funnels
        .iter()
        .map(|f| f.upper_bound().powi(2))
        .sum::<f64>()
        .sqrt();
    let dsup = bank
        .funnels
        .iter()
        .map(|f| f.derivative_bound().powi(2))
        .sum::<f64>()
        .sqrt();
    let tol = 1e-12 * sup.max(1.0);
    sample_times.iter().all(|&t| {
        let n = bank.norm(t);
        let dn = bank.norm_derivative(t);
        let h = 1e-6;
        let lo = (t - h).max(0.0);
        let fd = (bank.norm(t + h) - bank.norm(lo)) / (t + h - lo);
        let fd_ok = (fd - dn).abs() <= 1e-5 * dsup.max(1.0);
        n > 0.0 && n <= sup + tol && dn.abs() <= dsup + tol && fd_ok
    })
}
