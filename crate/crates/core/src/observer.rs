//! Decentralized k-hop prescribed performance state and input observers.
//!
//! Every agent `e` estimates the state `x_i` and the input map value
//! `g_i(u_i)` of each agent `i` in whose k-hop neighborhood it lies. The
//! estimate is driven by a local disagreement term that only involves
//!
//! * the estimator's own estimate,
//! * estimates of the same target held by the estimator's 1-hop neighbors that
//!   are themselves k-hop neighbors of the target, and
//! * the target's true value, relayed by the 1-hop neighbors the estimator
//!   shares with the target (standard neighborhoods) or read directly from the
//!   target (extended neighborhoods, for estimators adjacent to the target).
//!
//! Stacked over all estimators of one target, the disagreement equals the
//! target's disagreement matrix times the stacked estimation error, which is
//! what makes funnel constraints on the disagreement certify the error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funnel::{saturate, transform, transform_jacobian};
use crate::graph::{DisagreementMatrix, Graph, KhopNeighborhood, NeighborhoodMode, Topology};

/// Which terms the state observer keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObserverVariant {
    /// Drift model, input estimate and funnel correction; input observer runs.
    #[default]
    Full,
    /// Drops the input estimate; valid for bounded input maps.
    NoInputObserver,
    /// Drops the drift model; valid when the plant stays in a bounded set.
    NoDrift,
    /// Funnel correction only.
    NoDriftNoInput,
}

impl ObserverVariant {
    pub fn uses_drift(self) -> bool {
        matches!(self, ObserverVariant::Full | ObserverVariant::NoInputObserver)
    }

    /// Whether the input observer runs and its estimate feeds the state observer.
    pub fn uses_input_observer(self) -> bool {
        matches!(self, ObserverVariant::Full | ObserverVariant::NoDrift)
    }
}

/// One estimate pair held by `estimator` about `target`.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSlot {
    pub estimator: usize,
    pub target: usize,
    pub x_hat: Vec<f64>,
    pub g_hat: Vec<f64>,
}

/// Read access to the information an estimator can see.
///
/// Implementations return `None` when the requested value does not exist;
/// callers turn that into a protocol error.
pub trait LocalView {
    /// Estimate of `target` held by `holder`.
    fn estimate(&self, holder: usize, target: usize) -> Option<&[f64]>;

    /// True value of `target` as delivered by `source`, which is either the
    /// target itself or one of its 1-hop neighbors relaying it.
    fn truth(&self, source: usize, target: usize) -> Option<&[f64]>;
}

/// Local disagreement of `estimator` about `target`, written into `out`.
///
/// `target_nbhd` is the k-hop neighborhood of the target. The same routine
/// serves the state channel (estimates `x_hat`, truth `x`) and the input
/// channel (estimates `g_hat`, truth `g(u)`); the view decides which.
pub fn disagreement<V: LocalView + ?Sized>(
    g: &Graph,
    target_nbhd: &KhopNeighborhood,
    estimator: usize,
    view: &V,
    out: &mut [f64],
) -> Result<()> {
    let target = target_nbhd.agent;
    let protocol = |holder: usize| Error::Protocol {
        estimator: estimator + 1,
        holder: holder + 1,
        target: target + 1,
    };
    let own = view.estimate(estimator, target).ok_or_else(|| protocol(estimator))?;
    debug_assert_eq!(own.len(), out.len());
    out.fill(0.0);
    for &l in g.neighbors(estimator) {
        if l == target {
            // Direct link, only possible for extended neighborhoods.
            if target_nbhd.mode == NeighborhoodMode::Extended {
                let x = view.truth(target, target).ok_or_else(|| protocol(target))?;
                accumulate(out, own, x);
            }
        } else if target_nbhd.contains(l) {
            let other = view.estimate(l, target).ok_or_else(|| protocol(l))?;
            accumulate(out, own, other);
        } else if target_nbhd.mode == NeighborhoodMode::Standard && g.has_edge(l, target) {
            let x = view.truth(l, target).ok_or_else(|| protocol(l))?;
            accumulate(out, own, x);
        }
    }
    Ok(())
}

#[inline]
fn accumulate(out: &mut [f64], own: &[f64], other: &[f64]) {
    for ((o, a), b) in out.iter_mut().zip(own).zip(other) {
        *o += a - b;
    }
}

/// State disagreement `xi` of `estimator` about the target of `target_nbhd`.
pub fn state_disagreement<V: LocalView + ?Sized>(
    g: &Graph,
    target_nbhd: &KhopNeighborhood,
    estimator: usize,
    view: &V,
) -> Result<Vec<f64>> {
    let dim = view
        .estimate(estimator, target_nbhd.agent)
        .map_or(0, <[f64]>::len);
    let mut out = vec![0.0; dim];
    disagreement(g, target_nbhd, estimator, view, &mut out)?;
    Ok(out)
}

/// Input disagreement `mu`; identical structure to [`state_disagreement`] over
/// a view exposing input-map estimates and relayed input-map values.
pub fn input_disagreement<V: LocalView + ?Sized>(
    g: &Graph,
    target_nbhd: &KhopNeighborhood,
    estimator: usize,
    view: &V,
) -> Result<Vec<f64>> {
    state_disagreement(g, target_nbhd, estimator, view)
}

/// Funnel correction `-J_T(e) T(e) / rho` of one component, together with the
/// normalized error `e`, its transform and whether `e` had to be clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correction {
    pub term: f64,
    pub normalized: f64,
    pub transformed: f64,
    pub clamped: bool,
}

#[inline]
pub fn correction(disagreement: f64, funnel: f64) -> Correction {
    let (e, clamped) = saturate(disagreement / funnel);
    let eps = transform(e);
    Correction {
        term: -transform_jacobian(e) * eps / funnel,
        normalized: e,
        transformed: eps,
        clamped,
    }
}

/// Right-hand side of the state observer for one slot. `drift_at_estimate` is
/// the target's drift evaluated at the estimate; it and `g_hat` are ignored
/// when the variant drops them. Returns the number of clamped components.
pub fn ppso_derivative(
    variant: ObserverVariant,
    drift_at_estimate: &[f64],
    g_hat: &[f64],
    xi: &[f64],
    rho: &[f64],
    out: &mut [f64],
) -> usize {
    let mut clamps = 0;
    for c in 0..out.len() {
        let corr = correction(xi[c], rho[c]);
        clamps += usize::from(corr.clamped);
        let mut d = corr.term;
        if variant.uses_drift() {
            d += drift_at_estimate[c];
        }
        if variant.uses_input_observer() {
            d += g_hat[c];
        }
        out[c] = d;
    }
    clamps
}

/// Right-hand side of the input observer for one slot.
pub fn ppio_derivative(mu: &[f64], omega: &[f64], out: &mut [f64]) -> usize {
    let mut clamps = 0;
    for c in 0..out.len() {
        let corr = correction(mu[c], omega[c]);
        clamps += usize::from(corr.clamped);
        out[c] = corr.term;
    }
    clamps
}

/// `max |disagreement_stack - (M kron I) (estimate_stack - truth)|`.
///
/// `disagreements` and `estimates` are member-major stacks of `dim`-vectors
/// ordered like the matrix rows.
pub fn stacked_identity_residual(
    matrix: &DisagreementMatrix,
    dim: usize,
    disagreements: &[f64],
    estimates: &[f64],
    truth: &[f64],
) -> f64 {
    let eta = matrix.eta();
    assert_eq!(disagreements.len(), eta * dim);
    assert_eq!(estimates.len(), eta * dim);
    assert_eq!(truth.len(), dim);
    let mut worst = 0.0f64;
    for a in 0..eta {
        for c in 0..dim {
            let predicted: f64 = (0..eta)
                .map(|b| matrix.m[(a, b)] * (estimates[b * dim + c] - truth[c]))
                .sum();
            worst = worst.max((disagreements[a * dim + c] - predicted).abs());
        }
    }
    worst
}

/// Residuals of both stacked identities for one target.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StackedResidual {
    pub state: f64,
    pub input: f64,
}

/// Stacked identity check for one target from full simulator knowledge.
/// `slots` must hold every estimate of `target`, in any order.
pub fn stacked_identity_check(
    topology: &Topology,
    target: usize,
    slots: &[EstimateSlot],
    x_true: &[f64],
    g_true: &[f64],
) -> Result<StackedResidual> {
    let nbhd = &topology.neighborhoods[target];
    let Some(matrix) = topology.matrices[target].as_ref() else {
        return Ok(StackedResidual::default());
    };
    let dim = x_true.len();
    let view = SlotView {
        slots,
        target,
        x_true,
        g_true,
        input: false,
    };
    let input_view = SlotView { input: true, ..view };
    let mut xi = Vec::with_capacity(nbhd.eta() * dim);
    let mut mu = Vec::with_capacity(nbhd.eta() * dim);
    let mut x_hat = Vec::with_capacity(nbhd.eta() * dim);
    let mut g_hat = Vec::with_capacity(nbhd.eta() * dim);
    for &member in &nbhd.members {
        xi.extend(state_disagreement(&topology.graph, nbhd, member, &view)?);
        mu.extend(input_disagreement(&topology.graph, nbhd, member, &input_view)?);
        let slot = view.slot(member).ok_or(Error::Protocol {
            estimator: member + 1,
            holder: member + 1,
            target: target + 1,
        })?;
        x_hat.extend_from_slice(&slot.x_hat);
        g_hat.extend_from_slice(&slot.g_hat);
    }
    Ok(StackedResidual {
        state: stacked_identity_residual(matrix, dim, &xi, &x_hat, x_true),
        input: stacked_identity_residual(matrix, dim, &mu, &g_hat, g_true),
    })
}

#[derive(Clone, Copy)]
struct SlotView<'a> {
    slots: &'a [EstimateSlot],
    target: usize,
    x_true: &'a [f64],
    g_true: &'a [f64],
    input: bool,
}

impl SlotView<'_> {
    fn slot(&self, holder: usize) -> Option<&EstimateSlot> {
        self.slots
            .iter()
            .find(|s| s.estimator == holder && s.target == self.target)
    }
}

impl LocalView for SlotView<'_> {
    fn estimate(&self, holder: usize, target: usize) -> Option<&[f64]> {
        if target != self.target {
            return None;
        }
        self.slot(holder)
            .map(|s| if self.input { &s.g_hat[..] } else { &s.x_hat[..] })
    }

    fn truth(&self, _source: usize, target: usize) -> Option<&[f64]> {
        (target == self.target).then_some(if self.input { self.g_true } else { self.x_true })
    }
}

/// Largest absolute entry of the stacked estimation error of one target.
pub fn max_abs_error(estimates: &[f64], truth: &[f64]) -> f64 {
    let dim = truth.len();
    estimates
        .chunks(dim)
        .map(|est| est.iter().zip(truth).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
        .fold(0.0, f64::max)
}

/// Bound `||x_tilde|| <= ||xi|| / lambda_min` of the stacked error of one
/// target and component, evaluated on stacks. Returns `(lhs, rhs)`.
pub fn error_bound_chain(matrix: &DisagreementMatrix, errors: &[f64], disagreements: &[f64]) -> (f64, f64) {
    let lhs = crate::linalg::norm2(errors);
    let rhs = crate::linalg::norm2(disagreements) / matrix.lambda_min;
    (lhs, rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{disagreement_matrix, khop_neighbors};
    use std::collections::HashMap;

    /// View over a hash map of estimates keyed by (holder, target) plus truth.
    struct MapView {
        estimates: HashMap<(usize, usize), Vec<f64>>,
        truth: HashMap<usize, Vec<f64>>,
    }

    impl LocalView for MapView {
        fn estimate(&self, holder: usize, target: usize) -> Option<&[f64]> {
            self.estimates.get(&(holder, target)).map(Vec::as_slice)
        }
        fn truth(&self, _source: usize, target: usize) -> Option<&[f64]> {
            self.truth.get(&target).map(Vec::as_slice)
        }
    }

    #[test]
    fn four_cycle_disagreement() {
        // Target 1 (id 0), estimator 3 (id 2): two shared neighbors, no peers.
        let g = Graph::cycle(4);
        let nbhd = khop_neighbors(&g, 0, 2, NeighborhoodMode::Standard).unwrap();
        let view = MapView {
            estimates: HashMap::from([((2, 0), vec![0.7])]),
            truth: HashMap::from([(0, vec![0.2])]),
        };
        let xi = state_disagreement(&g, &nbhd, 2, &view).unwrap();
        assert!((xi[0] - 2.0 * (0.7 - 0.2)).abs() < 1e-15);
    }

    #[test]
    fn four_cycle_input_disagreement_doubles_error() {
        let g = Graph::cycle(4);
        let nbhd = khop_neighbors(&g, 0, 2, NeighborhoodMode::Standard).unwrap();
        let c = 0.25;
        let view = MapView {
            estimates: HashMap::from([((2, 0), vec![1.0 + c, -2.0 + c])]),
            truth: HashMap::from([(0, vec![1.0, -2.0])]),
        };
        let mu = input_disagreement(&g, &nbhd, 2, &view).unwrap();
        assert_eq!(mu, vec![2.0 * c, 2.0 * c]);
    }

    #[test]
    fn five_path_disagreement() {
        // Target 1, k = 3, estimator 3 with x_hat = 1, peer 4 with 0.5, truth 0.
        let g = Graph::path(5);
        let nbhd = khop_neighbors(&g, 0, 3, NeighborhoodMode::Standard).unwrap();
        let view = MapView {
            estimates: HashMap::from([((2, 0), vec![1.0]), ((3, 0), vec![0.5])]),
            truth: HashMap::from([(0, vec![0.0])]),
        };
        let xi = state_disagreement(&g, &nbhd, 2, &view).unwrap();
        assert_eq!(xi, vec![1.5]);
    }

    #[test]
    fn exact_estimates_give_zero() {
        let g = Graph::path(5);
        let nbhd = khop_neighbors(&g, 0, 3, NeighborhoodMode::Standard).unwrap();
        let x = vec![0.3, -1.1];
        let view = MapView {
            estimates: HashMap::from([((2, 0), x.clone()), ((3, 0), x.clone())]),
            truth: HashMap::from([(0, x.clone())]),
        };
        for e in [2, 3] {
            assert_eq!(state_disagreement(&g, &nbhd, e, &view).unwrap(), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn missing_peer_estimate_is_protocol_error() {
        let g = Graph::path(5);
        let nbhd = khop_neighbors(&g, 0, 3, NeighborhoodMode::Standard).unwrap();
        let view = MapView {
            estimates: HashMap::from([((2, 0), vec![1.0])]),
            truth: HashMap::from([(0, vec![0.0])]),
        };
        assert!(matches!(
            state_disagreement(&g, &nbhd, 2, &view),
            Err(Error::Protocol {
                estimator: 3,
                holder: 4,
                target: 1
            })
        ));
    }

    #[test]
    fn extended_mode_reads_truth_from_target() {
        // 5-path, target 1, extended: estimator 2 is adjacent to the target.
        let g = Graph::path(5);
        let nbhd = khop_neighbors(&g, 0, 3, NeighborhoodMode::Extended).unwrap();
        let view = MapView {
            estimates: HashMap::from([
                ((1, 0), vec![1.0]),
                ((2, 0), vec![0.5]),
                ((3, 0), vec![0.0]),
            ]),
            truth: HashMap::from([(0, vec![0.25])]),
        };
        // 2: peer 3 -> (1 - 0.5), truth -> (1 - 0.25).
        assert_eq!(state_disagreement(&g, &nbhd, 1, &view).unwrap(), vec![1.25]);
        // 3: peers 2 and 4, no truth term in extended mode.
        assert_eq!(state_disagreement(&g, &nbhd, 2, &view).unwrap(), vec![0.0]);
    }

    #[test]
    fn ppso_correction_values() {
        let mut out = [0.0];
        let clamps = ppso_derivative(ObserverVariant::NoDriftNoInput, &[9.0], &[9.0], &[0.0], &[1.0], &mut out);
        assert_eq!((out[0], clamps), (0.0, 0));

        ppso_derivative(ObserverVariant::NoDriftNoInput, &[0.0], &[0.0], &[0.5], &[1.0], &mut out);
        let want = -(8.0 / 3.0) * 3f64.ln();
        assert!((out[0] - want).abs() < 1e-14);
        assert!((want + 2.9297).abs() < 1e-4);

        ppso_derivative(ObserverVariant::Full, &[0.1], &[0.2], &[0.5], &[1.0], &mut out);
        assert!((out[0] - (want + 0.3)).abs() < 1e-14);
        ppso_derivative(ObserverVariant::NoInputObserver, &[0.1], &[0.2], &[0.5], &[1.0], &mut out);
        assert!((out[0] - (want + 0.1)).abs() < 1e-14);
        ppso_derivative(ObserverVariant::NoDrift, &[0.1], &[0.2], &[0.5], &[1.0], &mut out);
        assert!((out[0] - (want + 0.2)).abs() < 1e-14);
    }

    #[test]
    fn ppio_values_and_oddness() {
        let mut a = [0.0];
        let mut b = [0.0];
        ppio_derivative(&[0.0], &[2.0], &mut a);
        assert_eq!(a[0], 0.0);
        ppio_derivative(&[1.0], &[2.0], &mut a);
        assert!((a[0] + 0.5 * (8.0 / 3.0) * 3f64.ln()).abs() < 1e-14);
        assert!((a[0] + 1.4648).abs() < 1e-4);
        ppio_derivative(&[-1.0], &[2.0], &mut b);
        assert_eq!(a[0], -b[0]);
    }

    #[test]
    fn correction_opposes_disagreement() {
        for e in [-0.9, -0.3, -1e-6, 1e-6, 0.4, 0.95] {
            let c = correction(e * 0.7, 0.7);
            assert!(c.term * e < 0.0, "{e}");
            assert!(!c.clamped);
        }
        assert!(correction(1.0, 1.0).clamped);
    }

    #[test]
    fn stacked_identity_on_five_path() {
        let g = Graph::path(5);
        let topo = Topology::new(g.clone(), 3, NeighborhoodMode::Standard).unwrap();
        let slots = vec![
            EstimateSlot { estimator: 2, target: 0, x_hat: vec![0.3, 1.0], g_hat: vec![-0.2, 0.0] },
            EstimateSlot { estimator: 3, target: 0, x_hat: vec![-0.7, 0.1], g_hat: vec![0.4, 0.9] },
        ];
        let x = [0.05, -0.3];
        let gu = [0.5, 0.5];
        let r = stacked_identity_check(&topo, 0, &slots, &x, &gu).unwrap();
        assert!(r.state <= 1e-12 && r.input <= 1e-12, "{r:?}");

        // Hand oracle: M = [[2,-1],[-1,1]].
        let m = disagreement_matrix(&g, &khop_neighbors(&g, 0, 3, NeighborhoodMode::Standard).unwrap()).unwrap();
        let e3 = [0.3 - 0.05, 1.0 + 0.3];
        let e4 = [-0.7 - 0.05, 0.1 + 0.3];
        let xi3 = [2.0 * e3[0] - e4[0], 2.0 * e3[1] - e4[1]];
        let xi4 = [-e3[0] + e4[0], -e3[1] + e4[1]];
        let stack = [xi3[0], xi3[1], xi4[0], xi4[1]];
        let est = [0.3, 1.0, -0.7, 0.1];
        assert!(stacked_identity_residual(&m, 2, &stack, &est, &x) < 1e-15);
    }
}
