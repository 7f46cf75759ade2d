//! Decentralized k-hop prescribed performance observers for multi-agent
//! systems.
//!
//! Every agent estimates the state and input of the agents within `k` hops of
//! the communication graph, using only what its direct neighbors share. The
//! estimation errors are confined to exponentially shrinking funnels by a
//! logarithmic error transformation.

pub mod config;
pub mod error;
pub mod funnel;
pub mod graph;
pub mod linalg;
pub mod observer;
pub mod plant;
pub mod sim;

pub use error::{Error, Result};
pub use funnel::{Channel, Funnel, FunnelBank};
pub use graph::{
    disagreement_matrix, khop_neighbors, DisagreementMatrix, Graph, KhopNeighborhood,
    NeighborhoodMode, Topology,
};
pub use observer::ObserverVariant;
pub use sim::{run, Scenario, ScenarioSpec, Trajectory};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/neighborhoods.md")]
    pub struct Neighborhoods;
    #[doc = include_str!("../../../book/src/funnels.md")]
    pub struct Funnels;
    #[doc = include_str!("../../../book/src/observers.md")]
    pub struct Observers;
    #[doc = include_str!("../../../book/src/closed_loop.md")]
    pub struct ClosedLoop;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
