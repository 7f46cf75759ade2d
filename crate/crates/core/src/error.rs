use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong while building or running a scenario.
///
/// Node ids in messages are 1-based, matching the edge-list files.
#[derive(Debug, Error)]
pub enum Error {
    #[error("node {node} is out of range for a graph with {node_count} nodes")]
    InvalidNode { node: usize, node_count: usize },

    #[error("hop bound k must be at least 2, got {0}")]
    InvalidHopBound(usize),

    #[error("agent {agent} has an empty k-hop neighborhood: nothing to estimate")]
    EmptyNeighborhood { agent: usize },

    #[error("communication graph is not connected")]
    Disconnected,

    #[error("graph parse error at line {line}: {message}")]
    GraphParse { line: usize, message: String },

    #[error("invalid performance function: {0}")]
    InvalidFunnel(String),

    #[error(
        "infeasible initialization for {what} of agent {target} estimated by agent {estimator}, \
         component {component}: |{value:.6}| >= funnel(0) = {bound:.6}; \
         a target bound with initial value of at least {min_target0:.6} would be feasible"
    )]
    Infeasible {
        what: &'static str,
        target: usize,
        estimator: usize,
        component: usize,
        value: f64,
        bound: f64,
        min_target0: f64,
    },

    #[error("funnel certificate fails for {what} of agent {target} at t = {t}: norm {norm:.6} > {limit:.6}")]
    Certificate {
        what: &'static str,
        target: usize,
        t: f64,
        norm: f64,
        limit: f64,
    },

    #[error("agent {estimator} needs data held by agent {holder} about agent {target}, which it cannot reach in one hop")]
    Protocol {
        estimator: usize,
        holder: usize,
        target: usize,
    },

    #[error("non-finite value at t = {t} in {location}")]
    NonFinite { t: f64, location: String },

    #[error("scenario: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
