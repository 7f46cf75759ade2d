//! Helpers shared by the integration tests: scenario loading, random graphs
//! and oracles written independently of the library.

#![allow(dead_code)]

use std::collections::VecDeque;
use std::path::PathBuf;

use khop_ppo::config::LoadedConfig;
use khop_ppo::graph::{Graph, NeighborhoodMode};
use khop_ppo::sim::Scenario;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.toml"))
}

pub const BUNDLED: [&str; 3] = ["paper8", "nodrift", "minimal"];

pub fn load(name: &str, overrides: &[&str]) -> Scenario {
    try_load(name, overrides).unwrap_or_else(|e| panic!("scenario {name}: {e}"))
}

pub fn try_load(name: &str, overrides: &[&str]) -> khop_ppo::Result<Scenario> {
    let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    let loaded = LoadedConfig::load(&scenario_path(name), None, &overrides)?;
    Scenario::build(loaded.to_spec()?)
}

/// Random connected graph on `n` nodes: a random tree plus each remaining
/// pair with probability `p`.
pub fn random_connected<R: Rng>(rng: &mut R, n: usize, p: f64) -> Graph {
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push((rng.random_range(0..v), v));
    }
    for a in 0..n {
        for b in a + 1..n {
            if !edges.contains(&(a, b)) && rng.random_bool(p) {
                edges.push((a, b));
            }
        }
    }
    Graph::new(n, edges).expect("valid graph")
}

fn adjacency(g: &Graph) -> Vec<Vec<bool>> {
    let n = g.node_count();
    let mut adj = vec![vec![false; n]; n];
    for (a, b) in g.edges() {
        adj[a][b] = true;
        adj[b][a] = true;
    }
    adj
}

fn hop_distances(adj: &[Vec<bool>], source: usize) -> Vec<usize> {
    let n = adj.len();
    let mut dist = vec![usize::MAX; n];
    dist[source] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(v) = queue.pop_front() {
        for w in 0..n {
            if adj[v][w] && dist[w] == usize::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

/// Members and disagreement matrix of `agent`, built from the adjacency
/// matrix alone.
pub fn oracle_matrix(g: &Graph, agent: usize, k: usize, mode: NeighborhoodMode) -> (Vec<usize>, DMatrix<f64>) {
    let adj = adjacency(g);
    let dist = hop_distances(&adj, agent);
    let lo = match mode {
        NeighborhoodMode::Standard => 2,
        NeighborhoodMode::Extended => 1,
    };
    let members: Vec<usize> = (0..g.node_count())
        .filter(|&v| dist[v] >= lo && dist[v] <= k)
        .collect();
    let eta = members.len();
    let mut m = DMatrix::zeros(eta, eta);
    for (a, &p) in members.iter().enumerate() {
        for (b, &q) in members.iter().enumerate() {
            if a != b && adj[p][q] {
                m[(a, b)] = -1.0;
                m[(a, a)] += 1.0;
            }
        }
        m[(a, a)] += match mode {
            NeighborhoodMode::Standard => (0..g.node_count()).filter(|&l| adj[p][l] && adj[l][agent]).count() as f64,
            NeighborhoodMode::Extended => f64::from(u8::from(adj[p][agent])),
        };
    }
    (members, m)
}

pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `max |stack - (M kron I)(estimates - truth)|` with the product formed by
/// nalgebra. Stacks are member-major with `dim` components per member.
pub fn oracle_residual(m: &DMatrix<f64>, dim: usize, stack: &[f64], estimates: &[f64], truth: &[f64]) -> f64 {
    let eta = m.nrows();
    let mut worst = 0.0f64;
    for c in 0..dim {
        let err = DMatrix::from_fn(eta, 1, |a, _| estimates[a * dim + c] - truth[c]);
        let predicted = m * err;
        for a in 0..eta {
            worst = worst.max((stack[a * dim + c] - predicted[(a, 0)]).abs());
        }
    }
    worst
}
