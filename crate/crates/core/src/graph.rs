//! Undirected communication topology, k-hop neighborhoods and the per-agent
//! disagreement matrices `M = L + H`.
//!
//! Node ids are 0-based in the API. Edge-list files and every user-facing
//! message use 1-based ids.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigenvalues, Matrix};

/// Undirected simple graph with sorted adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    adjacency: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from 0-based edges. Duplicate edges are merged; self-loops
    /// and out-of-range ids are rejected.
    pub fn new(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::config("graph must have at least one node"));
        }
        let mut adjacency = vec![Vec::new(); node_count];
        for (a, b) in edges {
            for n in [a, b] {
                if n >= node_count {
                    return Err(Error::InvalidNode {
                        node: n + 1,
                        node_count,
                    });
                }
            }
            if a == b {
                return Err(Error::config(format!("self-loop on node {}", a + 1)));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Graph { adjacency })
    }

    /// Same as [`Graph::new`] with 1-based edge endpoints.
    pub fn from_one_based(
        node_count: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut shifted = Vec::new();
        for (a, b) in edges {
            if a == 0 || b == 0 {
                return Err(Error::InvalidNode {
                    node: 0,
                    node_count,
                });
            }
            shifted.push((a - 1, b - 1));
        }
        Graph::new(node_count, shifted)
    }

    pub fn path(node_count: usize) -> Self {
        Graph::new(node_count, (1..node_count).map(|i| (i - 1, i))).expect("valid path")
    }

    pub fn cycle(node_count: usize) -> Self {
        Graph::new(node_count, (0..node_count).map(|i| (i, (i + 1) % node_count)))
            .expect("valid cycle")
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Edges as `(a, b)` with `a < b`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (a, list) in self.adjacency.iter().enumerate() {
            out.extend(list.iter().filter(|&&b| b > a).map(|&b| (a, b)));
        }
        out
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }

    pub fn check_node(&self, node: usize) -> Result<()> {
        if node < self.node_count() {
            Ok(())
        } else {
            Err(Error::InvalidNode {
                node: node + 1,
                node_count: self.node_count(),
            })
        }
    }

    /// Nodes adjacent to both `a` and `b`, ascending.
    pub fn common_neighbors(&self, a: usize, b: usize) -> Vec<usize> {
        let (mut i, mut j) = (0, 0);
        let (na, nb) = (&self.adjacency[a], &self.adjacency[b]);
        let mut out = Vec::new();
        while i < na.len() && j < nb.len() {
            match na[i].cmp(&nb[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    out.push(na[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out
    }

    /// Breadth-first hop distances from `source`; `None` for unreachable nodes.
    pub fn distances_from(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.node_count()];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].expect("queued nodes have a distance");
            for &v in &self.adjacency[u] {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.distances_from(0).iter().all(Option::is_some)
    }

    /// Parses the edge-list format: first non-comment line is the node count,
    /// every further line an edge `i j` with 1-based ids. `#` starts a comment.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut node_count = None;
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::GraphParse {
                line: lineno + 1,
                message,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            match node_count {
                None => {
                    if fields.len() != 1 {
                        return Err(parse_err(format!("expected node count, got {line:?}")));
                    }
                    let n: usize = fields[0]
                        .parse()
                        .map_err(|e| parse_err(format!("bad node count: {e}")))?;
                    node_count = Some(n);
                }
                Some(n) => {
                    if fields.len() != 2 {
                        return Err(parse_err(format!("expected `i j`, got {line:?}")));
                    }
                    let mut ends = [0usize; 2];
                    for (slot, f) in ends.iter_mut().zip(&fields) {
                        *slot = f
                            .parse()
                            .map_err(|e| parse_err(format!("bad node id {f:?}: {e}")))?;
                        if *slot == 0 || *slot > n {
                            return Err(parse_err(format!("node id {slot} outside 1..={n}")));
                        }
                    }
                    if ends[0] == ends[1] {
                        return Err(parse_err(format!("self-loop on node {}", ends[0])));
                    }
                    edges.push((ends[0] - 1, ends[1] - 1));
                }
            }
        }
        let n = node_count.ok_or(Error::GraphParse {
            line: 0,
            message: "empty edge list".into(),
        })?;
        Graph::new(n, edges)
    }

    pub fn read_edge_list(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Graph::parse_edge_list(&text)
    }

    pub fn to_edge_list(&self) -> String {
        let mut s = format!("{}\n", self.node_count());
        for (a, b) in self.edges() {
            let _ = writeln!(s, "{} {}", a + 1, b + 1);
        }
        s
    }
}

/// Which nodes count as k-hop neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighborhoodMode {
    /// Nodes at hop distance 2..=k; the true state reaches estimators through
    /// common 1-hop neighbors.
    #[default]
    Standard,
    /// Nodes at hop distance 1..=k; for use when 1-hop neighbors cannot relay
    /// the states they observe.
    Extended,
}

impl NeighborhoodMode {
    fn min_hops(self) -> usize {
        match self {
            NeighborhoodMode::Standard => 2,
            NeighborhoodMode::Extended => 1,
        }
    }
}

/// The agents that estimate (and are estimated by) `agent`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KhopNeighborhood {
    pub agent: usize,
    pub k: usize,
    pub mode: NeighborhoodMode,
    /// Ascending node ids. This order fixes every stacked vector of the agent.
    pub members: Vec<usize>,
}

impl KhopNeighborhood {
    pub fn eta(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, node: usize) -> bool {
        self.members.binary_search(&node).is_ok()
    }

    pub fn position(&self, node: usize) -> Option<usize> {
        self.members.binary_search(&node).ok()
    }
}

pub fn khop_neighbors(
    g: &Graph,
    agent: usize,
    k: usize,
    mode: NeighborhoodMode,
) -> Result<KhopNeighborhood> {
    g.check_node(agent)?;
    if k < 2 {
        return Err(Error::InvalidHopBound(k));
    }
    let lo = mode.min_hops();
    let members = g
        .distances_from(agent)
        .into_iter()
        .enumerate()
        .filter_map(|(node, d)| d.filter(|&d| (lo..=k).contains(&d)).map(|_| node))
        .collect();
    Ok(KhopNeighborhood {
        agent,
        k,
        mode,
        members,
    })
}

/// Weight of the true-value residual in the disagreement of `member` about
/// `target`: the number of 1-hop neighbors shared with the target (standard),
/// or 1 for direct neighbors of the target and 0 otherwise (extended).
pub fn truth_weight(g: &Graph, target: usize, member: usize, mode: NeighborhoodMode) -> usize {
    match mode {
        NeighborhoodMode::Standard => g.common_neighbors(member, target).len(),
        NeighborhoodMode::Extended => usize::from(g.has_edge(member, target)),
    }
}

/// `M = L + H` for one agent, with its extreme eigenvalues.
#[derive(Debug, Clone)]
pub struct DisagreementMatrix {
    pub agent: usize,
    /// Node ids of the rows, same order as the neighborhood.
    pub members: Vec<usize>,
    /// Laplacian of the subgraph induced on the neighborhood members.
    pub laplacian: Matrix,
    /// Diagonal of `H`.
    pub truth_weights: Vec<f64>,
    pub m: Matrix,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl DisagreementMatrix {
    pub fn eta(&self) -> usize {
        self.truth_weights.len()
    }

    pub fn is_positive_definite(&self) -> bool {
        self.lambda_min > 0.0
    }
}

pub fn disagreement_matrix(g: &Graph, nbhd: &KhopNeighborhood) -> Result<DisagreementMatrix> {
    if nbhd.is_empty() {
        return Err(Error::EmptyNeighborhood {
            agent: nbhd.agent + 1,
        });
    }
    let eta = nbhd.eta();
    let mut laplacian = Matrix::zeros(eta, eta);
    for (a, &p) in nbhd.members.iter().enumerate() {
        for &q in g.neighbors(p) {
            if let Some(b) = nbhd.position(q) {
                laplacian[(a, b)] -= 1.0;
                laplacian[(a, a)] += 1.0;
            }
        }
    }
    let truth_weights: Vec<f64> = nbhd
        .members
        .iter()
        .map(|&p| truth_weight(g, nbhd.agent, p, nbhd.mode) as f64)
        .collect();
    let m = laplacian.add(&Matrix::from_diagonal(&truth_weights));
    let ev = symmetric_eigenvalues(&m);
    Ok(DisagreementMatrix {
        agent: nbhd.agent,
        members: nbhd.members.clone(),
        laplacian,
        truth_weights,
        lambda_min: ev[0],
        lambda_max: ev[eta - 1],
        m,
    })
}

/// Neighborhood and disagreement matrix of every agent of a graph.
#[derive(Debug, Clone)]
pub struct Topology {
    pub graph: Graph,
    pub k: usize,
    pub mode: NeighborhoodMode,
    pub neighborhoods: Vec<KhopNeighborhood>,
    /// `None` for agents with an empty neighborhood.
    pub matrices: Vec<Option<DisagreementMatrix>>,
}

impl Topology {
    pub fn new(graph: Graph, k: usize, mode: NeighborhoodMode) -> Result<Self> {
        let mut neighborhoods = Vec::with_capacity(graph.node_count());
        let mut matrices = Vec::with_capacity(graph.node_count());
        for agent in 0..graph.node_count() {
            let nbhd = khop_neighbors(&graph, agent, k, mode)?;
            matrices.push(if nbhd.is_empty() {
                None
            } else {
                Some(disagreement_matrix(&graph, &nbhd)?)
            });
            neighborhoods.push(nbhd);
        }
        Ok(Topology {
            graph,
            k,
            mode,
            neighborhoods,
            matrices,
        })
    }
}
