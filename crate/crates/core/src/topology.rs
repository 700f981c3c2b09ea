//! Network graphs, initial value assignments and spots.
//!
//! Nodes are indexed `0..n` internally. Anything user facing (traces, CLI
//! output) prints them 1-based, matching the usual `1..N` numbering. Mesh
//! nodes are numbered row-major.

use std::collections::VecDeque;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum number of whole-graph resamples when conditioning an
/// Erdős–Rényi sample on connectivity.
pub const ER_MAX_RETRIES: usize = 1000;

/// A value level `l_k`. Stored 0-based, displayed 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Level(u16);

impl Level {
    pub const fn new(index: usize) -> Self {
        Level(index as u16)
    }

    #[inline]
    pub const fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "l{}", self.0 as usize + 1)
    }
}

/// Undirected, connected, simple graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    neighbors: Vec<Vec<usize>>,
    edge_count: usize,
    diameter: usize,
    max_degree: usize,
}

impl Graph {
    /// Builds a graph from an undirected edge list. Duplicate edges are
    /// merged; self-loops and out-of-range endpoints are rejected, and so is
    /// a disconnected result.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidTopology(
                "graph needs at least one node".into(),
            ));
        }
        let mut neighbors = vec![Vec::new(); n];
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::InvalidTopology(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            if u == v {
                return Err(Error::InvalidTopology(format!("self-loop at node {u}")));
            }
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Self::from_neighbors(neighbors)
    }

    fn from_neighbors(neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let diameter = diameter(&neighbors)?;
        let max_degree = neighbors.iter().map(Vec::len).max().unwrap_or(0);
        let edge_count = neighbors.iter().map(Vec::len).sum::<usize>() / 2;
        Ok(Graph {
            neighbors,
            edge_count,
            diameter,
            max_degree,
        })
    }

    pub fn complete(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidTopology(
                "complete graph needs at least one node".into(),
            ));
        }
        let neighbors = (0..n)
            .map(|i| (0..n).filter(|&j| j != i).collect())
            .collect();
        Self::from_neighbors(neighbors)
    }

    /// `rows × cols` grid, node `r * cols + c`.
    pub fn mesh(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidTopology(format!(
                "mesh dimensions {rows}x{cols} have no nodes"
            )));
        }
        let mut edges = Vec::with_capacity(2 * rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                if c + 1 < cols {
                    edges.push((i, i + 1));
                }
                if r + 1 < rows {
                    edges.push((i, i + cols));
                }
            }
        }
        Self::from_edges(rows * cols, edges)
    }

    pub fn path(n: usize) -> Result<Self> {
        Self::from_edges(n, (1..n).map(|i| (i - 1, i)))
    }

    /// Star with node 0 at the centre.
    pub fn star(leaves: usize) -> Result<Self> {
        Self::from_edges(leaves + 1, (1..=leaves).map(|i| (0, i)))
    }

    /// Samples G(n, p) until a connected sample appears.
    pub fn erdos_renyi<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidTopology(
                "Erdős–Rényi graph needs at least one node".into(),
            ));
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidTopology(format!(
                "edge probability {p} outside (0, 1]"
            )));
        }
        for _ in 0..ER_MAX_RETRIES {
            let mut neighbors = vec![Vec::new(); n];
            for u in 0..n {
                for v in u + 1..n {
                    if rng.random::<f64>() < p {
                        neighbors[u].push(v);
                        neighbors[v].push(u);
                    }
                }
            }
            match Self::from_neighbors(neighbors) {
                Ok(g) => return Ok(g),
                Err(Error::NotConnected) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(Error::ConnectivityRetryLimit {
            attempts: ER_MAX_RETRIES,
        })
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.neighbors.len()
    }

    #[inline]
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    /// Hop-count diameter; 0 for a single node.
    pub fn diameter(&self) -> usize {
        self.diameter
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn are_adjacent(&self, u: usize, v: usize) -> bool {
        self.neighbors[u].binary_search(&v).is_ok()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors.iter().enumerate().flat_map(|(u, ns)| {
            ns.iter()
                .copied()
                .filter(move |&v| u < v)
                .map(move |v| (u, v))
        })
    }

    /// Diameter used for protocol scheduling: the exact diameter or the
    /// upper bound `N`, never below 1.
    pub fn scheduling_diameter(&self, mode: DiameterMode) -> usize {
        match mode {
            DiameterMode::Exact => self.diameter.max(1),
            DiameterMode::UpperBoundN => self.node_count().max(1),
        }
    }
}

/// Which diameter figure the nodes schedule with.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiameterMode {
    #[default]
    Exact,
    UpperBoundN,
}

impl std::str::FromStr for DiameterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(DiameterMode::Exact),
            "upper_bound_n" | "upper-bound-n" => Ok(DiameterMode::UpperBoundN),
            other => Err(Error::Config(format!("unknown d_mode `{other}`"))),
        }
    }
}

impl fmt::Display for DiameterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiameterMode::Exact => "exact",
            DiameterMode::UpperBoundN => "upper_bound_n",
        })
    }
}

/// Exact hop-count diameter by BFS from every node.
pub fn diameter(neighbors: &[Vec<usize>]) -> Result<usize> {
    let n = neighbors.len();
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::with_capacity(n);
    let mut best = 0;
    for source in 0..n {
        dist.fill(usize::MAX);
        dist[source] = 0;
        queue.clear();
        queue.push_back(source);
        let mut reached = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &neighbors[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    best = best.max(dist[v]);
                    reached += 1;
                    queue.push_back(v);
                }
            }
        }
        if reached != n {
            return Err(Error::NotConnected);
        }
    }
    Ok(best)
}

/// Topology family, without a size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Complete,
    Mesh2d,
    ErdosRenyi,
}

impl TopologyKind {
    pub const ALL: [TopologyKind; 3] = [
        TopologyKind::Complete,
        TopologyKind::Mesh2d,
        TopologyKind::ErdosRenyi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TopologyKind::Complete => "complete",
            TopologyKind::Mesh2d => "mesh2d",
            TopologyKind::ErdosRenyi => "erdos_renyi",
        }
    }

    /// Concrete spec with `n` nodes. Meshes use the most square
    /// factorisation `rows × cols = n` with `rows ≤ cols`.
    pub fn with_nodes(self, n: usize) -> TopologySpec {
        match self {
            TopologyKind::Complete => TopologySpec::Complete { nodes: n },
            TopologyKind::Mesh2d => {
                let mut rows = (n as f64).sqrt() as usize;
                while rows > 1 && n % rows != 0 {
                    rows -= 1;
                }
                let rows = rows.max(1);
                TopologySpec::Mesh2d {
                    rows,
                    cols: n / rows,
                }
            }
            TopologyKind::ErdosRenyi => TopologySpec::ErdosRenyi {
                nodes: n,
                edge_probability: None,
            },
        }
    }
}

impl std::str::FromStr for TopologyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complete" | "full" => Ok(TopologyKind::Complete),
            "mesh2d" | "mesh" => Ok(TopologyKind::Mesh2d),
            "erdos_renyi" | "er" => Ok(TopologyKind::ErdosRenyi),
            other => Err(Error::Config(format!("unknown topology `{other}`"))),
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TopologySpec {
    Complete {
        nodes: usize,
    },
    Mesh2d {
        rows: usize,
        cols: usize,
    },
    /// `edge_probability = None` uses `(2/N)·log₂N`.
    ErdosRenyi {
        nodes: usize,
        edge_probability: Option<f64>,
    },
}

impl TopologySpec {
    pub fn kind(&self) -> TopologyKind {
        match self {
            TopologySpec::Complete { .. } => TopologyKind::Complete,
            TopologySpec::Mesh2d { .. } => TopologyKind::Mesh2d,
            TopologySpec::ErdosRenyi { .. } => TopologyKind::ErdosRenyi,
        }
    }

    pub fn node_count(&self) -> usize {
        match *self {
            TopologySpec::Complete { nodes } | TopologySpec::ErdosRenyi { nodes, .. } => nodes,
            TopologySpec::Mesh2d { rows, cols } => rows * cols,
        }
    }

    /// Whether [`build`] ignores its random source for this spec.
    pub fn is_deterministic(&self) -> bool {
        !matches!(self, TopologySpec::ErdosRenyi { .. })
    }
}

/// Default Erdős–Rényi edge probability `(2/N)·log₂N`, capped at 1.
pub fn default_er_probability(n: usize) -> f64 {
    if n < 2 {
        return 1.0;
    }
    let n = n as f64;
    (2.0 / n * n.log2()).min(1.0)
}

/// Builds a connected graph for `spec`.
pub fn build<R: Rng + ?Sized>(spec: &TopologySpec, rng: &mut R) -> Result<Graph> {
    match *spec {
        TopologySpec::Complete { nodes } => Graph::complete(nodes),
        TopologySpec::Mesh2d { rows, cols } => Graph::mesh(rows, cols),
        TopologySpec::ErdosRenyi {
            nodes,
            edge_probability,
        } => {
            let p = edge_probability.unwrap_or_else(|| default_er_probability(nodes));
            Graph::erdos_renyi(nodes, p, rng)
        }
    }
}

/// Initial values `v_i(0)` together with the per-level counts `#l_j(0)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelAssignment {
    values: Vec<Level>,
    counts: Vec<usize>,
}

impl LevelAssignment {
    pub fn new(values: Vec<Level>, levels: usize) -> Result<Self> {
        if levels == 0 {
            return Err(Error::InvalidParameter("need at least one level".into()));
        }
        let mut counts = vec![0; levels];
        for v in &values {
            if v.index() >= levels {
                return Err(Error::LevelOutOfRange {
                    index: v.index(),
                    levels,
                });
            }
            counts[v.index()] += 1;
        }
        Ok(LevelAssignment { values, counts })
    }

    /// Convenience constructor from 0-based level indices.
    pub fn from_indices(indices: &[usize], levels: usize) -> Result<Self> {
        Self::new(indices.iter().map(|&i| Level::new(i)).collect(), levels)
    }

    pub fn values(&self) -> &[Level] {
        &self.values
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn levels(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The level held by strictly more nodes than any other, if any.
    pub fn plurality(&self) -> Option<Level> {
        strict_plurality(&self.counts)
    }
}

/// Index of the unique maximum of `counts`.
pub(crate) fn strict_plurality(counts: &[usize]) -> Option<Level> {
    let (best, &max) = counts.iter().enumerate().max_by_key(|&(_, c)| *c)?;
    let ties = counts.iter().filter(|&&c| c == max).count();
    (ties == 1).then_some(Level::new(best))
}

/// Spots: connected components of the subgraph keeping only edges whose
/// endpoints share a value. Each spot is sorted; spots are ordered by their
/// smallest node.
pub fn spots(graph: &Graph, assignment: &LevelAssignment) -> Result<Vec<Vec<usize>>> {
    let n = graph.node_count();
    if assignment.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: assignment.len(),
        });
    }
    let values = assignment.values();
    let mut spot_of = vec![usize::MAX; n];
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if spot_of[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut members = vec![start];
        spot_of[start] = id;
        stack.push(start);
        while let Some(u) = stack.pop() {
            for &v in graph.neighbors(u) {
                if spot_of[v] == usize::MAX && values[v] == values[u] {
                    spot_of[v] = id;
                    members.push(v);
                    stack.push(v);
                }
            }
        }
        members.sort_unstable();
        out.push(members);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::trial_rng;

    #[test]
    fn complete_graph_identities() {
        let g = Graph::complete(4).unwrap();
        assert_eq!(g.edge_count(), 6);
        assert_eq!(g.diameter(), 1);
        assert_eq!(g.max_degree(), 3);
        assert_eq!(Graph::complete(7).unwrap().diameter(), 1);
    }

    #[test]
    fn mesh_identities() {
        let g = Graph::mesh(4, 4).unwrap();
        assert_eq!(g.node_count(), 16);
        assert_eq!(g.edge_count(), 24);
        assert_eq!(g.diameter(), 6);
        assert_eq!(g.max_degree(), 4);
        assert_eq!(Graph::mesh(2, 3).unwrap().diameter(), 3);
        // row-major: 0-1 horizontal, 0-4 vertical
        assert!(g.are_adjacent(0, 1) && g.are_adjacent(0, 4) && !g.are_adjacent(3, 4));
    }

    #[test]
    fn path_diameter() {
        assert_eq!(Graph::path(5).unwrap().diameter(), 4);
    }

    #[test]
    fn single_node_graph() {
        let g = Graph::complete(1).unwrap();
        assert_eq!(g.diameter(), 0);
        assert_eq!(g.scheduling_diameter(DiameterMode::Exact), 1);
        assert_eq!(g.max_degree(), 0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(Graph::mesh(0, 3), Err(Error::InvalidTopology(_))));
        assert!(matches!(
            Graph::from_edges(3, [(0, 0)]),
            Err(Error::InvalidTopology(_))
        ));
        assert!(matches!(
            Graph::from_edges(4, [(0, 1), (2, 3)]),
            Err(Error::NotConnected)
        ));
        let mut rng = trial_rng(1);
        assert!(Graph::erdos_renyi(10, 0.0, &mut rng).is_err());
        assert!(Graph::erdos_renyi(10, 1.5, &mut rng).is_err());
    }

    #[test]
    fn diameter_rejects_disconnected() {
        let adj = vec![vec![1], vec![0], vec![]];
        assert!(matches!(diameter(&adj), Err(Error::NotConnected)));
    }

    #[test]
    fn er_retry_limit() {
        // p tiny: essentially never connected at n = 50
        let mut rng = trial_rng(3);
        let err = Graph::erdos_renyi(50, 1e-6, &mut rng).unwrap_err();
        assert!(matches!(
            err,
            Error::ConnectivityRetryLimit { attempts: 1000 }
        ));
    }

    #[test]
    fn er_default_probability() {
        let p = default_er_probability(100);
        assert!((p - 0.132_877).abs() < 1e-6, "{p}");
        assert_eq!(default_er_probability(2), 1.0);
    }

    #[test]
    fn er_mean_degree() {
        // Expected N·p ≈ 13.2; conditioning on connectivity barely moves it.
        let spec = TopologySpec::ErdosRenyi {
            nodes: 100,
            edge_probability: None,
        };
        let mut total = 0.0;
        for seed in 0..100 {
            let g = build(&spec, &mut trial_rng(seed)).unwrap();
            total += 2.0 * g.edge_count() as f64 / 100.0;
        }
        let mean = total / 100.0;
        assert!((mean - 13.2).abs() < 2.0, "mean degree {mean}");
    }

    #[test]
    fn mesh_factorisation() {
        assert_eq!(
            TopologyKind::Mesh2d.with_nodes(100),
            TopologySpec::Mesh2d { rows: 10, cols: 10 }
        );
        assert_eq!(
            TopologyKind::Mesh2d.with_nodes(20),
            TopologySpec::Mesh2d { rows: 4, cols: 5 }
        );
        assert_eq!(
            TopologyKind::Mesh2d.with_nodes(7),
            TopologySpec::Mesh2d { rows: 1, cols: 7 }
        );
    }

    #[test]
    fn spots_on_small_mesh() {
        let g = Graph::mesh(2, 2).unwrap();
        let a = LevelAssignment::from_indices(&[0, 0, 1, 0], 2).unwrap();
        assert_eq!(spots(&g, &a).unwrap(), vec![vec![0, 1, 3], vec![2]]);
    }

    #[test]
    fn spots_extremes() {
        let g = Graph::complete(3).unwrap();
        let a = LevelAssignment::from_indices(&[0, 1, 2], 3).unwrap();
        assert_eq!(spots(&g, &a).unwrap(), vec![vec![0], vec![1], vec![2]]);
        let g = Graph::mesh(3, 3).unwrap();
        let a = LevelAssignment::from_indices(&[1; 9], 2).unwrap();
        assert_eq!(spots(&g, &a).unwrap(), vec![(0..9).collect::<Vec<_>>()]);
    }

    #[test]
    fn spots_length_mismatch() {
        let g = Graph::complete(3).unwrap();
        let a = LevelAssignment::from_indices(&[0, 1], 2).unwrap();
        assert!(matches!(spots(&g, &a), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn plurality() {
        let a = LevelAssignment::from_indices(&[0, 1, 1], 2).unwrap();
        assert_eq!(a.plurality(), Some(Level::new(1)));
        let a = LevelAssignment::from_indices(&[0, 1], 2).unwrap();
        assert_eq!(a.plurality(), None);
        assert!(LevelAssignment::from_indices(&[0, 2], 2).is_err());
    }
}
