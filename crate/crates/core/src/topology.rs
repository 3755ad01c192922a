//! Network topologies, the path set X, and the design matrix.
//!
//! A topology is an undirected graph whose edges carry a mean latency in
//! seconds. The path set holds one latency-weighted shortest path per
//! unordered node pair; each path is a binary edge-indicator vector.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path as FsPath;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Edge latency range produced by the geometric generator, in seconds.
pub const MIN_GENERATED_LATENCY: f64 = 0.001;
pub const MAX_GENERATED_LATENCY: f64 = 0.036;

const GENERATOR_ATTEMPTS: usize = 100;

/// Connection radius giving an expected degree of about six before
/// boundary effects, capped at the unit-square diagonal.
pub fn default_radius(n_nodes: usize) -> f64 {
    (6.0 / (std::f64::consts::PI * n_nodes.max(1) as f64)).sqrt().min(std::f64::consts::SQRT_2)
}
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub latency_s: f64,
}

/// Validated undirected topology.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    nodes: Vec<String>,
    edges: Vec<Edge>,
    paths: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub u: String,
    pub v: String,
    pub latency_s: f64,
}

/// On-disk topology schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyFile {
    pub nodes: Vec<String>,
    pub edges: Vec<EdgeRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paths: Option<Vec<Vec<usize>>>,
}

impl Topology {
    pub fn new(nodes: Vec<String>, edges: Vec<EdgeRecord>) -> Result<Self> {
        Self::from_file(TopologyFile { nodes, edges, paths: None })
    }

    pub fn from_file(file: TopologyFile) -> Result<Self> {
        let mut index = HashMap::with_capacity(file.nodes.len());
        for (i, id) in file.nodes.iter().enumerate() {
            if index.insert(id.as_str(), i).is_some() {
                return Err(Error::Validation(format!("duplicate node id {id:?}")));
            }
        }
        let mut seen = BTreeSet::new();
        let mut edges = Vec::with_capacity(file.edges.len());
        for (k, rec) in file.edges.iter().enumerate() {
            let lookup = |id: &str| {
                index.get(id).copied().ok_or_else(|| {
                    Error::Validation(format!("edge {k} ({}, {}): unknown node {id:?}", rec.u, rec.v))
                })
            };
            let u = lookup(&rec.u)?;
            let v = lookup(&rec.v)?;
            if u == v {
                return Err(Error::Validation(format!("edge {k} ({}, {}): self-loop", rec.u, rec.v)));
            }
            if !(rec.latency_s.is_finite() && rec.latency_s > 0.0) {
                return Err(Error::Validation(format!(
                    "edge {k} ({}, {}): latency {} must be positive and finite",
                    rec.u, rec.v, rec.latency_s
                )));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(Error::Validation(format!("edge {k} ({}, {}): duplicate edge", rec.u, rec.v)));
            }
            edges.push(Edge { u, v, latency_s: rec.latency_s });
        }
        let topology = Topology { nodes: file.nodes, edges, paths: None };
        if let Some(paths) = file.paths {
            // Validate eagerly so a bad override is reported at load time.
            PathSet::from_edge_lists(&topology, &paths)?;
            return Ok(Topology { paths: Some(paths), ..topology });
        }
        Ok(topology)
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        let file: TopologyFile = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        Self::from_file(file)
    }

    pub fn to_file(&self) -> TopologyFile {
        TopologyFile {
            nodes: self.nodes.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeRecord {
                    u: self.nodes[e.u].clone(),
                    v: self.nodes[e.v].clone(),
                    latency_s: e.latency_s,
                })
                .collect(),
            paths: self.paths.clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<FsPath>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_file()).expect("topology serializes");
        fs::write(path, text + "\n").map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }

    /// Places `n_nodes` uniformly in the unit square and joins every pair
    /// closer than `connection_radius`. Placement is retried until the graph
    /// is connected. Edge latency is an affine map of Euclidean distance onto
    /// `[MIN_GENERATED_LATENCY, MAX_GENERATED_LATENCY]`.
    pub fn generate_geometric(n_nodes: usize, connection_radius: f64, seed: u64) -> Result<Self> {
        if n_nodes < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 nodes, got {n_nodes}")));
        }
        let width = (n_nodes - 1).to_string().len();
        let nodes: Vec<String> = (0..n_nodes).map(|i| format!("n{i:0width$}")).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let span = MAX_GENERATED_LATENCY - MIN_GENERATED_LATENCY;
        for _ in 0..GENERATOR_ATTEMPTS {
            let points: Vec<(f64, f64)> = (0..n_nodes).map(|_| (rng.random(), rng.random())).collect();
            let mut edges = Vec::new();
            for i in 0..n_nodes {
                for j in i + 1..n_nodes {
                    let dist = (points[i].0 - points[j].0).hypot(points[i].1 - points[j].1);
                    if dist <= connection_radius {
                        edges.push(Edge {
                            u: i,
                            v: j,
                            latency_s: MIN_GENERATED_LATENCY + span * dist / std::f64::consts::SQRT_2,
                        });
                    }
                }
            }
            let candidate = Topology { nodes: nodes.clone(), edges, paths: None };
            if candidate.is_connected() {
                return Ok(candidate);
            }
        }
        Err(Error::GenerationFailed { attempts: GENERATOR_ATTEMPTS })
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn path_override(&self) -> Option<&[Vec<usize>]> {
        self.paths.as_deref()
    }

    /// Replaces (or clears) the explicit path list.
    pub fn with_paths(mut self, paths: Option<Vec<Vec<usize>>>) -> Result<Self> {
        if let Some(p) = &paths {
            PathSet::from_edge_lists(&self, p)?;
        }
        self.paths = paths;
        Ok(self)
    }

    pub fn latencies(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.latency_s).collect()
    }

    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for (k, e) in self.edges.iter().enumerate() {
            adj[e.u].push((e.v, k));
            adj[e.v].push((e.u, k));
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return true;
        }
        let adj = self.adjacency();
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &(v, _) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Node indices sorted by id.
    fn id_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.nodes.len()).collect();
        order.sort_by(|&a, &b| self.nodes[a].cmp(&self.nodes[b]));
        order
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkPath {
    /// Sorted edge indices.
    pub edges: Vec<usize>,
    /// Node sequence from source to destination.
    pub nodes: Vec<usize>,
    pub source: usize,
    pub destination: usize,
}

/// The set X of probed paths over `d` edges, ordered by (source id,
/// destination id) where the source is the endpoint with the smaller id.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    d: usize,
    paths: Vec<NetworkPath>,
}

impl PathSet {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn n_edges(&self) -> usize {
        self.d
    }

    pub fn paths(&self) -> &[NetworkPath] {
        &self.paths
    }

    pub fn endpoints(&self) -> Vec<(usize, usize)> {
        self.paths.iter().map(|p| (p.source, p.destination)).collect()
    }

    /// Builds a path set from explicit edge lists, checking that every
    /// list is a simple path in `topology`.
    pub fn from_edge_lists(topology: &Topology, lists: &[Vec<usize>]) -> Result<Self> {
        let d = topology.n_edges();
        let mut paths = Vec::with_capacity(lists.len());
        let mut seen = BTreeSet::new();
        for (i, list) in lists.iter().enumerate() {
            let invalid = |msg: &str| Error::Validation(format!("path {i}: {msg}"));
            if list.is_empty() {
                return Err(invalid("no edges"));
            }
            let mut edges = list.clone();
            edges.sort_unstable();
            if edges.windows(2).any(|w| w[0] == w[1]) {
                return Err(invalid("repeated edge"));
            }
            if let Some(&bad) = edges.iter().find(|&&e| e >= d) {
                return Err(invalid(&format!("edge index {bad} out of range")));
            }
            if !seen.insert(edges.clone()) {
                return Err(invalid("duplicate path"));
            }
            let mut incident: HashMap<usize, Vec<usize>> = HashMap::new();
            for &e in &edges {
                let edge = &topology.edges[e];
                incident.entry(edge.u).or_default().push(e);
                incident.entry(edge.v).or_default().push(e);
            }
            if incident.values().any(|v| v.len() > 2) {
                return Err(invalid("not a simple path (branching node)"));
            }
            let mut ends: Vec<usize> = incident.iter().filter(|(_, v)| v.len() == 1).map(|(&n, _)| n).collect();
            if ends.len() != 2 {
                return Err(invalid("not a simple path (cycle or disconnected)"));
            }
            ends.sort_by(|&a, &b| topology.nodes[a].cmp(&topology.nodes[b]));
            let (source, destination) = (ends[0], ends[1]);
            let mut nodes = vec![source];
            let mut used = vec![false; edges.len()];
            let mut current = source;
            loop {
                let next = incident[&current].iter().copied().find(|&e| {
                    let pos = edges.binary_search(&e).unwrap();
                    !used[pos]
                });
                let Some(e) = next else { break };
                used[edges.binary_search(&e).unwrap()] = true;
                let edge = &topology.edges[e];
                current = if edge.u == current { edge.v } else { edge.u };
                nodes.push(current);
            }
            if used.iter().any(|u| !u) {
                return Err(invalid("not a simple path (disconnected)"));
            }
            paths.push(NetworkPath { edges, nodes, source, destination });
        }
        Ok(PathSet { d, paths })
    }
}

/// One latency-weighted shortest path per unordered node pair. Ties are
/// broken by the lexicographically smallest node-id sequence.
pub fn enumerate_paths(topology: &Topology) -> Result<PathSet> {
    let n = topology.nodes.len();
    let order = topology.id_order();
    let mut rank = vec![0; n];
    for (r, &node) in order.iter().enumerate() {
        rank[node] = r;
    }
    let adj = topology.adjacency();
    let mut edge_of = HashMap::with_capacity(topology.edges.len());
    for (k, e) in topology.edges.iter().enumerate() {
        edge_of.insert((e.u.min(e.v), e.u.max(e.v)), k);
    }

    let mut paths = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for (si, &source) in order.iter().enumerate() {
        let routes = shortest_routes(source, &adj, &topology.edges, &rank);
        for &destination in &order[si + 1..] {
            let Some(route) = &routes[destination] else {
                return Err(Error::Disconnected(
                    topology.nodes[source].clone(),
                    topology.nodes[destination].clone(),
                ));
            };
            let nodes: Vec<usize> = route.iter().map(|&r| order[r]).collect();
            let mut edges: Vec<usize> =
                nodes.windows(2).map(|w| edge_of[&(w[0].min(w[1]), w[0].max(w[1]))]).collect();
            edges.sort_unstable();
            paths.push(NetworkPath { edges, nodes, source, destination });
        }
    }
    Ok(PathSet { d: topology.edges.len(), paths })
}

/// The path set for a topology: its explicit path list when present,
/// otherwise all-pairs shortest paths.
pub fn path_set(topology: &Topology) -> Result<PathSet> {
    match &topology.paths {
        Some(lists) => PathSet::from_edge_lists(topology, lists),
        None => enumerate_paths(topology),
    }
}

/// Dijkstra from `source`; each route is a sequence of node ranks.
fn shortest_routes(
    source: usize,
    adj: &[Vec<(usize, usize)>],
    edges: &[Edge],
    rank: &[usize],
) -> Vec<Option<Vec<usize>>> {
    let n = adj.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut route: Vec<Option<Vec<usize>>> = vec![None; n];
    let mut done = vec![false; n];
    dist[source] = 0.0;
    route[source] = Some(vec![rank[source]]);
    for _ in 0..n {
        let mut best: Option<usize> = None;
        for v in 0..n {
            if done[v] || !dist[v].is_finite() {
                continue;
            }
            best = match best {
                Some(b) if dist[b] <= dist[v] => Some(b),
                _ => Some(v),
            };
        }
        let Some(u) = best else { break };
        done[u] = true;
        for &(v, k) in &adj[u] {
            if done[v] {
                continue;
            }
            let candidate = dist[u] + edges[k].latency_s;
            let tol = TIE_TOLERANCE * candidate.max(dist[v].min(f64::MAX));
            let replace = if candidate < dist[v] - tol {
                true
            } else if (candidate - dist[v]).abs() <= tol {
                let current = route[v].as_ref().unwrap();
                let via = route[u].as_ref().unwrap();
                via.iter().copied().chain(std::iter::once(rank[v])).lt(current.iter().copied())
            } else {
                false
            };
            if replace {
                dist[v] = candidate;
                let mut r = route[u].clone().unwrap();
                r.push(rank[v]);
                route[v] = Some(r);
            }
        }
    }
    route
}

/// Ground-truth parameters: edge latencies and edge log survival
/// probabilities, the latter proportional to latency and scaled so the
/// longest edge drops packets with probability `1 - exp(-0.1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub theta_latency: Vec<f64>,
    pub theta_loss: Vec<f64>,
}

pub fn ground_truth(topology: &Topology) -> GroundTruth {
    let theta_latency = topology.latencies();
    let max = theta_latency.iter().copied().fold(0.0_f64, f64::max);
    let theta_loss = theta_latency.iter().map(|&l| -l / (10.0 * max)).collect();
    GroundTruth { theta_latency, theta_loss }
}

/// Sparse |X| x d feature matrix. Rows built from a path set are binary
/// edge indicators; general rows are allowed for synthetic instances.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    d: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl DesignMatrix {
    pub fn from_pathset(pathset: &PathSet) -> Result<Self> {
        if pathset.is_empty() {
            return Err(Error::EmptyPathSet);
        }
        let rows = pathset.paths.iter().map(|p| p.edges.iter().map(|&e| (e, 1.0)).collect()).collect();
        Ok(DesignMatrix { d: pathset.d, rows })
    }

    /// Dense rows of equal length; zero entries are dropped.
    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::EmptyPathSet);
        };
        let d = first.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidArgument("rows must have equal length".into()));
        }
        let rows = rows
            .iter()
            .map(|r| r.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(j, &v)| (j, v)).collect())
            .collect();
        Ok(DesignMatrix { d, rows })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn dot(&self, i: usize, v: &[f64]) -> f64 {
        self.rows[i].iter().map(|&(j, x)| x * v[j]).sum()
    }

    /// X v for every row.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows.len()).map(|i| self.dot(i, v)).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows.len(), self.d);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, x) in row {
                m[(i, j)] = x;
            }
        }
        m
    }

    /// Number of rows touching each column.
    pub fn column_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.d];
        for row in &self.rows {
            for &(j, _) in row {
                counts[j] += 1;
            }
        }
        counts
    }

    /// Weighted Gram matrix sum_i w_i x_i x_i^T.
    pub fn gram(&self, weights: &[f64]) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.d, self.d);
        for (row, &w) in self.rows.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            for &(a, xa) in row {
                for &(b, xb) in row {
                    g[(a, b)] += w * xa * xb;
                }
            }
        }
        g
    }
}

pub fn design_matrix(pathset: &PathSet) -> Result<DesignMatrix> {
    DesignMatrix::from_pathset(pathset)
}
