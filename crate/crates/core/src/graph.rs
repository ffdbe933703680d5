//! Communication topologies, mixing weights and their spectral diagnostics.

use std::collections::{BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::mix_seed;

const STOCHASTIC_TOL: f64 = 1e-12;
const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITERS: usize = 100_000;
const REGULAR_MAX_ATTEMPTS: u64 = 1000;

/// Undirected simple graph on nodes `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTopology", into = "RawTopology")]
pub struct Topology {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct RawTopology {
    nodes: usize,
    edges: Vec<(usize, usize)>,
}

impl TryFrom<RawTopology> for Topology {
    type Error = Error;

    fn try_from(raw: RawTopology) -> Result<Self> {
        Topology::new(raw.nodes, raw.edges)
    }
}

impl From<Topology> for RawTopology {
    fn from(t: Topology) -> Self {
        RawTopology {
            nodes: t.n,
            edges: t.edges.into_iter().collect(),
        }
    }
}

impl Topology {
    /// Rejects self-loops, duplicate edges (in either orientation) and out-of-range ids.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Graph(format!("edge ({i}, {j}) out of range for {n} nodes")));
            }
            if i == j {
                return Err(Error::Graph(format!("self-loop at node {i}")));
            }
            if !set.insert((i.min(j), i.max(j))) {
                return Err(Error::Graph(format!("duplicate edge ({i}, {j})")));
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(i, j) in &set {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Self {
            n,
            edges: set,
            adjacency,
        })
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
        Self::new(n, edges).expect("complete graph is simple")
    }

    pub fn path(n: usize) -> Self {
        Self::new(n, (1..n).map(|i| (i - 1, i))).expect("path is simple")
    }

    pub fn star(n: usize) -> Self {
        Self::new(n, (1..n).map(|i| (0, i))).expect("star is simple")
    }

    pub fn ring(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::Graph("a ring needs at least 3 nodes".into()));
        }
        Self::new(n, (0..n).map(|i| (i, (i + 1) % n)))
    }

    /// Parses one `i j` pair per line (0-indexed). Blank lines and `#` comments are skipped.
    /// The node count is `nodes` when given, otherwise one past the largest index seen.
    pub fn parse_edge_list(text: &str, nodes: Option<usize>) -> Result<Self> {
        let mut edges = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<usize> {
                tok.and_then(|t| t.parse().ok())
                    .ok_or_else(|| Error::Graph(format!("line {}: expected `i j`, got `{line}`", lineno + 1)))
            };
            let i = parse(parts.next())?;
            let j = parse(parts.next())?;
            if parts.next().is_some() {
                return Err(Error::Graph(format!(
                    "line {}: trailing tokens in `{line}`",
                    lineno + 1
                )));
            }
            edges.push((i, j));
        }
        let n = nodes.unwrap_or_else(|| edges.iter().map(|&(i, j)| i.max(j) + 1).max().unwrap_or(0));
        Self::new(n, edges)
    }

    pub fn to_edge_list(&self) -> String {
        self.edges.iter().map(|(i, j)| format!("{i} {j}\n")).collect()
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Sorted neighbor ids of `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.n
    }
}

/// Connected `degree`-regular graph drawn by random point pairing.
///
/// Pairs that would create a self-loop or duplicate edge are rejected and redrawn; a
/// pairing that gets stuck, or a disconnected result, is restarted with a new salt.
pub fn random_regular(n: usize, degree: usize, seed: u64) -> Result<Topology> {
    if degree >= n && !(n == 1 && degree == 0) {
        return Err(Error::Graph(format!(
            "degree {degree} must be below the node count {n}"
        )));
    }
    if !(n * degree).is_multiple_of(2) {
        return Err(Error::Graph(format!("n·degree = {} must be even", n * degree)));
    }
    for attempt in 0..REGULAR_MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, attempt]));
        if let Some(edges) = try_pairing(n, degree, &mut rng) {
            let topo = Topology::new(n, edges)?;
            if topo.is_connected() {
                return Ok(topo);
            }
        }
    }
    Err(Error::Graph(format!(
        "no connected {degree}-regular graph on {n} nodes after {REGULAR_MAX_ATTEMPTS} attempts"
    )))
}

fn try_pairing(n: usize, degree: usize, rng: &mut ChaCha8Rng) -> Option<Vec<(usize, usize)>> {
    let mut points: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, degree)).collect();
    let mut adjacent = vec![vec![false; n]; n];
    let mut edges = Vec::with_capacity(n * degree / 2);
    let mut failures = 0usize;
    while !points.is_empty() {
        let a = rng.random_range(0..points.len());
        let b = rng.random_range(0..points.len());
        let (u, v) = (points[a], points[b]);
        if a == b || u == v || adjacent[u][v] {
            failures += 1;
            if failures > 50 * points.len() + 100 {
                return None;
            }
            continue;
        }
        failures = 0;
        adjacent[u][v] = true;
        adjacent[v][u] = true;
        edges.push((u, v));
        let (hi, lo) = (a.max(b), a.min(b));
        points.swap_remove(hi);
        points.swap_remove(lo);
    }
    Some(edges)
}

/// Dense row-stochastic mixing matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct WeightMatrix {
    rows: Vec<Vec<f64>>,
    doubly_stochastic: bool,
}

impl TryFrom<Vec<Vec<f64>>> for WeightMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        WeightMatrix::from_rows(rows)
    }
}

impl From<WeightMatrix> for Vec<Vec<f64>> {
    fn from(w: WeightMatrix) -> Self {
        w.rows
    }
}

impl WeightMatrix {
    /// Requires a square matrix with nonnegative entries and unit row sums.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Graph("weight matrix must have at least one row".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Graph(format!("row {i} has {} entries, expected {n}", row.len())));
            }
            if row.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return Err(Error::Graph(format!("row {i} has a negative or non-finite weight")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::Graph(format!("row {i} sums to {sum}, expected 1")));
            }
        }
        let doubly_stochastic = (0..n).all(|j| {
            let col: f64 = rows.iter().map(|r| r[j]).sum();
            (col - 1.0).abs() <= STOCHASTIC_TOL
        });
        Ok(Self {
            rows,
            doubly_stochastic,
        })
    }

    pub fn size(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i][j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn is_doubly_stochastic(&self) -> bool {
        self.doubly_stochastic
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.size()).map(|j| self.rows.iter().map(|r| r[j]).sum()).collect()
    }

    /// True when every positive off-diagonal weight sits on an edge of `topology`.
    pub fn respects(&self, topology: &Topology) -> bool {
        topology.num_nodes() == self.size()
            && (0..self.size())
                .all(|i| (0..self.size()).all(|j| i == j || self.rows[i][j] == 0.0 || topology.has_edge(i, j)))
    }
}

/// `w_ij = 1 / (1 + max(deg_i, deg_j))` on edges, remainder on the diagonal.
pub fn metropolis_weights(topology: &Topology) -> Result<WeightMatrix> {
    if !topology.is_connected() {
        return Err(Error::Graph("Metropolis weights need a connected topology".into()));
    }
    let n = topology.num_nodes();
    let mut rows = vec![vec![0.0; n]; n];
    for (i, j) in topology.edges() {
        let w = 1.0 / (1.0 + topology.degree(i).max(topology.degree(j)) as f64);
        rows[i][j] = w;
        rows[j][i] = w;
    }
    for (i, row) in rows.iter_mut().enumerate() {
        let off: f64 = row.iter().sum();
        row[i] = 1.0 - off;
    }
    WeightMatrix::from_rows(rows)
}

/// Every node spreads weight `1 / (deg_i + 1)` uniformly over itself and its neighbors.
pub fn equal_weights(topology: &Topology) -> Result<WeightMatrix> {
    let n = topology.num_nodes();
    let mut rows = vec![vec![0.0; n]; n];
    for (i, row) in rows.iter_mut().enumerate() {
        let w = 1.0 / (topology.degree(i) + 1) as f64;
        row[i] = w;
        for &j in topology.neighbors(i) {
            row[j] = w;
        }
    }
    WeightMatrix::from_rows(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaVariant {
    /// `‖W − (1/n) 1 1ᵀ‖²`
    Full,
    /// `‖W − (1/n) 1 1ᵀ W‖²`
    Honest,
}

/// Squared spectral norm of the deviation of `w` from its averaging projection.
pub fn kappa(w: &WeightMatrix, variant: KappaVariant) -> Result<f64> {
    let n = w.size();
    if variant == KappaVariant::Full && !w.is_doubly_stochastic() {
        return Err(Error::Graph("full-graph kappa needs a doubly stochastic matrix".into()));
    }
    let inv = 1.0 / n as f64;
    let col_means: Vec<f64> = w.column_sums().iter().map(|c| c * inv).collect();
    let m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| match variant {
                    KappaVariant::Full => w.get(i, j) - inv,
                    KappaVariant::Honest => w.get(i, j) - col_means[j],
                })
                .collect()
        })
        .collect();
    Ok(spectral_norm_squared(&m))
}

/// Largest eigenvalue of `MᵀM` by power iteration.
///
/// The start vector is deterministic but deliberately not the all-ones vector, which lies
/// in the null space of every deviation matrix `W − (1/n)11ᵀ(·)` this is used for.
pub fn spectral_norm_squared(m: &[Vec<f64>]) -> f64 {
    let rows = m.len();
    if rows == 0 {
        return 0.0;
    }
    let cols = m[0].len();
    let mut v: Vec<f64> = (0..cols)
        .map(|i| ((i as f64 + 1.0) * 0.618_033_988_749_894_9).fract() + 0.25)
        .collect();
    normalize(&mut v);
    let mut estimate = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let mv: Vec<f64> = m.iter().map(|r| r.iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
        let mut w: Vec<f64> = (0..cols).map(|j| (0..rows).map(|i| m[i][j] * mv[i]).sum()).collect();
        let next: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        if normalize(&mut w) == 0.0 {
            return 0.0;
        }
        v = w;
        let converged = (next - estimate).abs() <= POWER_TOL * next.abs().max(POWER_TOL);
        estimate = next;
        if converged {
            break;
        }
    }
    estimate
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// `(1/H) ‖Eᵀ1 − 1‖²`: zero exactly when `e` is doubly stochastic.
pub fn chi_squared(e: &WeightMatrix) -> f64 {
    let h = e.size() as f64;
    e.column_sums().iter().map(|c| (c - 1.0) * (c - 1.0)).sum::<f64>() / h
}

/// Induced subgraph on the honest nodes, reindexed to `0..H`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HonestSubgraph {
    pub topology: Topology,
    /// `original_ids[k]` is the full-graph id of honest node `k`.
    pub original_ids: Vec<usize>,
}

impl HonestSubgraph {
    pub fn local_index(&self, original: usize) -> Option<usize> {
        self.original_ids.binary_search(&original).ok()
    }
}

pub fn honest_subgraph(topology: &Topology, byzantine: &BTreeSet<usize>) -> Result<HonestSubgraph> {
    if let Some(b) = byzantine.iter().find(|&&b| b >= topology.num_nodes()) {
        return Err(Error::Graph(format!("byzantine id {b} is not a node")));
    }
    let original_ids: Vec<usize> = (0..topology.num_nodes()).filter(|i| !byzantine.contains(i)).collect();
    if original_ids.is_empty() {
        return Err(Error::Graph("every node is Byzantine".into()));
    }
    let index = |orig: usize| original_ids.binary_search(&orig).expect("honest id");
    let edges: Vec<(usize, usize)> = topology
        .edges()
        .filter(|(i, j)| !byzantine.contains(i) && !byzantine.contains(j))
        .map(|(i, j)| (index(i), index(j)))
        .collect();
    Ok(HonestSubgraph {
        topology: Topology::new(original_ids.len(), edges)?,
        original_ids,
    })
}
