//! Hypergraphs, graph generators, and strong independent sets.
//!
//! A [`Hypergraph`] stores weighted hyperedges over `n` vertices together
//! with a cached per-vertex incidence index. Responses observed on a strong
//! independent set (a vertex set meeting every hyperedge at most once) are
//! conditionally independent given the rest, which is what the two-step
//! estimation pipeline exploits.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A single weighted hyperedge: a strictly increasing vertex list of size
/// at least two and a nonnegative weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperEdge<T> {
    #[serde(rename = "v")]
    pub vertices: Vec<usize>,
    #[serde(rename = "g")]
    pub weight: T,
}

#[derive(Serialize, Deserialize)]
struct RawHypergraph<T> {
    n: usize,
    edges: Vec<HyperEdge<T>>,
}

/// Weighted hypergraph on vertices `0..n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "RawHypergraph<T>",
    into = "RawHypergraph<T>",
    bound(serialize = "T: Serialize + Clone", deserialize = "T: serde::de::DeserializeOwned")
)]
pub struct Hypergraph<T: Scalar> {
    n: usize,
    edges: Vec<HyperEdge<T>>,
    incidence: Vec<Vec<usize>>,
}

impl<T: Scalar> TryFrom<RawHypergraph<T>> for Hypergraph<T> {
    type Error = Error;

    fn try_from(raw: RawHypergraph<T>) -> Result<Self> {
        Hypergraph::new(
            raw.n,
            raw.edges.into_iter().map(|e| (e.vertices, e.weight)),
        )
    }
}

impl<T: Scalar> From<Hypergraph<T>> for RawHypergraph<T> {
    fn from(h: Hypergraph<T>) -> Self {
        RawHypergraph {
            n: h.n,
            edges: h.edges,
        }
    }
}

impl<T: Scalar> Hypergraph<T> {
    /// Build a hypergraph, canonicalizing and validating every edge.
    ///
    /// Vertex lists are sorted; duplicate vertices within an edge, duplicate
    /// edges, out-of-range ids, negative weights, and edges of size below two
    /// are all rejected.
    pub fn new<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<usize>, T)>,
    {
        let mut canon: Vec<HyperEdge<T>> = Vec::new();
        let mut seen: HashSet<Vec<usize>> = HashSet::new();
        for (mut vs, w) in edges {
            if vs.len() < 2 {
                return Err(Error::Argument(format!(
                    "edge {vs:?} has fewer than two vertices"
                )));
            }
            vs.sort_unstable();
            if vs.windows(2).any(|p| p[0] == p[1]) {
                return Err(Error::Argument(format!(
                    "edge {vs:?} contains a repeated vertex"
                )));
            }
            if let Some(&max) = vs.last() {
                if max >= n {
                    return Err(Error::Argument(format!(
                        "edge {vs:?} references vertex {max} but n = {n}"
                    )));
                }
            }
            if !(w >= T::zero()) {
                return Err(Error::Argument(format!(
                    "edge {vs:?} has weight {:?} < 0",
                    w.to_f()
                )));
            }
            if !seen.insert(vs.clone()) {
                return Err(Error::Argument(format!("duplicate edge {vs:?}")));
            }
            canon.push(HyperEdge {
                vertices: vs,
                weight: w,
            });
        }
        let incidence = build_incidence(n, &canon);
        Ok(Hypergraph {
            n,
            edges: canon,
            incidence,
        })
    }

    /// Hypergraph with no edges.
    pub fn edgeless(n: usize) -> Self {
        Hypergraph {
            n,
            edges: Vec::new(),
            incidence: vec![Vec::new(); n],
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[HyperEdge<T>] {
        &self.edges
    }

    /// Indices of edges incident to vertex `i`.
    pub fn incident_edges(&self, i: usize) -> &[usize] {
        &self.incidence[i]
    }

    /// Rebuild the incidence index from the edge list (used by tests to
    /// verify the cached index).
    pub fn rebuild_incidence(&self) -> Vec<Vec<usize>> {
        build_incidence(self.n, &self.edges)
    }

    /// Replace every edge weight, keeping the structure.
    fn with_weights(&self, weight: T) -> Self {
        let edges = self
            .edges
            .iter()
            .map(|e| HyperEdge {
                vertices: e.vertices.clone(),
                weight,
            })
            .collect();
        Hypergraph {
            n: self.n,
            edges,
            incidence: self.incidence.clone(),
        }
    }
}

fn build_incidence<T>(n: usize, edges: &[HyperEdge<T>]) -> Vec<Vec<usize>> {
    let mut incidence = vec![Vec::new(); n];
    for (idx, e) in edges.iter().enumerate() {
        for &v in &e.vertices {
            incidence[v].push(idx);
        }
    }
    incidence
}

/// Maximum neighborhood size and maximum per-vertex field sum of a graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DegreeReport<T> {
    /// Largest neighborhood size over all vertices.
    pub max_neighbors: usize,
    /// Largest value of `sum_{e: i in e} g_e` over vertices `i`.
    pub max_field_sum: T,
}

impl<T: Scalar> DegreeReport<T> {
    /// Whether the per-vertex interaction weight stays at most one. A `false`
    /// here is worth a warning (theory degrades) but nothing downstream
    /// breaks, so it is never treated as an error.
    pub fn field_sum_within_unit(&self) -> bool {
        self.max_field_sum <= T::one()
    }
}

/// The vertices `j != i` sharing at least one edge with `i`.
pub fn neighbors<T: Scalar>(h: &Hypergraph<T>, i: usize) -> Result<Vec<usize>> {
    if i >= h.n {
        return Err(Error::Argument(format!(
            "vertex {i} out of range for n = {}",
            h.n
        )));
    }
    let mut set = BTreeSet::new();
    for &e in h.incident_edges(i) {
        for &j in &h.edges[e].vertices {
            if j != i {
                set.insert(j);
            }
        }
    }
    Ok(set.into_iter().collect())
}

/// Compute the maximum neighborhood size and maximum field sum.
pub fn degree_report<T: Scalar>(h: &Hypergraph<T>) -> DegreeReport<T> {
    let mut max_neighbors = 0usize;
    let mut max_field_sum = T::zero();
    for i in 0..h.n {
        let mut nbrs = BTreeSet::new();
        let mut field = T::zero();
        for &e in h.incident_edges(i) {
            field += h.edges[e].weight;
            for &j in &h.edges[e].vertices {
                if j != i {
                    nbrs.insert(j);
                }
            }
        }
        max_neighbors = max_neighbors.max(nbrs.len());
        if field > max_field_sum {
            max_field_sum = field;
        }
    }
    DegreeReport {
        max_neighbors,
        max_field_sum,
    }
}

/// Greedy strong independent set: scan the vertices in `order` and accept a
/// vertex whenever none of its neighbors has been accepted yet.
///
/// The result meets every hyperedge at most once and has size at least
/// `floor(n / (max_neighbors + 1))`. Returned sorted ascending.
pub fn greedy_strong_independent_set<T: Scalar>(
    h: &Hypergraph<T>,
    order: &[usize],
) -> Result<Vec<usize>> {
    let n = h.n;
    if order.len() != n {
        return Err(Error::Argument(format!(
            "order has length {}, expected {n}",
            order.len()
        )));
    }
    let mut seen = vec![false; n];
    for &v in order {
        if v >= n || seen[v] {
            return Err(Error::Argument(
                "order is not a permutation of the vertex ids".into(),
            ));
        }
        seen[v] = true;
    }
    let mut blocked = vec![false; n];
    let mut accepted = Vec::new();
    for &v in order {
        if blocked[v] {
            continue;
        }
        accepted.push(v);
        blocked[v] = true;
        for &e in h.incident_edges(v) {
            for &u in &h.edges[e].vertices {
                blocked[u] = true;
            }
        }
    }
    accepted.sort_unstable();
    Ok(accepted)
}

/// Ascending vertex order, the default greedy scan order.
pub fn ascending_order(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// A seeded random permutation of the vertex ids.
pub fn random_order<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// A strong independent set split into two halves.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VertexSplit {
    /// The full set, sorted.
    pub s_full: Vec<usize>,
    /// First half (gets the extra vertex when the size is odd), sorted.
    pub s1: Vec<usize>,
    /// Second half, sorted.
    pub s2: Vec<usize>,
}

/// Uniform random partition of `s` into two halves (first half larger by one
/// when `|s|` is odd). Deterministic given the RNG state.
pub fn split_independent_set<R: Rng + ?Sized>(s: &[usize], rng: &mut R) -> Result<VertexSplit> {
    if s.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "cannot split a set of {} vertices into two parts",
            s.len()
        )));
    }
    let mut shuffled = s.to_vec();
    shuffled.shuffle(rng);
    let n1 = shuffled.len().div_ceil(2);
    let mut s1 = shuffled[..n1].to_vec();
    let mut s2 = shuffled[n1..].to_vec();
    s1.sort_unstable();
    s2.sort_unstable();
    let mut s_full = s.to_vec();
    s_full.sort_unstable();
    Ok(VertexSplit { s_full, s1, s2 })
}

/// Two-dimensional lattice on `rows x cols` sites with pairwise edges between
/// axis-adjacent sites, no wraparound, unit weights.
pub fn lattice2d<T: Scalar>(rows: usize, cols: usize) -> Result<Hypergraph<T>> {
    if rows < 2 || cols < 2 {
        return Err(Error::Argument(format!(
            "lattice2d needs rows, cols >= 2 (got {rows} x {cols})"
        )));
    }
    let id = |r: usize, c: usize| r * cols + c;
    let mut edges = Vec::with_capacity(rows * (cols - 1) + cols * (rows - 1));
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                edges.push((vec![id(r, c), id(r, c + 1)], T::one()));
            }
            if r + 1 < rows {
                edges.push((vec![id(r, c), id(r + 1, c)], T::one()));
            }
        }
    }
    Hypergraph::new(rows * cols, edges)
}

/// Budget of pairing restarts before `random_regular` gives up.
const REGULAR_RESTART_BUDGET: usize = 100_000;

/// Uniform-ish simple `delta`-regular graph on `n` vertices.
///
/// Stub matching with suitable-pair retries: pair stubs uniformly, keep the
/// simple pairs, re-shuffle the leftovers, and restart from scratch when no
/// suitable pair remains. Restarts are counted against a fixed budget.
pub fn random_regular<T: Scalar, R: Rng + ?Sized>(
    n: usize,
    delta: usize,
    rng: &mut R,
) -> Result<Hypergraph<T>> {
    if delta >= n {
        return Err(Error::Argument(format!(
            "regular graph needs delta < n (got delta = {delta}, n = {n})"
        )));
    }
    if !(n * delta).is_multiple_of(2) {
        return Err(Error::Argument(format!(
            "n * delta must be even (got n = {n}, delta = {delta})"
        )));
    }
    if delta == 0 {
        return Ok(Hypergraph::edgeless(n));
    }
    for _ in 0..REGULAR_RESTART_BUDGET {
        if let Some(pairs) = try_stub_matching(n, delta, rng) {
            debug_assert!(degrees_match(n, delta, &pairs));
            return Hypergraph::new(
                n,
                pairs.into_iter().map(|(a, b)| (vec![a, b], T::one())),
            );
        }
    }
    Err(Error::GenerationFailure(format!(
        "no simple {delta}-regular graph on {n} vertices found within \
         {REGULAR_RESTART_BUDGET} pairing restarts"
    )))
}

fn try_stub_matching<R: Rng + ?Sized>(
    n: usize,
    delta: usize,
    rng: &mut R,
) -> Option<BTreeSet<(usize, usize)>> {
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut stubs: Vec<usize> = (0..n)
        .flat_map(|v| std::iter::repeat_n(v, delta))
        .collect();
    while !stubs.is_empty() {
        let mut leftover: BTreeMap<usize, usize> = BTreeMap::new();
        stubs.shuffle(rng);
        for pair in stubs.chunks_exact(2) {
            let (a, b) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
            if a != b && !edges.contains(&(a, b)) {
                edges.insert((a, b));
            } else {
                *leftover.entry(pair[0]).or_insert(0) += 1;
                *leftover.entry(pair[1]).or_insert(0) += 1;
            }
        }
        if leftover.is_empty() {
            return Some(edges);
        }
        if !suitable_pair_exists(&edges, &leftover) {
            return None;
        }
        stubs = leftover
            .into_iter()
            .flat_map(|(v, k)| std::iter::repeat_n(v, k))
            .collect();
    }
    Some(edges)
}

fn suitable_pair_exists(
    edges: &BTreeSet<(usize, usize)>,
    leftover: &BTreeMap<usize, usize>,
) -> bool {
    let nodes: Vec<usize> = leftover.keys().copied().collect();
    for (i, &a) in nodes.iter().enumerate() {
        for &b in &nodes[i + 1..] {
            if !edges.contains(&(a, b)) {
                return true;
            }
        }
    }
    false
}

fn degrees_match(n: usize, delta: usize, pairs: &BTreeSet<(usize, usize)>) -> bool {
    let mut deg = vec![0usize; n];
    for &(a, b) in pairs {
        deg[a] += 1;
        deg[b] += 1;
    }
    deg.iter().all(|&d| d == delta)
}

/// Rescale a pairwise graph so the conditional field matches the quadratic
/// interaction `beta * y' A_n y` with `A_n = degree_norm * A(G)`: every edge
/// `{i, j}` gets weight `2 * beta * degree_norm`.
pub fn from_ising<T: Scalar>(
    h: &Hypergraph<T>,
    beta: T,
    degree_norm: T,
) -> Result<Hypergraph<T>> {
    if !(degree_norm > T::zero()) {
        return Err(Error::Argument(format!(
            "degree_norm must be positive (got {})",
            degree_norm.to_f()
        )));
    }
    if !(beta >= T::zero()) {
        return Err(Error::Argument(format!(
            "beta must be nonnegative (got {})",
            beta.to_f()
        )));
    }
    if let Some(e) = h.edges.iter().find(|e| e.vertices.len() != 2) {
        return Err(Error::Argument(format!(
            "edge {:?} is not pairwise; the quadratic rescaling only applies \
             to graphs",
            e.vertices
        )));
    }
    Ok(h.with_weights(T::from_f(2.0) * beta * degree_norm))
}
