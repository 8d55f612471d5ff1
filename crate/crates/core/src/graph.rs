//! Attributed graphs, the Bellman-Ford step operator and its iterates.
//!
//! Graphs are undirected with non-negative edge weights. Every node carries a
//! scalar feature holding its current distance estimate from the source, and
//! `beta` marks nodes that have not been reached yet. Self-loops are implicit
//! with weight zero and are never stored.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = usize;

/// Largest graph accepted by [`brute_force_khop`].
pub const BRUTE_FORCE_MAX_NODES: usize = 8;
/// Longest walk length accepted by [`brute_force_khop`].
pub const BRUTE_FORCE_MAX_STEPS: usize = 6;

/// An undirected weighted edge, stored once with `u < v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub u: NodeId,
    pub v: NodeId,
    pub weight: f64,
}

impl Edge {
    pub fn new(a: NodeId, b: NodeId, weight: f64) -> Self {
        let (u, v) = if a <= b { (a, b) } else { (b, a) };
        Edge { u, v, weight }
    }
}

// Edges serialize as `[u, v, w]`.
impl Serialize for Edge {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        (self.u, self.v, self.weight).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Edge {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let (u, v, weight) = <(NodeId, NodeId, f64)>::deserialize(d)?;
        Ok(Edge { u, v, weight })
    }
}

/// Neighborhood of a node, including the node itself with weight 0,
/// in ascending node-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborView {
    pub node: NodeId,
    pub neighbors: Vec<(NodeId, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributedGraph {
    pub n: usize,
    pub beta: f64,
    pub step: Option<u32>,
    pub features: Vec<f64>,
    pub edges: Vec<Edge>,
}

/// One more than the total weight, or the next float up once `+ 1` is lost to rounding.
fn default_beta(edges: &[Edge]) -> f64 {
    let sum = edges.iter().map(|e| e.weight).sum::<f64>();
    let beta = sum + 1.0;
    if beta > sum { beta } else { sum.next_up() }
}

impl AttributedGraph {
    /// Builds a graph with `beta` just above the total edge weight.
    pub fn new(n: usize, edges: Vec<Edge>, features: Vec<f64>) -> Result<Self> {
        let beta = default_beta(&edges);
        Self::with_beta(n, edges, features, beta)
    }

    pub fn with_beta(n: usize, mut edges: Vec<Edge>, features: Vec<f64>, beta: f64) -> Result<Self> {
        for e in edges.iter_mut() {
            *e = Edge::new(e.u, e.v, e.weight);
        }
        edges.sort_by_key(|a| (a.u, a.v));
        let g = AttributedGraph { n, beta, step: None, features, edges };
        g.validate()?;
        Ok(g)
    }

    /// A 0-step instance: `source` at 0, every other node at `beta`.
    pub fn source_instance(n: usize, edges: Vec<Edge>, source: NodeId) -> Result<Self> {
        let beta = default_beta(&edges);
        let mut features = vec![beta; n];
        if source >= n {
            return Err(Error::InvalidGraph(format!("source {source} out of range for {n} nodes")));
        }
        features[source] = 0.0;
        let mut g = Self::with_beta(n, edges, features, beta)?;
        g.step = Some(0);
        Ok(g)
    }

    pub fn with_step(mut self, step: Option<u32>) -> Self {
        self.step = step;
        self
    }

    /// Same topology and weights, new features. Features are not range-checked
    /// so that model outputs can be carried in the graph.
    pub fn with_features(&self, features: Vec<f64>) -> Self {
        assert_eq!(features.len(), self.n, "feature count must match node count");
        AttributedGraph { features, ..self.clone() }
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.weight).sum()
    }

    /// Checks the structural invariants: edge endpoints, non-negative finite
    /// weights, no duplicate edges or stored self-loops, and total weight < beta.
    pub fn validate_structure(&self) -> Result<()> {
        if self.features.len() != self.n {
            return Err(Error::InvalidGraph(format!(
                "{} features for {} nodes",
                self.features.len(),
                self.n
            )));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::InvalidGraph(format!("beta must be positive and finite, got {}", self.beta)));
        }
        let mut seen = BTreeSet::new();
        for e in &self.edges {
            if e.u >= e.v || e.v >= self.n {
                return Err(Error::InvalidGraph(format!("bad edge endpoints ({}, {})", e.u, e.v)));
            }
            if !e.weight.is_finite() || e.weight < 0.0 {
                return Err(Error::InvalidGraph(format!(
                    "edge ({}, {}) has weight {}",
                    e.u, e.v, e.weight
                )));
            }
            if !seen.insert((e.u, e.v)) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({}, {})", e.u, e.v)));
            }
        }
        let total = self.total_weight();
        if total >= self.beta {
            return Err(Error::InvalidGraph(format!(
                "total edge weight {total} is not below beta {}",
                self.beta
            )));
        }
        Ok(())
    }

    /// Full validation: structure plus every feature in `[0, beta]`.
    pub fn validate(&self) -> Result<()> {
        self.validate_structure()?;
        for (v, &x) in self.features.iter().enumerate() {
            if !x.is_finite() || x < 0.0 || x > self.beta {
                return Err(Error::InvalidGraph(format!(
                    "node {v} feature {x} outside [0, beta={}]",
                    self.beta
                )));
            }
        }
        Ok(())
    }

    /// Sorted adjacency lists; each list contains the node itself with weight 0.
    pub fn neighborhoods(&self) -> Vec<NeighborView> {
        let mut adj: Vec<Vec<(NodeId, f64)>> = (0..self.n).map(|v| vec![(v, 0.0)]).collect();
        for e in &self.edges {
            adj[e.u].push((e.v, e.weight));
            adj[e.v].push((e.u, e.weight));
        }
        adj.into_iter()
            .enumerate()
            .map(|(node, mut neighbors)| {
                neighbors.sort_by_key(|&(u, _)| u);
                NeighborView { node, neighbors }
            })
            .collect()
    }

    /// Same topology, weights and features (beta and step tag are ignored).
    pub fn same_instance(&self, other: &AttributedGraph) -> bool {
        self.n == other.n && self.edges == other.edges && self.features == other.features
    }
}

fn relax(g: &AttributedGraph, hoods: &[NeighborView], x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(x.len(), g.n);
    hoods
        .iter()
        .map(|h| {
            h.neighbors
                .iter()
                .map(|&(u, w)| x[u] + w)
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// One Bellman-Ford relaxation over every node.
pub fn bf_step(g: &AttributedGraph) -> Result<AttributedGraph> {
    bf_k(g, 1)
}

/// `k` Bellman-Ford relaxations. `k = 0` returns a copy.
pub fn bf_k(g: &AttributedGraph, k: usize) -> Result<AttributedGraph> {
    g.validate()?;
    let hoods = g.neighborhoods();
    let mut x = g.features.clone();
    for _ in 0..k {
        x = relax(g, &hoods, &x);
    }
    let mut out = g.with_features(x);
    out.step = g.step.map(|t| t + k as u32);
    Ok(out)
}

/// Nodes whose feature differs from `beta`.
pub fn reachable_nodes(g: &AttributedGraph) -> BTreeSet<NodeId> {
    g.features
        .iter()
        .enumerate()
        .filter(|&(_, &x)| x != g.beta)
        .map(|(v, _)| v)
        .collect()
}

/// Minimum over all walks with at most `k` edges ending at each node of
/// `feature(start) + accumulated weight`, found by exhaustive enumeration.
///
/// Weights are accumulated from the start of the walk towards its end, the
/// same association order the relaxation recurrence uses, so results compare
/// exactly against [`bf_k`].
pub fn brute_force_khop(g: &AttributedGraph, k: usize) -> Result<Vec<f64>> {
    g.validate()?;
    if g.n > BRUTE_FORCE_MAX_NODES || k > BRUTE_FORCE_MAX_STEPS {
        return Err(Error::TooLarge(format!(
            "walk enumeration limited to {BRUTE_FORCE_MAX_NODES} nodes and {BRUTE_FORCE_MAX_STEPS} steps, got {} nodes and k={k}",
            g.n
        )));
    }
    let mut adj: Vec<Vec<(NodeId, f64)>> = vec![Vec::new(); g.n];
    for e in &g.edges {
        adj[e.u].push((e.v, e.weight));
        adj[e.v].push((e.u, e.weight));
    }
    let mut best = g.features.clone();

    fn walk(adj: &[Vec<(NodeId, f64)>], at: NodeId, len: f64, left: usize, best: &mut [f64]) {
        if len < best[at] {
            best[at] = len;
        }
        if left == 0 {
            return;
        }
        for &(next, w) in &adj[at] {
            walk(adj, next, len + w, left - 1, best);
        }
    }

    for start in 0..g.n {
        walk(&adj, start, g.features[start], k, &mut best);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(weights: &[f64], features: Vec<f64>, beta: f64) -> AttributedGraph {
        let edges = weights.iter().enumerate().map(|(i, &w)| Edge::new(i, i + 1, w)).collect();
        AttributedGraph::with_beta(weights.len() + 1, edges, features, beta).unwrap()
    }

    #[test]
    fn default_beta_survives_huge_weights() {
        let g = AttributedGraph::source_instance(3, vec![Edge::new(0, 1, 1e200), Edge::new(1, 2, 1e200)], 0).unwrap();
        assert!(g.beta > 2e200);
        let g = AttributedGraph::source_instance(2, vec![Edge::new(0, 1, 2.5)], 0).unwrap();
        assert_eq!(g.beta, 3.5);
    }

    #[test]
    fn single_edge_step() {
        let g = path(&[1.0], vec![0.0, 2.0], 2.0);
        assert_eq!(bf_step(&g).unwrap().features, vec![0.0, 1.0]);
    }

    #[test]
    fn step_one_path_reaches_third_node() {
        let beta = 2.0;
        let g = path(&[1.0, 0.0], vec![0.0, 1.0, beta], beta);
        assert_eq!(bf_step(&g).unwrap().features, vec![0.0, 1.0, 1.0]);
    }

    #[test]
    fn bf_step_leaves_input_untouched() {
        let g = path(&[1.0], vec![0.0, 2.0], 2.0);
        let before = g.clone();
        let _ = bf_step(&g).unwrap();
        assert_eq!(g, before);
    }

    #[test]
    fn k_zero_is_identity() {
        let g = path(&[3.0, 1.0], vec![0.0, 5.0, 5.0], 5.0);
        assert_eq!(bf_k(&g, 0).unwrap().features, g.features);
        assert_eq!(brute_force_khop(&g, 0).unwrap(), g.features);
    }

    #[test]
    fn rejects_negative_weight() {
        let g = AttributedGraph {
            n: 2,
            beta: 5.0,
            step: None,
            features: vec![0.0, 5.0],
            edges: vec![Edge { u: 0, v: 1, weight: -1.0 }],
        };
        assert!(matches!(bf_step(&g), Err(Error::InvalidGraph(_))));
    }

    #[test]
    fn rejects_beta_below_total_weight() {
        let g = AttributedGraph {
            n: 2,
            beta: 1.0,
            step: None,
            features: vec![0.0, 1.0],
            edges: vec![Edge { u: 0, v: 1, weight: 1.0 }],
        };
        assert!(matches!(g.validate(), Err(Error::InvalidGraph(_))));
    }

    #[test]
    fn brute_force_refuses_large_graphs() {
        let edges = (0..9).map(|i| Edge::new(i, i + 1, 1.0)).collect();
        let g = AttributedGraph::source_instance(10, edges, 0).unwrap();
        assert!(matches!(brute_force_khop(&g, 2), Err(Error::TooLarge(_))));
        let small = AttributedGraph::source_instance(3, vec![Edge::new(0, 1, 1.0)], 0).unwrap();
        assert!(matches!(brute_force_khop(&small, 7), Err(Error::TooLarge(_))));
    }

    #[test]
    fn neighborhoods_include_self_in_order() {
        let g = AttributedGraph::source_instance(
            3,
            vec![Edge::new(2, 0, 4.0), Edge::new(1, 0, 1.0)],
            0,
        )
        .unwrap();
        let hoods = g.neighborhoods();
        assert_eq!(hoods[0].neighbors, vec![(0, 0.0), (1, 1.0), (2, 4.0)]);
        assert_eq!(hoods[2].neighbors, vec![(0, 4.0), (2, 0.0)]);
    }

    #[test]
    fn reachable_sets() {
        let g = path(&[1.0], vec![0.0, 2.0], 2.0);
        assert_eq!(reachable_nodes(&g).into_iter().collect::<Vec<_>>(), vec![0]);
        let g = path(&[1.0, 0.0], vec![0.0, 1.0, 2.0], 2.0);
        assert_eq!(reachable_nodes(&g).into_iter().collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn edges_serialize_as_triples() {
        let g = path(&[1.5], vec![0.0, 2.5], 2.5);
        let json = serde_json::to_string(&g).unwrap();
        assert_eq!(json, r#"{"n":2,"beta":2.5,"step":null,"features":[0.0,2.5],"edges":[[0,1,1.5]]}"#);
        let back: AttributedGraph = serde_json::from_str(&json).unwrap();
        assert_eq!(back, g);
    }
}
