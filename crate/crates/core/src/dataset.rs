//! Generators for the training constructions and test families.
//!
//! Every generator is deterministic given its arguments and seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{bf_k, reachable_nodes, AttributedGraph, Edge};

/// An input instance and its `K`-step Bellman-Ford target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub input: AttributedGraph,
    pub target: AttributedGraph,
}

impl LabeledPair {
    pub fn label(input: AttributedGraph, k_steps: usize) -> Result<Self> {
        let target = bf_k(&input, k_steps)?;
        Ok(LabeledPair { input, target })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    #[serde(rename = "K")]
    pub k_steps: usize,
    #[serde(rename = "M")]
    pub total_reachable: usize,
    pub pairs: Vec<LabeledPair>,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, k_steps: usize, inputs: Vec<AttributedGraph>) -> Result<Self> {
        let pairs = inputs
            .into_iter()
            .map(|g| LabeledPair::label(g, k_steps))
            .collect::<Result<Vec<_>>>()?;
        let total_reachable = count_reachable(&pairs);
        Ok(DatasetManifest { name: name.into(), k_steps, total_reachable, pairs })
    }

    /// Recomputes every target and the reachable count and compares them to
    /// the stored values.
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.pairs.iter().enumerate() {
            let expect = bf_k(&p.input, self.k_steps)?;
            if !expect.same_instance(&p.target) {
                return Err(Error::Config(format!(
                    "pair {i} target differs from {} Bellman-Ford steps of its input",
                    self.k_steps
                )));
            }
        }
        let m = count_reachable(&self.pairs);
        if m != self.total_reachable {
            return Err(Error::Config(format!("stored M={} but targets have {m} reachable nodes", self.total_reachable)));
        }
        Ok(())
    }

    pub fn inputs(&self) -> impl Iterator<Item = &AttributedGraph> {
        self.pairs.iter().map(|p| &p.input)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Nodes whose target differs from `beta`; the loss is taken over these.
fn count_reachable(pairs: &[LabeledPair]) -> usize {
    pairs.iter().map(|p| reachable_nodes(&p.target).len()).sum()
}

/// Path `v_0 - v_1 - ... - v_k` with features holding `t`-step distances from `v_0`.
pub fn gen_path(t: usize, weights: &[f64]) -> Result<AttributedGraph> {
    if weights.is_empty() {
        return Err(Error::InvalidGraph("path needs at least one edge".into()));
    }
    let edges = weights.iter().enumerate().map(|(i, &w)| Edge::new(i, i + 1, w)).collect();
    let g0 = AttributedGraph::source_instance(weights.len() + 1, edges, 0)?;
    bf_k(&g0, t)
}

/// The eight single-step toy pairs with `a_i = 2i`.
pub fn gen_h_small() -> DatasetManifest {
    let mut inputs = Vec::with_capacity(8);
    for i in 1..=4 {
        inputs.push(gen_path(0, &[2.0 * i as f64]).expect("valid path"));
    }
    for i in 5..=8 {
        inputs.push(gen_path(1, &[2.0 * i as f64, 0.0]).expect("valid path"));
    }
    DatasetManifest::new("h_small", 1, inputs).expect("valid toy set")
}

/// All `k` from 1 to `K`.
pub fn default_k_range(k_steps: usize) -> Vec<usize> {
    (1..=k_steps).collect()
}

/// Step-1 paths with `K+1` edges: first edge `a`, edge `k` (0-based) `b`, all others 0,
/// for `(a, b)` in `{0..2K} x {0, 2K+1}`.
pub fn gen_scale_set(k_steps: usize, k_range: &[usize]) -> Result<Vec<AttributedGraph>> {
    if k_steps == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let mut ks = k_range.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if let Some(&bad) = ks.iter().find(|&&k| k == 0 || k > k_steps) {
        return Err(Error::Config(format!("k={bad} outside 1..={k_steps}")));
    }
    let big = (2 * k_steps + 1) as f64;
    let mut out = Vec::new();
    for &k in &ks {
        for a in 0..=2 * k_steps {
            for b in [0.0, big] {
                let mut w = vec![0.0; k_steps + 1];
                w[0] = a as f64;
                w[k] = b;
                out.push(gen_path(1, &w)?);
            }
        }
    }
    Ok(out)
}

/// Ladder gadget with `2K+2` nodes. Node ids: `v_i = i`, `u_i = K+1+i`.
/// Rails have weight 0 and rungs `(u_{i-1}, v_i)`, `(v_{i-1}, u_i)` weight 1.
pub fn gen_gadget_h(k_steps: usize) -> Result<AttributedGraph> {
    if k_steps == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let v = |i: usize| i;
    let u = |i: usize| k_steps + 1 + i;
    let mut edges = Vec::with_capacity(4 * k_steps);
    for i in 1..=k_steps {
        edges.push(Edge::new(v(i - 1), v(i), 0.0));
        edges.push(Edge::new(u(i - 1), u(i), 0.0));
        edges.push(Edge::new(u(i - 1), v(i), 1.0));
        edges.push(Edge::new(v(i - 1), u(i), 1.0));
    }
    AttributedGraph::source_instance(2 * k_steps + 2, edges, v(0))
}

/// The unit path pair and gadget that, with the scale set, make up the `K`-step training set.
pub fn gk_extras(k_steps: usize) -> Result<Vec<AttributedGraph>> {
    Ok(vec![gen_path(0, &[1.0])?, gen_path(1, &[1.0, 0.0])?, gen_gadget_h(k_steps)?])
}

pub fn gen_gk(k_steps: usize, k_range: &[usize]) -> Result<DatasetManifest> {
    let mut inputs = gen_scale_set(k_steps, k_range)?;
    inputs.extend(gk_extras(k_steps)?);
    DatasetManifest::new(format!("G_{k_steps}"), k_steps, inputs)
}

/// `gen_gk(2)` plus four step-0 three-node paths and four step-2 five-node
/// paths with integer weights in `1..=8`.
pub fn gen_experiment_train(seed: u64) -> Result<DatasetManifest> {
    let k_steps = 2;
    let mut inputs = gen_scale_set(k_steps, &default_k_range(k_steps))?;
    inputs.extend(gk_extras(k_steps)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..4 {
        let w: Vec<f64> = (0..2).map(|_| rng.gen_range(1..=8) as f64).collect();
        inputs.push(gen_path(0, &w)?);
    }
    for _ in 0..4 {
        let w: Vec<f64> = (0..4).map(|_| rng.gen_range(1..=8) as f64).collect();
        inputs.push(gen_path(2, &w)?);
    }
    DatasetManifest::new("experiment", k_steps, inputs)
}

fn weight<R: Rng>(rng: &mut R) -> f64 {
    rng.gen_range(0.0..10.0)
}

pub fn gen_cycle<R: Rng>(n: usize, rng: &mut R) -> Result<AttributedGraph> {
    if n < 3 {
        return Err(Error::Config(format!("cycle needs 3 nodes, got {n}")));
    }
    let edges = (0..n).map(|i| Edge::new(i, (i + 1) % n, weight(rng))).collect();
    AttributedGraph::source_instance(n, edges, 0)
}

pub fn gen_complete<R: Rng>(n: usize, rng: &mut R) -> Result<AttributedGraph> {
    let mut edges = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            edges.push(Edge::new(i, j, weight(rng)));
        }
    }
    AttributedGraph::source_instance(n, edges, 0)
}

/// Erdos-Renyi graph, each pair present independently with probability `p`.
pub fn gen_er<R: Rng>(n: usize, p: f64, rng: &mut R) -> Result<AttributedGraph> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("edge probability {p} outside [0, 1]")));
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                edges.push(Edge::new(i, j, weight(rng)));
            }
        }
    }
    AttributedGraph::source_instance(n, edges, 0)
}

/// 200 step-0 graphs: 50 each of 3-cycles, 4-cycles, complete graphs and
/// `p = 0.5` ER graphs.
pub fn gen_test_suite(seed: u64) -> Vec<AttributedGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(200);
    for _ in 0..50 {
        out.push(gen_cycle(3, &mut rng).expect("valid cycle"));
    }
    for _ in 0..50 {
        out.push(gen_cycle(4, &mut rng).expect("valid cycle"));
    }
    let (lo, hi) = (5f64.ln(), 200f64.ln());
    for _ in 0..50 {
        let n = rng.gen_range(lo..=hi).exp().round().clamp(5.0, 200.0) as usize;
        out.push(gen_complete(n, &mut rng).expect("valid complete graph"));
    }
    for _ in 0..50 {
        let n = rng.gen_range(5..=50);
        out.push(gen_er(n, 0.5, &mut rng).expect("valid ER graph"));
    }
    out
}

/// Sparse ER instance with expected degree 5.
pub fn gen_er_sparse(n: usize, seed: u64) -> Result<AttributedGraph> {
    if n < 6 {
        return Err(Error::Config(format!("sparse ER needs n >= 6, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gen_er(n, 5.0 / n as f64, &mut rng)
}

/// `count` sparse ER graphs of size `n`, seeded `seed, seed+1, ...`.
pub fn gen_er_sparse_family(n: usize, count: usize, seed: u64) -> Result<Vec<AttributedGraph>> {
    (0..count as u64).map(|i| gen_er_sparse(n, seed.wrapping_add(i))).collect()
}
