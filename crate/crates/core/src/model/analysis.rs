//! Sparsity pattern checks, the collapsed scalar update and parameter summaries.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{count_nonzero, MinAggGnnParams};
use crate::error::{Error, Result};
use crate::nn::Mlp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub holds: bool,
    pub nonzeros: usize,
    pub budget: usize,
    /// 1-based indices of layers whose aggregation is not identically zero.
    pub message_passing_layers: Vec<usize>,
    pub violations: Vec<String>,
}

fn nonzeros(w: &Array2<f64>, thr: f64) -> Vec<(usize, usize, f64)> {
    w.indexed_iter().filter(|(_, v)| v.abs() > thr).map(|((r, c), &v)| (r, c, v)).collect()
}

/// Checks the pattern a budget-sized network must have: one nonzero per
/// update matrix, zero biases, exactly `K` layers with a non-zero aggregation,
/// each with two entries sharing a row of the first matrix (one node column
/// and the edge column) and one entry in every deeper matrix.
pub fn check_sparsity_structure(params: &MinAggGnnParams, threshold: f64) -> SparsityReport {
    let cfg = &params.config;
    let mut violations = Vec::new();
    let mut mp = Vec::new();
    for (l, layer) in params.layers.iter().enumerate() {
        let ell = l + 1;
        for (name, mlp) in [("aggregation", &layer.agg), ("update", &layer.up)] {
            for (j, dense) in mlp.layers.iter().enumerate() {
                let nz = dense.b.iter().filter(|b| b.abs() > threshold).count();
                if nz > 0 {
                    violations.push(format!("layer {ell} {name} bias {}: {nz} nonzero entries", j + 1));
                }
            }
        }
        for (j, dense) in layer.up.layers.iter().enumerate() {
            let nz = nonzeros(&dense.w, threshold).len();
            if nz != 1 {
                violations.push(format!("layer {ell} update matrix {}: {nz} nonzeros, expected 1", j + 1));
            }
        }
        let agg_total: usize = layer.agg.layers.iter().map(|d| nonzeros(&d.w, threshold).len()).sum();
        if agg_total == 0 {
            continue;
        }
        mp.push(ell);
        let edge_col = layer.agg.in_dim() - 1;
        let first = nonzeros(&layer.agg.layers[0].w, threshold);
        let shared_row = first.len() == 2 && first[0].0 == first[1].0;
        let has_edge = first.iter().filter(|e| e.1 == edge_col).count() == 1;
        if !(shared_row && has_edge) {
            violations.push(format!(
                "layer {ell} aggregation matrix 1: {} nonzeros, expected a node and an edge entry in one row",
                first.len()
            ));
        }
        for (j, dense) in layer.agg.layers.iter().enumerate().skip(1) {
            let nz = nonzeros(&dense.w, threshold).len();
            if nz != 1 {
                violations.push(format!("layer {ell} aggregation matrix {}: {nz} nonzeros, expected 1", j + 1));
            }
        }
    }
    if mp.len() != cfg.k_steps {
        violations.push(format!("{} message-passing layers, expected {}", mp.len(), cfg.k_steps));
    }
    let nonzeros = count_nonzero(params, threshold);
    let budget = cfg.param_budget();
    if nonzeros != budget {
        violations.push(format!("{nonzeros} nonzero parameters, expected {budget}"));
    }
    SparsityReport { holds: violations.is_empty(), nonzeros, budget, message_passing_layers: mp, violations }
}

/// Per message-passing step `k`: `h_k = mu_k * min_u (h_{k-1}(u) + nu_k * x_uv)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapsedUpdate {
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
    pub message_passing_layers: Vec<usize>,
}

impl CollapsedUpdate {
    /// `nu_k * prod_{i >= k} mu_i` for each step; all ones for exact Bellman-Ford.
    pub fn edge_scales(&self) -> Vec<f64> {
        let k = self.mu.len();
        (0..k).map(|i| self.nu[i] * self.mu[i..].iter().product::<f64>()).collect()
    }
}

/// Follows the single surviving path through a chain of matrices starting at
/// input column `col`. Returns the final row and the product of the entries,
/// or `None` if the chain breaks or meets a non-positive entry (a ReLU of a
/// non-negative input times a non-positive weight is identically 0).
fn trace_chain(mats: &[&Array2<f64>], mut col: usize, threshold: f64) -> Option<(usize, f64)> {
    let mut scale = 1.0;
    for w in mats {
        let nz = nonzeros(w, threshold);
        let &(r, c, v) = nz.first()?;
        if c != col || v <= 0.0 {
            return None;
        }
        scale *= v;
        col = r;
    }
    Some((col, scale))
}

fn refuse(msg: String) -> Error {
    Error::Refused(msg)
}

/// Reduces a network with the budget sparsity pattern to its scalar update.
///
/// Scalings of layers without message passing fold into the next node
/// coefficient, and those after the last message-passing layer into the last `mu`.
pub fn collapse_params(params: &MinAggGnnParams, threshold: f64) -> Result<CollapsedUpdate> {
    let report = check_sparsity_structure(params, threshold);
    if !report.holds {
        return Err(refuse(format!("sparsity structure does not hold: {}", report.violations.join("; "))));
    }
    let d = params.config.d;
    let mut carrier = 0usize;
    let mut pending = 1.0;
    let mut mu = Vec::new();
    let mut nu = Vec::new();
    for (l, layer) in params.layers.iter().enumerate() {
        let ell = l + 1;
        let up_first = nonzeros(&layer.up.layers[0].w, threshold)[0];
        let up_rest: Vec<&Array2<f64>> = layer.up.layers.iter().skip(1).map(|x| &x.w).collect();
        if !report.message_passing_layers.contains(&ell) {
            if up_first.1 < d || up_first.1 - d != carrier || up_first.2 <= 0.0 {
                return Err(refuse(format!("layer {ell} does not carry the previous feature forward")));
            }
            let (out, gamma) = trace_chain(&up_rest, up_first.0, threshold)
                .ok_or_else(|| refuse(format!("layer {ell} update chain is disconnected or non-positive")))?;
            pending *= up_first.2 * gamma;
            carrier = out;
            continue;
        }
        let first = nonzeros(&layer.agg.layers[0].w, threshold);
        let edge_col = layer.agg.in_dim() - 1;
        let (node, edge) = if first[0].1 == edge_col { (first[1], first[0]) } else { (first[0], first[1]) };
        if node.1 != carrier {
            return Err(refuse(format!("layer {ell} aggregation reads an inactive feature")));
        }
        let alpha = node.2 * pending;
        if alpha <= 0.0 {
            return Err(refuse(format!("layer {ell} node coefficient {alpha} is not positive")));
        }
        let agg_rest: Vec<&Array2<f64>> = layer.agg.layers.iter().skip(1).map(|x| &x.w).collect();
        let (agg_out, agg_scale) = trace_chain(&agg_rest, node.0, threshold)
            .ok_or_else(|| refuse(format!("layer {ell} aggregation chain is disconnected or non-positive")))?;
        if up_first.1 != agg_out || up_first.2 <= 0.0 {
            return Err(refuse(format!("layer {ell} update ignores the aggregated message")));
        }
        let (out, up_scale) = trace_chain(&up_rest, up_first.0, threshold)
            .ok_or_else(|| refuse(format!("layer {ell} update chain is disconnected or non-positive")))?;
        let gamma = agg_scale * up_first.2 * up_scale;
        mu.push(gamma * alpha);
        nu.push(edge.2 / alpha);
        pending = 1.0;
        carrier = out;
    }
    if let Some(last) = mu.last_mut() {
        *last *= pending;
    }
    Ok(CollapsedUpdate { mu, nu, message_passing_layers: report.message_passing_layers })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub node: Vec<f64>,
    pub edge: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub layers: Vec<LayerSummary>,
}

impl ParamSummary {
    pub fn headers(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (l, s) in self.layers.iter().enumerate() {
            let ell = l + 1;
            out.extend((0..s.node.len()).map(|i| format!("l{ell}_node_{i}")));
            out.extend((0..s.edge.len()).map(|i| format!("l{ell}_edge_{i}")));
            out.extend((0..s.bias.len()).map(|i| format!("l{ell}_bias_{i}")));
        }
        out
    }

    pub fn values(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|s| s.node.iter().chain(&s.edge).chain(&s.bias).copied()).collect()
    }
}

/// Product `W_m ... W_1` of an MLP's weight matrices.
fn effective(mlp: &Mlp) -> Array2<f64> {
    let mut acc = mlp.layers[0].w.clone();
    for dense in &mlp.layers[1..] {
        acc = dense.w.dot(&acc);
    }
    acc
}

/// Per layer, with `A` and `U` the effective aggregation and update matrices:
/// node summary is `U[i, :d] * A[:, j]` for every input feature `j` and output
/// `i`, followed by the skip weights `U[i, d:]`; edge summary is
/// `U[i, :d] * A[:, edge]`; biases are all aggregation then all update biases.
pub fn param_summaries(params: &MinAggGnnParams) -> ParamSummary {
    let d = params.config.d;
    let layers = params
        .layers
        .iter()
        .map(|layer| {
            let a = effective(&layer.agg);
            let u = effective(&layer.up);
            let din = a.ncols() - 1;
            let mut node = Vec::new();
            for j in 0..din {
                for i in 0..u.nrows() {
                    node.extend((0..d).map(|c| u[[i, c]] * a[[c, j]]));
                }
            }
            for i in 0..u.nrows() {
                node.extend((d..d + din).map(|c| u[[i, c]]));
            }
            let mut edge = Vec::new();
            for i in 0..u.nrows() {
                edge.extend((0..d).map(|c| u[[i, c]] * a[[c, din]]));
            }
            let bias = layer
                .agg
                .layers
                .iter()
                .chain(&layer.up.layers)
                .flat_map(|x| x.b.iter().copied())
                .collect();
            LayerSummary { node, edge, bias }
        })
        .collect();
    ParamSummary { layers }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_exact_bf, MinAggConfig, MinAggGnnParams, DEFAULT_NONZERO_THRESHOLD};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const T: f64 = DEFAULT_NONZERO_THRESHOLD;

    #[test]
    fn exact_pattern_holds() {
        for (l, k, m) in [(1, 1, 1), (2, 2, 2), (3, 2, 2), (4, 3, 3)] {
            let p = build_exact_bf(&MinAggConfig::uniform(l, k, m, 4)).unwrap();
            let r = check_sparsity_structure(&p, T);
            assert!(r.holds, "{:?}", r.violations);
            assert_eq!(r.message_passing_layers, (1..=k).collect::<Vec<_>>());
        }
        let p = build_exact_bf(&MinAggConfig::two_layer_wide()).unwrap();
        assert!(check_sparsity_structure(&p, T).holds);
    }

    #[test]
    fn dense_and_biased_fail() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = MinAggGnnParams::init(&MinAggConfig::two_layer_wide(), &mut rng).unwrap();
        let r = check_sparsity_structure(&p, T);
        assert!(!r.holds);
        assert!(r.violations.len() >= 4);
        let mut q = build_exact_bf(&MinAggConfig::uniform(2, 2, 2, 2)).unwrap();
        q.layers[1].up.layers[0].b[0] = 0.5;
        let r = check_sparsity_structure(&q, T);
        assert!(!r.holds);
        assert!(r.violations.iter().any(|v| v.contains("bias")));
    }

    #[test]
    fn collapse_exact_is_all_ones() {
        let p = build_exact_bf(&MinAggConfig { layers: 3, k_steps: 2, m: 2, d: 3, hidden: 3, d_ell: vec![1, 2, 2, 1] })
            .unwrap();
        let c = collapse_params(&p, T).unwrap();
        assert_eq!(c.mu, vec![1.0, 1.0]);
        assert_eq!(c.nu, vec![1.0, 1.0]);
        assert_eq!(c.edge_scales(), vec![1.0, 1.0]);
    }

    #[test]
    fn collapse_is_scale_invariant() {
        let a = 4.0;
        let mut p = build_exact_bf(&MinAggConfig::uniform(2, 2, 1, 1)).unwrap();
        p.layers[0].agg.layers[0].w.mapv_inplace(|v| v * a);
        p.layers[0].up.layers[0].w.mapv_inplace(|v| v / a);
        let c = collapse_params(&p, T).unwrap();
        assert_eq!(c.mu, vec![1.0, 1.0]);
        assert_eq!(c.nu, vec![1.0, 1.0]);
    }

    #[test]
    fn collapse_tracks_output_scale_and_edge_gain() {
        let mut p = build_exact_bf(&MinAggConfig::uniform(3, 2, 2, 2)).unwrap();
        // trailing stationary layer scales the output
        p.layers[2].up.layers[1].w[[0, 0]] = 1.5;
        // edge coefficient of step 1 doubled
        p.layers[0].agg.layers[0].w[[0, 1]] = 2.0;
        // node coefficient of step 2 halved
        p.layers[1].agg.layers[0].w[[0, 0]] = 0.5;
        let c = collapse_params(&p, T).unwrap();
        assert_eq!(c.mu, vec![1.0, 0.5 * 1.5]);
        assert_eq!(c.nu, vec![2.0, 2.0]);
        assert_eq!(c.edge_scales(), vec![2.0 * 0.75, 2.0 * 0.75]);
    }

    #[test]
    fn collapse_refuses() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dense = MinAggGnnParams::init(&MinAggConfig::uniform(2, 2, 2, 3), &mut rng).unwrap();
        assert!(matches!(collapse_params(&dense, T), Err(Error::Refused(_))));
        let mut neg = build_exact_bf(&MinAggConfig::uniform(2, 2, 1, 1)).unwrap();
        neg.layers[0].agg.layers[0].w[[0, 0]] = -1.0;
        assert!(matches!(collapse_params(&neg, T), Err(Error::Refused(_))));
    }

    #[test]
    fn summaries() {
        let p = build_exact_bf(&MinAggConfig::uniform(1, 1, 2, 4)).unwrap();
        let s = param_summaries(&p);
        let l = &s.layers[0];
        assert_eq!(l.node.iter().filter(|&&v| v != 0.0).collect::<Vec<_>>(), vec![&1.0]);
        assert_eq!(l.edge.iter().filter(|&&v| v != 0.0).collect::<Vec<_>>(), vec![&1.0]);
        assert!(l.bias.iter().all(|&b| b == 0.0));
        assert_eq!(l.edge.len(), 4);
        assert_eq!(l.node.len(), 4 + 1);
        let z = MinAggGnnParams::zeros(&MinAggConfig::two_layer_wide()).unwrap();
        let s = param_summaries(&z);
        assert!(s.values().iter().all(|&v| v == 0.0));
        assert_eq!(s.headers().len(), s.values().len());
        assert_eq!(s.layers[0].edge.len(), 8 * 64);
        assert_eq!(s.layers[1].edge.len(), 64);
    }
}
