#![allow(dead_code)]

use bfgnn::dataset::DatasetManifest;
use bfgnn::graph::{AttributedGraph, Edge};
use bfgnn::model::{MinAggConfig, MinAggGnnParams};
use bfgnn::training::{loss_and_gradient, PreparedSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random init with small nonzero biases so no ReLU sits exactly on its kink.
pub fn jittered_init(config: &MinAggConfig, seed: u64) -> MinAggGnnParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = MinAggGnnParams::init(config, &mut rng).unwrap();
    for layer in &mut p.layers {
        for mlp in [&mut layer.agg, &mut layer.up] {
            for d in &mut mlp.layers {
                d.b.mapv_inplace(|_| rng.gen_range(-0.1..0.1));
            }
        }
    }
    p
}

pub struct GradCheck {
    pub checked: usize,
    pub skipped: usize,
    pub worst_rel: f64,
}

/// Compares the analytic gradient of `MSE + lambda * L1` with central
/// differences on `coords` random coordinates. A coordinate whose difference
/// quotient changes between two step sizes straddles a kink and is skipped.
pub fn finite_difference_check(
    params: &MinAggGnnParams,
    manifest: &DatasetManifest,
    lambda: f64,
    coords: usize,
    seed: u64,
) -> GradCheck {
    let set = PreparedSet::new(manifest).unwrap();
    let (_, grad) = loss_and_gradient(params, &set, lambda).unwrap();
    let base = params.to_flat();
    let objective = |theta: &[f64]| {
        let mut q = params.clone();
        q.set_flat(theta);
        loss_and_gradient(&q, &set, lambda).unwrap().0.mse_l1
    };
    let quotient = |i: usize, h: f64| {
        let mut t = base.clone();
        t[i] = base[i] + h;
        let up = objective(&t);
        t[i] = base[i] - h;
        let down = objective(&t);
        (up - down) / (2.0 * h)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradCheck { checked: 0, skipped: 0, worst_rel: 0.0 };
    for _ in 0..coords {
        let i = rng.gen_range(0..base.len());
        // keep the L1 term smooth too
        let h = (1e-5f64).min(base[i].abs() / 4.0).max(1e-7);
        let (a, b) = (quotient(i, h), quotient(i, h / 2.0));
        let scale = a.abs().max(b.abs()).max(1e-3);
        if (a - b).abs() > 1e-5 * scale {
            out.skipped += 1;
            continue;
        }
        let rel = (grad[i] - b).abs() / grad[i].abs().max(b.abs()).max(1e-3);
        out.worst_rel = out.worst_rel.max(rel);
        out.checked += 1;
    }
    out
}

/// Relabels nodes by `perm` (old id -> new id).
pub fn relabel(g: &AttributedGraph, perm: &[usize]) -> AttributedGraph {
    let mut feats = vec![0.0; g.n];
    for (old, &new) in perm.iter().enumerate() {
        feats[new] = g.features[old];
    }
    let edges = g.edges.iter().map(|e| Edge::new(perm[e.u], perm[e.v], e.weight)).collect();
    AttributedGraph::with_beta(g.n, edges, feats, g.beta).unwrap().with_step(g.step)
}
