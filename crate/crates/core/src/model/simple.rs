//! The five-parameter single-layer variant.

use ndarray::array;
use serde::{Deserialize, Serialize};

use super::{GnnLayer, MinAggConfig, MinAggGnnParams};
use crate::error::Result;
use crate::graph::AttributedGraph;
use crate::nn::{relu, Dense, Mlp};

/// `h_v = relu(w2 * min_u relu(w11 * x_u + w12 * x_uv + b1) + b2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimpleGnnParams {
    pub w11: f64,
    pub w12: f64,
    pub b1: f64,
    pub w2: f64,
    pub b2: f64,
}

impl SimpleGnnParams {
    pub fn exact() -> Self {
        SimpleGnnParams { w11: 1.0, w12: 1.0, b1: 0.0, w2: 1.0, b2: 0.0 }
    }

    /// The same map as a one-layer MinAgg network with `m = d = 1`.
    pub fn to_minagg(&self) -> MinAggGnnParams {
        let config = MinAggConfig::uniform(1, 1, 1, 1);
        let agg = Mlp { layers: vec![Dense { w: array![[self.w11, self.w12]], b: array![self.b1] }] };
        let up = Mlp { layers: vec![Dense { w: array![[self.w2, 0.0]], b: array![self.b2] }] };
        MinAggGnnParams { config, layers: vec![GnnLayer { agg, up }] }
    }
}

pub fn simple_forward(p: &SimpleGnnParams, g: &AttributedGraph) -> Result<AttributedGraph> {
    g.validate_structure()?;
    let x = &g.features;
    let out = g
        .neighborhoods()
        .iter()
        .map(|hood| {
            let m = hood
                .neighbors
                .iter()
                .map(|&(u, w)| relu(p.w11 * x[u] + p.w12 * w + p.b1))
                .fold(f64::INFINITY, f64::min);
            relu(p.w2 * m + p.b2)
        })
        .collect();
    let mut res = g.with_features(out);
    res.step = g.step.map(|t| t + 1);
    Ok(res)
}
