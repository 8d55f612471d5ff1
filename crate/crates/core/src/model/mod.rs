//! MinAgg GNN parameters, the exact Bellman-Ford construction and checkpoints.

mod analysis;
mod forward;
mod simple;

pub use analysis::{
    check_sparsity_structure, collapse_params, param_summaries, CollapsedUpdate, LayerSummary,
    ParamSummary, SparsityReport,
};
pub use forward::{
    backward, forward, forward_batch, forward_many, forward_with_cache, iterate_model, ForwardCache,
    GraphBatch,
};
pub use simple::{simple_forward, SimpleGnnParams};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mlp;

/// Default magnitude below which a parameter counts as zero.
pub const DEFAULT_NONZERO_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinAggConfig {
    #[serde(rename = "L")]
    pub layers: usize,
    #[serde(rename = "K")]
    pub k_steps: usize,
    /// Depth of every aggregation and update MLP.
    pub m: usize,
    /// Aggregation output width.
    pub d: usize,
    /// Hidden width inside each MLP (unused when `m == 1`).
    pub hidden: usize,
    /// Node feature widths `d_0..d_L`, with `d_0 = d_L = 1`.
    pub d_ell: Vec<usize>,
}

impl MinAggConfig {
    /// `L` layers of width-`width` MLPs with scalar node features between layers.
    pub fn uniform(layers: usize, k_steps: usize, m: usize, width: usize) -> Self {
        MinAggConfig { layers, k_steps, m, d: width, hidden: width, d_ell: vec![1; layers + 1] }
    }

    /// Two layers, 64 hidden units, aggregation width 64, first layer emits 8 features.
    pub fn two_layer_wide() -> Self {
        MinAggConfig { layers: 2, k_steps: 2, m: 2, d: 64, hidden: 64, d_ell: vec![1, 8, 1] }
    }

    /// One layer with `d_agg = 64` and a scalar update output.
    pub fn one_layer() -> Self {
        MinAggConfig { layers: 1, k_steps: 1, m: 2, d: 64, hidden: 64, d_ell: vec![1, 1] }
    }

    /// Two layers with scalar features between layers.
    pub fn two_layer_narrow() -> Self {
        MinAggConfig { layers: 2, k_steps: 2, m: 2, d: 64, hidden: 64, d_ell: vec![1, 1, 1] }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "two-layer-wide" => Some(Self::two_layer_wide()),
            "one-layer" => Some(Self::one_layer()),
            "two-layer-narrow" => Some(Self::two_layer_narrow()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_steps == 0 || self.layers < self.k_steps {
            return Err(Error::Config(format!("need L >= K >= 1, got L={} K={}", self.layers, self.k_steps)));
        }
        if self.m == 0 || self.d == 0 || self.hidden == 0 {
            return Err(Error::Config("m, d and hidden must be positive".into()));
        }
        if self.d_ell.len() != self.layers + 1 {
            return Err(Error::Config(format!(
                "d_ell has {} entries for L={} layers",
                self.d_ell.len(),
                self.layers
            )));
        }
        if self.d_ell[0] != 1 || self.d_ell[self.layers] != 1 {
            return Err(Error::Config("d_ell must start and end with 1".into()));
        }
        if self.d_ell.contains(&0) {
            return Err(Error::Config("feature widths must be positive".into()));
        }
        Ok(())
    }

    /// Widths of the aggregation MLP of layer `l` (0-based).
    pub fn agg_dims(&self, l: usize) -> Vec<usize> {
        self.mlp_dims(self.d_ell[l] + 1, self.d)
    }

    /// Widths of the update MLP of layer `l` (0-based).
    pub fn up_dims(&self, l: usize) -> Vec<usize> {
        self.mlp_dims(self.d + self.d_ell[l], self.d_ell[l + 1])
    }

    fn mlp_dims(&self, inp: usize, out: usize) -> Vec<usize> {
        let mut dims = vec![inp];
        dims.extend(std::iter::repeat_n(self.hidden, self.m - 1));
        dims.push(out);
        dims
    }

    /// Nonzero count of the exact construction, `mL + mK + K`.
    pub fn param_budget(&self) -> usize {
        self.m * self.layers + self.m * self.k_steps + self.k_steps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnLayer {
    pub agg: Mlp,
    pub up: Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinAggGnnParams {
    pub config: MinAggConfig,
    pub layers: Vec<GnnLayer>,
}

impl MinAggGnnParams {
    pub fn zeros(config: &MinAggConfig) -> Result<Self> {
        config.validate()?;
        let layers = (0..config.layers)
            .map(|l| GnnLayer { agg: Mlp::zeros(&config.agg_dims(l)), up: Mlp::zeros(&config.up_dims(l)) })
            .collect();
        Ok(MinAggGnnParams { config: config.clone(), layers })
    }

    pub fn init<R: Rng>(config: &MinAggConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layers = (0..config.layers)
            .map(|l| GnnLayer {
                agg: Mlp::init_uniform(&config.agg_dims(l), rng),
                up: Mlp::init_uniform(&config.up_dims(l), rng),
            })
            .collect();
        Ok(MinAggGnnParams { config: config.clone(), layers })
    }

    /// Checks that every matrix matches the shapes implied by `config`.
    pub fn check_shapes(&self) -> Result<()> {
        self.config.validate()?;
        if self.layers.len() != self.config.layers {
            return Err(Error::Shape(format!("{} layers stored, config says {}", self.layers.len(), self.config.layers)));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            for (name, mlp, want) in [
                ("aggregation", &layer.agg, self.config.agg_dims(l)),
                ("update", &layer.up, self.config.up_dims(l)),
            ] {
                mlp.check_chain()?;
                if mlp.dims() != want {
                    return Err(Error::Shape(format!(
                        "layer {} {name} MLP has widths {:?}, config implies {:?}",
                        l + 1,
                        mlp.dims(),
                        want
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.agg.num_params() + l.up.num_params()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            l.agg.write_flat(&mut out);
            l.up.write_flat(&mut out);
        }
        out
    }

    pub fn set_flat(&mut self, src: &[f64]) {
        assert_eq!(src.len(), self.num_params(), "flat parameter length");
        let mut pos = 0;
        for l in &mut self.layers {
            pos += l.agg.read_flat(&src[pos..]);
            pos += l.up.read_flat(&src[pos..]);
        }
    }

    pub fn zeros_like(&self) -> Self {
        MinAggGnnParams {
            config: self.config.clone(),
            layers: self.layers.iter().map(|l| GnnLayer { agg: l.agg.zeros_like(), up: l.up.zeros_like() }).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        p.check_shapes()?;
        Ok(p)
    }
}

/// The explicit `{0, 1}` weight assignment computing `K` relaxation steps:
/// layers `1..=K` add the neighbor distance and the edge weight in row 0 and
/// pass it through; later layers ignore their aggregation and copy the skip
/// input. All biases are zero.
pub fn build_exact_bf(config: &MinAggConfig) -> Result<MinAggGnnParams> {
    let mut p = MinAggGnnParams::zeros(config)?;
    for (l, layer) in p.layers.iter_mut().enumerate() {
        let d_prev = config.d_ell[l];
        if l < config.k_steps {
            let first = &mut layer.agg.layers[0].w;
            first[[0, 0]] = 1.0;
            first[[0, d_prev]] = 1.0;
            for dense in layer.agg.layers.iter_mut().skip(1) {
                dense.w[[0, 0]] = 1.0;
            }
            for dense in layer.up.layers.iter_mut() {
                dense.w[[0, 0]] = 1.0;
            }
        } else {
            layer.up.layers[0].w[[0, config.d]] = 1.0;
            for dense in layer.up.layers.iter_mut().skip(1) {
                dense.w[[0, 0]] = 1.0;
            }
        }
    }
    Ok(p)
}

/// Number of parameters with magnitude above `threshold`.
pub fn count_nonzero(params: &MinAggGnnParams, threshold: f64) -> usize {
    params.to_flat().iter().filter(|v| v.abs() > threshold).count()
}

/// Copy of `params` with every entry of magnitude at most `threshold` set to 0.
pub fn prune(params: &MinAggGnnParams, threshold: f64) -> MinAggGnnParams {
    let mut out = params.clone();
    let flat: Vec<f64> = params.to_flat().into_iter().map(|v| if v.abs() > threshold { v } else { 0.0 }).collect();
    out.set_flat(&flat);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn preset_shapes() {
        let c = MinAggConfig::two_layer_wide();
        c.validate().unwrap();
        assert_eq!(c.agg_dims(0), vec![2, 64, 64]);
        assert_eq!(c.up_dims(0), vec![65, 64, 8]);
        assert_eq!(c.agg_dims(1), vec![9, 64, 64]);
        assert_eq!(c.up_dims(1), vec![72, 64, 1]);
        let p = MinAggGnnParams::zeros(&c).unwrap();
        assert_eq!(p.num_params(), 4352 + 4744 + 4800 + 4737);
    }

    #[test]
    fn config_rejects_bad_shapes() {
        assert!(MinAggConfig::uniform(1, 2, 1, 1).validate().is_err());
        assert!(MinAggConfig::uniform(2, 0, 1, 1).validate().is_err());
        let mut c = MinAggConfig::uniform(2, 2, 1, 1);
        c.d_ell = vec![1, 2, 2];
        assert!(c.validate().is_err());
    }

    #[test]
    fn exact_budget() {
        for (l, k, m) in [(1, 1, 1), (2, 2, 2), (3, 2, 2)] {
            let c = MinAggConfig::uniform(l, k, m, 3);
            let p = build_exact_bf(&c).unwrap();
            assert_eq!(count_nonzero(&p, 0.0), m * l + m * k + k);
        }
        assert_eq!(count_nonzero(&build_exact_bf(&MinAggConfig::uniform(2, 2, 2, 1)).unwrap(), 0.0), 10);
    }

    #[test]
    fn nonzero_threshold() {
        let c = MinAggConfig::uniform(1, 1, 1, 1);
        let mut p = MinAggGnnParams::zeros(&c).unwrap();
        assert_eq!(count_nonzero(&p, 0.0), 0);
        p.layers[0].agg.layers[0].w[[0, 0]] = 1e-7;
        assert_eq!(count_nonzero(&p, 0.0), 1);
        assert_eq!(count_nonzero(&p, 1e-6), 0);
        assert_eq!(count_nonzero(&prune(&p, 1e-6), 0.0), 0);
    }

    #[test]
    fn flat_round_trip_and_checkpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = MinAggGnnParams::init(&MinAggConfig::two_layer_wide(), &mut rng).unwrap();
        let mut q = p.zeros_like();
        q.set_flat(&p.to_flat());
        assert_eq!(p, q);
        let s = p.to_json().unwrap();
        let back = MinAggGnnParams::from_json(&s).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.to_json().unwrap(), s);
        assert!(s.starts_with(r#"{"config":{"L":2,"K":2,"m":2,"d":64,"hidden":64,"d_ell":[1,8,1]},"layers":[{"agg":[{"W":"#));
    }

    #[test]
    fn checkpoint_with_wrong_shapes_is_rejected() {
        let p = build_exact_bf(&MinAggConfig::uniform(2, 2, 2, 2)).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&p.to_json().unwrap()).unwrap();
        v["config"]["d"] = 3.into();
        assert!(matches!(MinAggGnnParams::from_json(&v.to_string()), Err(Error::Shape(_))));
    }
}
