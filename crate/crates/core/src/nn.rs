//! Small ReLU MLPs with batched reverse-mode gradients, and AdamW.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One affine layer followed by ReLU. `w` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Serialize, Deserialize)]
struct DenseRepr {
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl Serialize for Dense {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DenseRepr {
            w: self.w.outer_iter().map(|r| r.to_vec()).collect(),
            b: self.b.to_vec(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Dense {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = DenseRepr::deserialize(d)?;
        let rows = r.w.len();
        let cols = r.w.first().map_or(0, Vec::len);
        if r.w.iter().any(|row| row.len() != cols) {
            return Err(D::Error::custom("ragged weight matrix"));
        }
        if r.b.len() != rows {
            return Err(D::Error::custom(format!("bias length {} for {rows} rows", r.b.len())));
        }
        let flat: Vec<f64> = r.w.into_iter().flatten().collect();
        let w = Array2::from_shape_vec((rows, cols), flat).map_err(D::Error::custom)?;
        Ok(Dense { w, b: Array1::from(r.b) })
    }
}

impl Dense {
    pub fn zeros(inp: usize, out: usize) -> Self {
        Dense { w: Array2::zeros((out, inp)), b: Array1::zeros(out) }
    }

    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }
}

/// A stack of `Dense` layers; ReLU follows every layer including the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// All-zero network with layer widths `dims[0] -> dims[1] -> ...`.
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        Mlp { layers: dims.windows(2).map(|p| Dense::zeros(p[0], p[1])).collect() }
    }

    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero biases.
    pub fn init_uniform<R: Rng>(dims: &[usize], rng: &mut R) -> Self {
        let mut mlp = Mlp::zeros(dims);
        for layer in &mut mlp.layers {
            let bound = 1.0 / (layer.in_dim() as f64).sqrt();
            layer.w.mapv_inplace(|_| rng.gen_range(-bound..=bound));
        }
        mlp
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.in_dim()];
        d.extend(self.layers.iter().map(Dense::out_dim));
        d
    }

    pub fn check_chain(&self) -> Result<()> {
        for (j, p) in self.layers.windows(2).enumerate() {
            if p[0].out_dim() != p[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {} outputs {} but layer {} takes {}",
                    j,
                    p[0].out_dim(),
                    j + 1,
                    p[1].in_dim()
                )));
            }
        }
        for (j, l) in self.layers.iter().enumerate() {
            if l.b.len() != l.out_dim() {
                return Err(Error::Shape(format!("layer {j} bias length {} for {} rows", l.b.len(), l.out_dim())));
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::Shape(format!("input length {} but MLP takes {}", x.len(), self.in_dim())));
        }
        let mut h = x.to_owned();
        for l in &self.layers {
            h = (l.w.dot(&h) + &l.b).mapv(relu);
        }
        Ok(h)
    }

    /// Row-batched forward. Returns the activations entering each layer
    /// followed by the output, so `acts.len() == depth + 1`.
    pub fn forward_batch(&self, x: Array2<f64>) -> Vec<Array2<f64>> {
        debug_assert_eq!(x.ncols(), self.in_dim());
        let mut acts = Vec::with_capacity(self.depth() + 1);
        acts.push(x);
        for l in &self.layers {
            let prev = acts.last().expect("non-empty");
            let mut z = prev.dot(&l.w.t());
            z += &l.b;
            z.mapv_inplace(relu);
            acts.push(z);
        }
        acts
    }

    /// Back-propagates `d_out` through cached activations, accumulating
    /// parameter gradients into `grad` and returning the input gradient.
    pub fn backward(&self, acts: &[Array2<f64>], d_out: Array2<f64>, grad: &mut Mlp) -> Array2<f64> {
        let mut d = d_out;
        for j in (0..self.depth()).rev() {
            let out = &acts[j + 1];
            // ReLU subgradient at exactly 0 is 0.
            ndarray::Zip::from(&mut d).and(out).for_each(|g, &a| {
                if a <= 0.0 {
                    *g = 0.0;
                }
            });
            let inp = &acts[j];
            grad.layers[j].w += &d.t().dot(inp);
            grad.layers[j].b += &d.sum_axis(Axis(0));
            d = d.dot(&self.layers[j].w);
        }
        d
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Appends parameters in layer order, each layer as row-major `W` then `b`.
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
    }

    /// Inverse of [`Mlp::write_flat`]; returns the number of values consumed.
    pub fn read_flat(&mut self, src: &[f64]) -> usize {
        let mut pos = 0;
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = src[pos];
                pos += 1;
            }
        }
        pos
    }

    pub fn zeros_like(&self) -> Mlp {
        Mlp::zeros(&self.dims())
    }
}

#[inline]
pub fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

/// Gathers rows of `src` into a new matrix.
pub fn gather_rows(src: ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), src.ncols()));
    for (mut row, &i) in out.outer_iter_mut().zip(idx) {
        row.assign(&src.row(i));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub cfg: AdamWConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamWState {
    pub fn new(cfg: AdamWConfig, n: usize) -> Self {
        AdamWState { cfg, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// One AdamW update of `params` in place. Nothing is modified if any
    /// gradient is non-finite.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some((index, &value)) = grads.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index, value });
        }
        let AdamWConfig { lr, beta1, beta2, eps, weight_decay } = self.cfg;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let decay = 1.0 - lr * weight_decay;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] = params[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
