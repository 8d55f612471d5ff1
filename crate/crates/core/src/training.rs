//! Losses over reachable target nodes, full-batch AdamW training and traces.

use serde::{Deserialize, Serialize};

use crate::certificate::e_test;
use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::graph::AttributedGraph;
use crate::model::{
    backward, count_nonzero, forward_batch, forward_with_cache, param_summaries, prune, GraphBatch, MinAggGnnParams,
    DEFAULT_NONZERO_THRESHOLD,
};
use crate::nn::{AdamWConfig, AdamWState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the nonzero-count penalty.
    pub eta: f64,
    /// Weight of the L1 penalty in the training objective.
    pub lambda_l1: f64,
    pub nonzero_threshold: f64,
}

impl LossConfig {
    /// `eta` set to 0.9 of the largest value the certificate accepts.
    pub fn for_manifest(manifest: &DatasetManifest, param_budget: usize, lambda_l1: f64) -> Self {
        LossConfig {
            eta: default_eta(manifest.total_reachable, param_budget),
            lambda_l1,
            nonzero_threshold: DEFAULT_NONZERO_THRESHOLD,
        }
    }
}

/// L1 coefficient used when none is given.
pub const DEFAULT_L1: f64 = 0.01;

pub fn default_eta(total_reachable: usize, param_budget: usize) -> f64 {
    0.9 / (2.0 * total_reachable as f64 * param_budget as f64)
}

/// Training inputs flattened into one batch, with targets and the mask of
/// nodes whose target is reachable.
#[derive(Debug, Clone)]
pub struct PreparedSet {
    pub batch: GraphBatch,
    pub targets: Vec<f64>,
    pub mask: Vec<bool>,
    pub total_reachable: usize,
}

impl PreparedSet {
    pub fn new(manifest: &DatasetManifest) -> Result<Self> {
        let batch = GraphBatch::from_graphs(manifest.inputs())?;
        let mut targets = Vec::with_capacity(batch.num_nodes());
        let mut mask = Vec::with_capacity(batch.num_nodes());
        for p in &manifest.pairs {
            targets.extend_from_slice(&p.target.features);
            mask.extend(p.target.features.iter().map(|&x| x != p.target.beta));
        }
        let total_reachable = mask.iter().filter(|&&m| m).count();
        if total_reachable == 0 {
            return Err(Error::EmptyManifest);
        }
        Ok(PreparedSet { batch, targets, mask, total_reachable })
    }

    fn reachable_errors<'a>(&'a self, h: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
        h.iter().zip(&self.targets).zip(&self.mask).filter(|(_, &m)| m).map(|((h, t), _)| h - t)
    }

    pub fn mae(&self, h: &[f64]) -> f64 {
        self.reachable_errors(h).map(f64::abs).sum::<f64>() / self.total_reachable as f64
    }

    pub fn mse(&self, h: &[f64]) -> f64 {
        self.reachable_errors(h).map(|e| e * e).sum::<f64>() / self.total_reachable as f64
    }
}

fn check_k(params: &MinAggGnnParams, manifest: &DatasetManifest) -> Result<()> {
    if params.config.k_steps != manifest.k_steps {
        return Err(Error::Config(format!(
            "model learns K={} but the manifest is labeled with K={}",
            params.config.k_steps, manifest.k_steps
        )));
    }
    Ok(())
}

fn outputs(params: &MinAggGnnParams, manifest: &DatasetManifest) -> Result<(PreparedSet, Vec<f64>)> {
    check_k(params, manifest)?;
    let set = PreparedSet::new(manifest)?;
    let h = forward_batch(params, &set.batch)?;
    Ok((set, h))
}

pub fn l1_norm(params: &MinAggGnnParams) -> f64 {
    params.to_flat().iter().map(|v| v.abs()).sum()
}

/// Mean absolute error over nodes with reachable targets.
pub fn loss_mae(params: &MinAggGnnParams, manifest: &DatasetManifest) -> Result<f64> {
    let (set, h) = outputs(params, manifest)?;
    Ok(set.mae(&h))
}

pub fn loss_reg(params: &MinAggGnnParams, manifest: &DatasetManifest, cfg: &LossConfig) -> Result<f64> {
    Ok(loss_mae(params, manifest)? + cfg.eta * count_nonzero(params, cfg.nonzero_threshold) as f64)
}

pub fn loss_mse_l1(params: &MinAggGnnParams, manifest: &DatasetManifest, cfg: &LossConfig) -> Result<f64> {
    let (set, h) = outputs(params, manifest)?;
    Ok(set.mse(&h) + cfg.lambda_l1 * l1_norm(params))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub mse: f64,
    pub mse_l1: f64,
    pub mae: f64,
}

/// Objective values and the flat gradient of `MSE + lambda * L1`.
pub fn loss_and_gradient(
    params: &MinAggGnnParams,
    set: &PreparedSet,
    lambda_l1: f64,
) -> Result<(StepLosses, Vec<f64>)> {
    let cache = forward_with_cache(params, &set.batch)?;
    let h = &cache.output;
    let m = set.total_reachable as f64;
    let d_out: Vec<f64> = h
        .iter()
        .zip(&set.targets)
        .zip(&set.mask)
        .map(|((h, t), &r)| if r { 2.0 * (h - t) / m } else { 0.0 })
        .collect();
    let grad = backward(params, &set.batch, &cache, &d_out)?;
    let flat = params.to_flat();
    let mut g = grad.to_flat();
    if lambda_l1 != 0.0 {
        for (gi, &p) in g.iter_mut().zip(&flat) {
            // subgradient 0 at exactly 0
            if p > 0.0 {
                *gi += lambda_l1;
            } else if p < 0.0 {
                *gi -= lambda_l1;
            }
        }
    }
    let mse = set.mse(h);
    let l1: f64 = flat.iter().map(|v| v.abs()).sum();
    Ok((StepLosses { mse, mse_l1: mse + lambda_l1 * l1, mae: set.mae(h) }, g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub optimizer: AdamWConfig,
    pub loss: LossConfig,
    /// Evaluate the test metric every this many steps (and at the last step).
    pub eval_stride: usize,
    /// Record parameter summaries every this many steps (and at the last step).
    pub summary_stride: usize,
    /// Number of model applications when evaluating the test metric.
    pub eval_reps: usize,
    /// Orthant-wise handling of the L1 term: a weight at zero takes the
    /// minimum-norm subgradient, and an update that would cross zero stops
    /// at exactly zero. Without it, weights the penalty wants at zero keep
    /// jittering at the scale of the learning rate.
    pub orthant_l1: bool,
    /// Parameters that start at exactly zero stay there.
    pub freeze_zeros: bool,
}

impl TrainConfig {
    pub fn new(steps: usize, loss: LossConfig) -> Self {
        TrainConfig { steps, optimizer: AdamWConfig::default(), loss, eval_stride: 100, summary_stride: 100, eval_reps: 1, orthant_l1: true, freeze_zeros: false }
    }
}

/// Metrics at the parameters used by optimizer step `step` (before its update).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub loss_mse: f64,
    pub loss_mse_l1: f64,
    pub loss_reg: f64,
    pub e_test: Option<f64>,
    pub summary: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    pub summary_headers: Vec<String>,
    pub records: Vec<TraceRecord>,
}

fn on_stride(step: usize, stride: usize, last: usize) -> bool {
    step == last || (stride > 0 && step.is_multiple_of(stride))
}

pub fn train(
    init: &MinAggGnnParams,
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    eval_suite: &[AttributedGraph],
) -> Result<(MinAggGnnParams, TrainTrace)> {
    train_observed(init, manifest, cfg, eval_suite, |_, _| Ok(()))
}

/// Like [`train`], calling `observer(step, params)` after every update with
/// the parameters that update produced.
pub fn train_observed(
    init: &MinAggGnnParams,
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    eval_suite: &[AttributedGraph],
    mut observer: impl FnMut(usize, &MinAggGnnParams) -> Result<()>,
) -> Result<(MinAggGnnParams, TrainTrace)> {
    check_k(init, manifest)?;
    init.check_shapes()?;
    let set = PreparedSet::new(manifest)?;
    let mut params = init.clone();
    let mut flat = params.to_flat();
    let mut opt = AdamWState::new(cfg.optimizer, flat.len());
    let mut trace = TrainTrace { summary_headers: param_summaries(init).headers(), records: Vec::new() };
    let last = cfg.steps.saturating_sub(1);
    let frozen: Vec<bool> = if cfg.freeze_zeros { flat.iter().map(|&v| v == 0.0).collect() } else { Vec::new() };
    let lambda = cfg.loss.lambda_l1;
    let orthant = cfg.orthant_l1 && lambda > 0.0;
    for step in 0..cfg.steps {
        let (mut losses, mut grad) = loss_and_gradient(&params, &set, if orthant { 0.0 } else { lambda })?;
        if orthant {
            losses.mse_l1 = losses.mse + lambda * l1_norm(&params);
        }
        if !losses.mse_l1.is_finite() {
            return Err(Error::Diverged { step, loss: losses.mse_l1 });
        }
        let nnz = count_nonzero(&params, cfg.loss.nonzero_threshold);
        let e = if !eval_suite.is_empty() && on_stride(step, cfg.eval_stride, last) {
            Some(e_test(&params, eval_suite, params.config.k_steps, cfg.eval_reps)?)
        } else {
            None
        };
        let summary = on_stride(step, cfg.summary_stride, last).then(|| param_summaries(&params).values());
        trace.records.push(TraceRecord {
            step,
            loss_mse: losses.mse,
            loss_mse_l1: losses.mse_l1,
            loss_reg: losses.mae + cfg.loss.eta * nnz as f64,
            e_test: e,
            summary,
        });
        for (g, _) in grad.iter_mut().zip(&frozen).filter(|(_, &f)| f) {
            *g = 0.0;
        }
        let before = if orthant {
            pseudo_gradient(&flat, &mut grad, lambda);
            Some(flat.clone())
        } else {
            None
        };
        opt.step(&mut flat, &grad).map_err(|err| match err {
            Error::NonFiniteGradient { .. } => Error::Diverged { step, loss: f64::NAN },
            other => other,
        })?;
        if let Some(before) = before {
            project_orthant(&mut flat, &before, &grad);
        }
        for (p, _) in flat.iter_mut().zip(&frozen).filter(|(_, &f)| f) {
            *p = 0.0;
        }
        params.set_flat(&flat);
        observer(step, &params)?;
    }
    Ok((params, trace))
}

/// Turns the data gradient into the minimum-norm subgradient of
/// `data + lambda * |theta|`.
fn pseudo_gradient(theta: &[f64], grad: &mut [f64], lambda: f64) {
    for (g, &p) in grad.iter_mut().zip(theta) {
        *g = if p > 0.0 {
            *g + lambda
        } else if p < 0.0 || *g > lambda {
            *g - lambda
        } else if *g < -lambda {
            *g + lambda
        } else {
            0.0
        };
    }
}

/// Zeroes every coordinate that left the orthant it started in. A zero
/// coordinate may only move against its pseudo-gradient.
fn project_orthant(theta: &mut [f64], before: &[f64], pseudo: &[f64]) {
    for ((p, &b), &g) in theta.iter_mut().zip(before).zip(pseudo) {
        let allowed = if b != 0.0 { b.signum() } else if g != 0.0 { -g.signum() } else { 0.0 };
        if *p * allowed <= 0.0 {
            *p = 0.0;
        }
    }
}

/// Magnitude below which L1-trained parameters are pruned before refitting.
pub const DEFAULT_PRUNE_THRESHOLD: f64 = 1e-2;
/// Length of the refit that follows pruning.
pub const DEFAULT_REFIT_STEPS: usize = 2_000;

/// Zeroes parameters with magnitude at or below `threshold`, then refits the
/// survivors on the plain squared error with the zeros frozen. This removes
/// both the L1 shrinkage bias and stray weights too small for the penalty to
/// remove, which otherwise get multiplied by large unreached-node values.
pub fn prune_and_refit(
    params: &MinAggGnnParams,
    manifest: &DatasetManifest,
    threshold: f64,
    steps: usize,
    optimizer: AdamWConfig,
) -> Result<(MinAggGnnParams, TrainTrace)> {
    let pruned = prune(params, threshold);
    let loss = LossConfig::for_manifest(manifest, pruned.config.param_budget(), 0.0);
    let cfg = TrainConfig {
        optimizer,
        eval_stride: 0,
        summary_stride: 0,
        freeze_zeros: true,
        ..TrainConfig::new(steps, loss)
    };
    train(&pruned, manifest, &cfg, &[])
}

const BASE_COLUMNS: [&str; 5] = ["step", "loss_mse", "loss_mse_l1", "loss_reg", "e_test"];

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainTrace {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = BASE_COLUMNS.iter().map(|s| s.to_string()).collect();
        header.extend(self.summary_headers.iter().cloned());
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.step.to_string(),
                r.loss_mse.to_string(),
                r.loss_mse_l1.to_string(),
                r.loss_reg.to_string(),
                cell(r.e_test),
            ];
            match &r.summary {
                Some(s) => row.extend(s.iter().map(f64::to_string)),
                None => row.extend(std::iter::repeat_n(String::new(), self.summary_headers.len())),
            }
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Convolution with a Gaussian truncated at `ceil(3 sigma)` and renormalized
/// over the in-range taps. `sigma < 0.25` returns the input.
pub fn smooth_trace(values: &[f64], sigma: f64) -> Vec<f64> {
    if sigma < 0.25 || values.is_empty() {
        return values.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|j| (-(j * j) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let n = values.len() as isize;
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            let mut mass = 0.0;
            for (k, j) in (-radius..=radius).enumerate() {
                let idx = i + j;
                if (0..n).contains(&idx) {
                    acc += kernel[k] * values[idx as usize];
                    mass += kernel[k];
                }
            }
            acc / mass
        })
        .collect()
}

/// Smooths every metric column of a trace CSV. Empty cells stay empty; each
/// column is smoothed over the rows where it is present.
pub fn smooth_csv(text: &str, sigma: f64) -> Result<String> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header = rd.headers()?.clone();
    let rows: Vec<csv::StringRecord> = rd.records().collect::<std::result::Result<_, _>>()?;
    let mut cols: Vec<Vec<String>> = vec![Vec::with_capacity(rows.len()); header.len()];
    for r in &rows {
        for (c, v) in r.iter().enumerate() {
            cols[c].push(v.to_string());
        }
    }
    for (c, col) in cols.iter_mut().enumerate() {
        if header.get(c) == Some("step") {
            continue;
        }
        let present: Vec<usize> = (0..col.len()).filter(|&i| !col[i].is_empty()).collect();
        let vals: Vec<f64> = present
            .iter()
            .map(|&i| col[i].parse::<f64>().map_err(|e| Error::Config(format!("bad number {:?}: {e}", col[i]))))
            .collect::<Result<_>>()?;
        for (&i, v) in present.iter().zip(smooth_trace(&vals, sigma)) {
            col[i] = v.to_string();
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for i in 0..rows.len() {
        w.write_record(cols.iter().map(|c| c[i].as_str()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
