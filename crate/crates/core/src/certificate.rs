//! The multiplicative test metric, the loss-gap certificate and envelope audits.

use serde::{Deserialize, Serialize};

use crate::dataset::{default_k_range, gen_gk, gen_h_small, gen_test_suite, gen_er_sparse_family, DatasetManifest};
use crate::error::{Error, Result};
use crate::graph::{bf_k, AttributedGraph};
use crate::model::{
    check_sparsity_structure, collapse_params, count_nonzero, forward_many, simple_forward, CollapsedUpdate,
    MinAggGnnParams, SimpleGnnParams, SparsityReport,
};
use crate::training::loss_mae;

/// Magnitude below which a prediction or target counts as zero in the test metric.
pub const ZERO_TOL: f64 = 1e-9;

/// `|1 - x / h|`, with `0/0 -> 0` and a zero prediction of a nonzero target `-> 1`.
pub fn node_error(target: f64, pred: f64) -> f64 {
    if pred.abs() < ZERO_TOL {
        if target.abs() < ZERO_TOL {
            0.0
        } else {
            1.0
        }
    } else {
        (1.0 - target / pred).abs()
    }
}

/// Mean over graphs of the per-graph mean node error after `reps`
/// applications, against `K * reps` Bellman-Ford steps.
pub fn e_test(params: &MinAggGnnParams, suite: &[AttributedGraph], k_steps: usize, reps: usize) -> Result<f64> {
    if suite.is_empty() {
        return Err(Error::Config("empty evaluation suite".into()));
    }
    let preds = forward_many(params, suite, reps)?;
    let mut total = 0.0;
    for (g, h) in suite.iter().zip(&preds) {
        let x = bf_k(g, k_steps * reps)?.features;
        total += x.iter().zip(h).map(|(&x, &h)| node_error(x, h)).sum::<f64>() / g.n as f64;
    }
    Ok(total / suite.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub eta: f64,
    pub epsilon: f64,
    #[serde(rename = "M")]
    pub total_reachable: usize,
    pub param_budget: usize,
    pub nonzeros: usize,
    pub loss_mae: f64,
    pub loss_reg: f64,
    /// `0 <= epsilon < eta < 1 / (2 M budget)`.
    pub hypothesis_ok: bool,
    pub structure_ok: bool,
    /// `M * epsilon`.
    pub bound_factor: f64,
    pub structure: SparsityReport,
    pub collapsed: Option<CollapsedUpdate>,
}

impl Certificate {
    pub fn eta_limit(&self) -> f64 {
        1.0 / (2.0 * self.total_reachable as f64 * self.param_budget as f64)
    }

    /// One-page plain-text rendering.
    pub fn verdict(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("eta            {:e} (limit {:e})\n", self.eta, self.eta_limit()));
        s.push_str(&format!("epsilon        {:e}\n", self.epsilon));
        s.push_str(&format!("M              {}\n", self.total_reachable));
        s.push_str(&format!("nonzeros       {} (budget {})\n", self.nonzeros, self.param_budget));
        s.push_str(&format!("loss_mae       {:e}\n", self.loss_mae));
        s.push_str(&format!("loss_reg       {:e}\n", self.loss_reg));
        s.push_str(&format!("bound factor   {:e}\n", self.bound_factor));
        s.push_str(&format!("structure      {}\n", if self.structure_ok { "ok" } else { "violated" }));
        for v in &self.structure.violations {
            s.push_str(&format!("  - {v}\n"));
        }
        if let Some(c) = &self.collapsed {
            s.push_str(&format!("mu             {:?}\n", c.mu));
            s.push_str(&format!("nu             {:?}\n", c.nu));
        }
        s.push_str(&format!(
            "verdict        {}\n",
            if self.hypothesis_ok { "CERTIFIED" } else { "NOT CERTIFIED" }
        ));
        s
    }
}

/// Graphs of the `K`-step training set that `manifest` lacks, described by weights.
pub fn missing_gk_members(manifest: &DatasetManifest) -> Result<Vec<String>> {
    let k = manifest.k_steps;
    let required = gen_gk(k, &default_k_range(k))?;
    Ok(required
        .inputs()
        .filter(|g| !manifest.inputs().any(|h| h.same_instance(g)))
        .map(|g| {
            let w: Vec<f64> = g.edges.iter().map(|e| e.weight).collect();
            format!("{}-node step-{} graph with edge weights {:?}", g.n, g.step.unwrap_or(0), w)
        })
        .collect())
}

pub fn certify(
    params: &MinAggGnnParams,
    manifest: &DatasetManifest,
    cfg: &crate::training::LossConfig,
) -> Result<Certificate> {
    let missing = missing_gk_members(manifest)?;
    if !missing.is_empty() {
        return Err(Error::Refused(format!(
            "training set lacks {} required graphs: {}",
            missing.len(),
            missing.join(", ")
        )));
    }
    let budget = params.config.param_budget();
    let nonzeros = count_nonzero(params, cfg.nonzero_threshold);
    let mae = loss_mae(params, manifest)?;
    let reg = mae + cfg.eta * nonzeros as f64;
    let epsilon = reg - cfg.eta * budget as f64;
    let m = manifest.total_reachable;
    let limit = 1.0 / (2.0 * m as f64 * budget as f64);
    let hypothesis_ok = 0.0 <= epsilon && epsilon < cfg.eta && cfg.eta < limit;
    let structure = check_sparsity_structure(params, cfg.nonzero_threshold);
    let collapsed = collapse_params(params, cfg.nonzero_threshold).ok();
    Ok(Certificate {
        eta: cfg.eta,
        epsilon,
        total_reachable: m,
        param_budget: budget,
        nonzeros,
        loss_mae: mae,
        loss_reg: reg,
        hypothesis_ok,
        structure_ok: structure.holds,
        bound_factor: m as f64 * epsilon,
        structure,
        collapsed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphAudit {
    pub index: usize,
    pub n: usize,
    /// Largest `|h - x| / x` over reachable targets (infinite if a zero target gets a nonzero prediction).
    pub max_rel_deviation: f64,
    pub worst_node: Option<usize>,
    pub pass_m_eps: bool,
    pub pass_2m_eps: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub suite: String,
    pub bound_factor: f64,
    pub pass_m_eps: bool,
    pub pass_2m_eps: bool,
    pub max_rel_deviation: f64,
    /// `max(0, deviation - bound_factor)` over the suite.
    pub max_violation: f64,
    pub worst: Option<(usize, usize)>,
    pub graphs: Vec<GraphAudit>,
}

fn inside(h: f64, x: f64, f: f64) -> bool {
    (1.0 - f) * x <= h && h <= (1.0 + f) * x
}

/// Checks `(1 - f) x <= h <= (1 + f) x` at every reachable target node for
/// `f = bound_factor` and `f = 2 * bound_factor`.
pub fn audit_with_factor(
    params: &MinAggGnnParams,
    bound_factor: f64,
    suite_name: &str,
    suite: &[AttributedGraph],
    k_steps: usize,
) -> Result<AuditReport> {
    let preds = forward_many(params, suite, 1)?;
    let mut graphs = Vec::with_capacity(suite.len());
    for (index, (g, h)) in suite.iter().zip(&preds).enumerate() {
        let target = bf_k(g, k_steps)?;
        let mut worst = (0.0f64, None);
        let (mut p1, mut p2) = (true, true);
        for (v, (&x, &hv)) in target.features.iter().zip(h).enumerate() {
            if x == target.beta {
                continue;
            }
            let dev = if x > 0.0 {
                (hv - x).abs() / x
            } else if hv == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            if dev > worst.0 || worst.1.is_none() {
                worst = (dev, Some(v));
            }
            p1 &= inside(hv, x, bound_factor);
            p2 &= inside(hv, x, 2.0 * bound_factor);
        }
        graphs.push(GraphAudit {
            index,
            n: g.n,
            max_rel_deviation: worst.0,
            worst_node: worst.1,
            pass_m_eps: p1,
            pass_2m_eps: p2,
        });
    }
    let worst_graph = graphs
        .iter()
        .filter(|a| a.worst_node.is_some())
        .max_by(|a, b| a.max_rel_deviation.total_cmp(&b.max_rel_deviation));
    let max_rel_deviation = worst_graph.map_or(0.0, |a| a.max_rel_deviation);
    Ok(AuditReport {
        suite: suite_name.to_string(),
        bound_factor,
        pass_m_eps: graphs.iter().all(|a| a.pass_m_eps),
        pass_2m_eps: graphs.iter().all(|a| a.pass_2m_eps),
        max_rel_deviation,
        max_violation: (max_rel_deviation - bound_factor).max(0.0),
        worst: worst_graph.and_then(|a| a.worst_node.map(|v| (a.index, v))),
        graphs,
    })
}

/// Envelope audit at the certificate's bound factor. Refuses uncertified models.
pub fn audit_extrapolation(
    params: &MinAggGnnParams,
    cert: &Certificate,
    suite_name: &str,
    suite: &[AttributedGraph],
    k_steps: usize,
) -> Result<AuditReport> {
    if !cert.hypothesis_ok {
        return Err(Error::Refused(format!(
            "certificate hypothesis fails (epsilon {:e}, eta {:e}, limit {:e}); no envelope is guaranteed",
            cert.epsilon,
            cert.eta,
            cert.eta_limit()
        )));
    }
    audit_with_factor(params, cert.bound_factor, suite_name, suite, k_steps)
}

/// The mixed 200-graph suite and 100 sparse ER graphs at each of n = 100, 500, 1000.
pub fn default_audit_suites(seed: u64) -> Result<Vec<(String, Vec<AttributedGraph>)>> {
    let mut out = vec![("mixed".to_string(), gen_test_suite(seed))];
    for n in [100, 500, 1000] {
        out.push((format!("er-{n}"), gen_er_sparse_family(n, 100, seed.wrapping_mul(1000).wrapping_add(n as u64))?));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimpleEnvelopeReport {
    pub epsilon: f64,
    pub h_small_max_error: f64,
    /// Max error on the toy set is below `epsilon / 20`.
    pub hypothesis_ok: bool,
    /// Only evaluated when the hypothesis holds.
    pub conclusion_ok: Option<bool>,
    /// Largest amount by which a node leaves `(1 +- eps) x +- eps`.
    pub worst_violation: Option<f64>,
    /// `|w2 W11 - 1| + |w2 W12 - 1|`.
    pub affine_gap: f64,
    /// `|w2 b1 + b2|`.
    pub bias_gap: f64,
    pub affine_ok: bool,
    pub bias_ok: bool,
}

pub fn check_simple_envelope(
    params: &SimpleGnnParams,
    epsilon: f64,
    audit_suite: &[AttributedGraph],
) -> Result<SimpleEnvelopeReport> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Config(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let mut err = 0.0f64;
    for p in &gen_h_small().pairs {
        let h = simple_forward(params, &p.input)?;
        for (a, b) in h.features.iter().zip(&p.target.features) {
            err = err.max((a - b).abs());
        }
    }
    let hypothesis_ok = err < epsilon / 20.0;
    let (conclusion_ok, worst_violation) = if hypothesis_ok {
        let mut worst = 0.0f64;
        for g in audit_suite {
            let x = bf_k(g, 1)?.features;
            let h = simple_forward(params, g)?.features;
            for (&x, &h) in x.iter().zip(&h) {
                let lo = (1.0 - epsilon) * x - epsilon;
                let hi = (1.0 + epsilon) * x + epsilon;
                worst = worst.max(lo - h).max(h - hi);
            }
        }
        (Some(worst <= 0.0), Some(worst.max(0.0)))
    } else {
        (None, None)
    };
    let affine_gap = (params.w2 * params.w11 - 1.0).abs() + (params.w2 * params.w12 - 1.0).abs();
    let bias_gap = (params.w2 * params.b1 + params.b2).abs();
    Ok(SimpleEnvelopeReport {
        epsilon,
        h_small_max_error: err,
        hypothesis_ok,
        conclusion_ok,
        worst_violation,
        affine_gap,
        bias_gap,
        affine_ok: affine_gap < epsilon,
        bias_ok: bias_gap < 20.0 * epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_experiment_train, gen_path};
    use crate::model::{build_exact_bf, MinAggConfig};
    use crate::training::LossConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn node_error_cases() {
        assert_eq!(node_error(0.0, 0.0), 0.0);
        assert_eq!(node_error(3.0, 0.0), 1.0);
        assert_eq!(node_error(3.0, 3.0), 0.0);
        assert_eq!(node_error(2.0, 4.0), 0.5);
        assert_eq!(node_error(0.0, 1.0), 1.0);
    }

    #[test]
    fn exact_scores_zero() {
        let p = build_exact_bf(&MinAggConfig::uniform(2, 2, 2, 2)).unwrap();
        let suite = gen_test_suite(4);
        for reps in 1..=3 {
            assert_eq!(e_test(&p, &suite[..120], 2, reps).unwrap(), 0.0);
        }
    }

    #[test]
    fn exact_certificate() {
        let c = MinAggConfig::uniform(2, 2, 2, 2);
        let p = build_exact_bf(&c).unwrap();
        let m = gen_experiment_train(0).unwrap();
        let cfg = LossConfig::for_manifest(&m, c.param_budget(), 1.0);
        let cert = certify(&p, &m, &cfg).unwrap();
        assert_eq!(cert.epsilon, 0.0);
        assert_eq!(cert.bound_factor, 0.0);
        assert!(cert.hypothesis_ok && cert.structure_ok);
        assert_eq!(cert.collapsed.as_ref().unwrap().mu, vec![1.0, 1.0]);
        assert!(cert.verdict().contains("CERTIFIED"));
        let audit = audit_extrapolation(&p, &cert, "mixed", &gen_test_suite(1)[..100], 2).unwrap();
        assert!(audit.pass_m_eps && audit.pass_2m_eps);
        assert_eq!(audit.max_rel_deviation, 0.0);
    }

    #[test]
    fn dense_model_is_not_certified() {
        let c = MinAggConfig::uniform(2, 2, 2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = MinAggGnnParams::init(&c, &mut rng).unwrap();
        let m = gen_gk(2, &[1, 2]).unwrap();
        let cert = certify(&p, &m, &LossConfig::for_manifest(&m, c.param_budget(), 1.0)).unwrap();
        assert!(!cert.hypothesis_ok && !cert.structure_ok);
        assert!(matches!(audit_extrapolation(&p, &cert, "x", &[], 2), Err(Error::Refused(_))));
    }

    #[test]
    fn certify_requires_training_set_members() {
        let c = MinAggConfig::uniform(2, 2, 2, 2);
        let p = build_exact_bf(&c).unwrap();
        let mut m = gen_gk(2, &[1, 2]).unwrap();
        m.pairs.pop();
        let err = certify(&p, &m, &LossConfig::for_manifest(&m, 10, 1.0)).unwrap_err();
        match err {
            Error::Refused(msg) => assert!(msg.contains("6-node"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn simple_envelope_gate() {
        let suite: Vec<_> = (1..5).map(|w| gen_path(0, &[w as f64, 2.0]).unwrap()).collect();
        let r = check_simple_envelope(&SimpleGnnParams::exact(), 0.1, &suite).unwrap();
        assert!(r.hypothesis_ok);
        assert_eq!(r.h_small_max_error, 0.0);
        assert_eq!(r.conclusion_ok, Some(true));
        assert_eq!(r.worst_violation, Some(0.0));
        let bad = SimpleGnnParams { b2: 5.0, ..SimpleGnnParams::exact() };
        let r = check_simple_envelope(&bad, 0.1, &suite).unwrap();
        assert!(!r.hypothesis_ok);
        assert_eq!(r.conclusion_ok, None);
        assert!(check_simple_envelope(&bad, 1.5, &suite).is_err());
    }
}
