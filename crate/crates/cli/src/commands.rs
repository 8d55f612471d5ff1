use std::path::{Path, PathBuf};

use bfgnn::certificate::{audit_extrapolation, certify as certify_model, default_audit_suites, e_test, AuditReport};
use bfgnn::dataset::{
    default_k_range, gen_experiment_train, gen_er_sparse_family, gen_gk, gen_h_small, gen_test_suite, DatasetManifest,
};
use bfgnn::graph::{bf_k, brute_force_khop, AttributedGraph};
use bfgnn::model::{build_exact_bf, count_nonzero, MinAggConfig, MinAggGnnParams, DEFAULT_NONZERO_THRESHOLD};
use bfgnn::training::{
    default_eta, loss_and_gradient, loss_reg, prune_and_refit, PreparedSet, smooth_csv, train_observed, LossConfig, TrainConfig, DEFAULT_L1,
    DEFAULT_PRUNE_THRESHOLD, DEFAULT_REFIT_STEPS,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{out_dir, resolve};
use crate::error::CliError;
use crate::io::{read, read_json, write, write_json};
use crate::{
    CertifyFlags, Common, EvalFlags, ExactFlags, ExportFlags, GenTestFlags, GenTrainFlags, OracleFlags, TrainFlags,
};

/// Resolves the settings of one command and writes them as `config.json`
/// into its output directory.
fn setup<C, F>(flags: &F, common: &Common, command: &str) -> Result<(C, PathBuf), CliError>
where
    C: Serialize + for<'de> Deserialize<'de> + Default,
    F: Serialize,
{
    let cfg: C = resolve(flags, common.config.as_deref())?;
    let dir = out_dir(common.out.as_ref(), command);
    write_json(&dir.join("config.json"), &cfg)?;
    Ok((cfg, dir))
}

fn required<'a>(v: &'a Option<PathBuf>, name: &str) -> Result<&'a Path, CliError> {
    v.as_deref().ok_or_else(|| CliError::Config(format!("--{name} is required")))
}

fn load_model(path: &Path) -> Result<MinAggGnnParams, CliError> {
    MinAggGnnParams::from_json(&read(path)?).map_err(|e| match e {
        bfgnn::Error::Json(source) => CliError::Parse { path: path.into(), source },
        other => other.into(),
    })
}

fn load_manifest(path: &Path) -> Result<DatasetManifest, CliError> {
    DatasetManifest::from_json(&read(path)?).map_err(|e| match e {
        bfgnn::Error::Json(source) => CliError::Parse { path: path.into(), source },
        other => other.into(),
    })
}

fn preset(name: &str) -> Result<MinAggConfig, CliError> {
    MinAggConfig::preset(name).ok_or_else(|| {
        CliError::Config(format!("unknown preset `{name}` (two-layer-wide, one-layer, two-layer-narrow)"))
    })
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GenTrainConfig {
    set: String,
    k: usize,
    k_range: Option<Vec<usize>>,
    seed: u64,
}

impl Default for GenTrainConfig {
    fn default() -> Self {
        GenTrainConfig { set: "experiment".into(), k: 2, k_range: None, seed: 0 }
    }
}

pub fn gen_train(flags: &GenTrainFlags, common: &Common) -> Result<(), CliError> {
    let (cfg, dir): (GenTrainConfig, _) = setup(flags, common, "gen-train")?;
    let manifest = match cfg.set.as_str() {
        "h-small" => gen_h_small(),
        "gk" => {
            let range = cfg.k_range.clone().unwrap_or_else(|| default_k_range(cfg.k));
            gen_gk(cfg.k, &range)?
        }
        "experiment" => {
            if cfg.k != 2 {
                return Err(CliError::Config("the experiment set is defined for K = 2 only".into()));
            }
            gen_experiment_train(cfg.seed)?
        }
        other => return Err(CliError::Config(format!("unknown set `{other}` (h-small, gk, experiment)"))),
    };
    write(&dir.join("manifest.json"), &manifest.to_json()?)?;
    println!("{} pairs, M = {}, written to {}", manifest.pairs.len(), manifest.total_reachable, dir.display());
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GenTestConfig {
    family: String,
    seed: u64,
    n: usize,
    count: usize,
}

impl Default for GenTestConfig {
    fn default() -> Self {
        GenTestConfig { family: "mixed".into(), seed: 0, n: 100, count: 100 }
    }
}

pub fn gen_test(flags: &GenTestFlags, common: &Common) -> Result<(), CliError> {
    let (cfg, dir): (GenTestConfig, _) = setup(flags, common, "gen-test")?;
    let suite = match cfg.family.as_str() {
        "mixed" => gen_test_suite(cfg.seed),
        "er-sparse" => gen_er_sparse_family(cfg.n, cfg.count, cfg.seed)?,
        other => return Err(CliError::Config(format!("unknown family `{other}` (mixed, er-sparse)"))),
    };
    write(&dir.join("suite.json"), &serde_json::to_string(&suite)?)?;
    println!("{} graphs written to {}", suite.len(), dir.display());
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainRunConfig {
    preset: String,
    manifest: Option<PathBuf>,
    data_seed: u64,
    seed: u64,
    l1: f64,
    steps: usize,
    lr: f64,
    eta: Option<f64>,
    eval_stride: usize,
    summary_stride: usize,
    test_seed: u64,
    orthant_l1: bool,
    checkpoint_every: usize,
    prune: f64,
    refit_steps: usize,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            preset: "two-layer-wide".into(),
            manifest: None,
            data_seed: 0,
            seed: 0,
            l1: DEFAULT_L1,
            steps: 20_000,
            lr: 1e-3,
            eta: None,
            eval_stride: 100,
            summary_stride: 100,
            test_seed: 0,
            orthant_l1: true,
            checkpoint_every: 0,
            prune: DEFAULT_PRUNE_THRESHOLD,
            refit_steps: DEFAULT_REFIT_STEPS,
        }
    }
}

#[derive(Serialize)]
struct TrainSummary {
    loss_mse: f64,
    loss_reg: f64,
    e_test: f64,
    nonzeros: usize,
    param_budget: usize,
}

pub fn train(flags: &TrainFlags, common: &Common) -> Result<(), CliError> {
    let (cfg, dir): (TrainRunConfig, _) = setup(flags, common, "train")?;
    let arch = preset(&cfg.preset)?;
    let manifest = match &cfg.manifest {
        Some(p) => load_manifest(p)?,
        None => gen_experiment_train(cfg.data_seed)?,
    };
    let init = MinAggGnnParams::init(&arch, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let mut loss = LossConfig::for_manifest(&manifest, arch.param_budget(), cfg.l1);
    if let Some(eta) = cfg.eta {
        loss.eta = eta;
    }
    let mut tc = TrainConfig::new(cfg.steps, loss);
    tc.optimizer.lr = cfg.lr;
    tc.eval_stride = cfg.eval_stride;
    tc.summary_stride = cfg.summary_stride;
    tc.orthant_l1 = cfg.orthant_l1;
    let suite = gen_test_suite(cfg.test_seed);
    let ckpt_dir = dir.join("checkpoints");
    let (mut params, trace) = train_observed(&init, &manifest, &tc, &suite, |step, p| {
        let done = step + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
            let path = ckpt_dir.join(format!("step-{done:06}.json"));
            std::fs::create_dir_all(&ckpt_dir)?;
            std::fs::write(path, p.to_json()?)?;
        }
        Ok(())
    })?;
    write(&dir.join("trace.csv"), &trace.to_csv()?)?;
    if cfg.l1 > 0.0 && cfg.refit_steps > 0 {
        write(&dir.join("model_l1.json"), &params.to_json()?)?;
        let (refit, refit_trace) = prune_and_refit(&params, &manifest, cfg.prune, cfg.refit_steps, tc.optimizer)?;
        write(&dir.join("refit_trace.csv"), &refit_trace.to_csv()?)?;
        params = refit;
    }
    write(&dir.join("model.json"), &params.to_json()?)?;
    let final_losses = loss_and_gradient(&params, &PreparedSet::new(&manifest)?, 0.0)?.0;
    let summary = TrainSummary {
        loss_mse: final_losses.mse,
        loss_reg: loss_reg(&params, &manifest, &loss)?,
        e_test: e_test(&params, &suite, arch.k_steps, 1)?,
        nonzeros: count_nonzero(&params, loss.nonzero_threshold),
        param_budget: arch.param_budget(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    println!(
        "trained {} steps: mse {:e}, e_test {}, {} nonzeros (budget {}); outputs in {}",
        cfg.steps,
        summary.loss_mse,
        summary.e_test,
        summary.nonzeros,
        summary.param_budget,
        dir.display()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct EvalConfig {
    model: Option<PathBuf>,
    suite: Option<PathBuf>,
    er_n: Option<usize>,
    count: usize,
    seed: u64,
    reps: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { model: None, suite: None, er_n: None, count: 100, seed: 0, reps: 1 }
    }
}

#[derive(Serialize)]
struct EvalReport {
    suite: String,
    graphs: usize,
    reps: usize,
    e_test: f64,
}

pub fn eval(flags: &EvalFlags, common: &Common) -> Result<(), CliError> {
    let (cfg, dir): (EvalConfig, _) = setup(flags, common, "eval")?;
    let params = load_model(required(&cfg.model, "model")?)?;
    if cfg.reps == 0 {
        return Err(CliError::Config("--reps must be positive".into()));
    }
    let (name, suite): (String, Vec<AttributedGraph>) = match (&cfg.suite, cfg.er_n) {
        (Some(_), Some(_)) => return Err(CliError::Config("give either --suite or --er-n".into())),
        (Some(p), None) => (p.display().to_string(), read_json(p)?),
        (None, Some(n)) => (format!("er-{n}"), gen_er_sparse_family(n, cfg.count, cfg.seed)?),
        (None, None) => ("mixed".into(), gen_test_suite(cfg.seed)),
    };
    let value = e_test(&params, &suite, params.config.k_steps, cfg.reps)?;
    write_json(&dir.join("eval.json"), &EvalReport { suite: name.clone(), graphs: suite.len(), reps: cfg.reps, e_test: value })?;
    println!("e_test {value} ({name}, {} graphs, {} reps)", suite.len(), cfg.reps);
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct CertifyConfig {
    model: Option<PathBuf>,
    manifest: Option<PathBuf>,
    eta: Option<f64>,
    threshold: f64,
    audit: bool,
    audit_seed: u64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig {
            model: None,
            manifest: None,
            eta: None,
            threshold: DEFAULT_NONZERO_THRESHOLD,
            audit: true,
            audit_seed: 0,
        }
    }
}

#[derive(Serialize)]
#[serde(untagged)]
enum AuditOutcome {
    Reports(Vec<AuditReport>),
    Refused { refused: String },
}

pub fn certify(flags: &CertifyFlags, common: &Common) -> Result<(), CliError> {
    let (cfg, dir): (CertifyConfig, _) = setup(flags, common, "certify")?;
    let params = load_model(required(&cfg.model, "model")?)?;
    let k = params.config.k_steps;
    let manifest = match &cfg.manifest {
        Some(p) => load_manifest(p)?,
        None => gen_gk(k, &default_k_range(k))?,
    };
    let budget = params.config.param_budget();
    let loss = LossConfig {
        eta: cfg.eta.unwrap_or_else(|| default_eta(manifest.total_reachable, budget)),
        lambda_l1: 0.0,
        nonzero_threshold: cfg.threshold,
    };
    let cert = certify_model(&params, &manifest, &loss)?;
    write_json(&dir.join("certificate.json"), &cert)?;
    let verdict = cert.verdict();
    write(&dir.join("verdict.txt"), &verdict)?;
    print!("{verdict}");
    if cfg.audit {
        let outcome = if cert.hypothesis_ok {
            let mut reports = Vec::new();
            for (name, suite) in default_audit_suites(cfg.audit_seed)? {
                let r = audit_extrapolation(&params, &cert, &name, &suite, k)?;
                println!(
                    "audit {name}: max deviation {:e}, within M*eps {}, within 2M*eps {}",
                    r.max_rel_deviation, r.pass_m_eps, r.pass_2m_eps
                );
                reports.push(r);
            }
            AuditOutcome::Reports(reports)
        } else {
            println!("audit skipped: the certificate hypothesis does not hold");
            AuditOutcome::Refused { refused: "certificate hypothesis does not hold".into() }
        };
        write_json(&dir.join("audit.json"), &outcome)?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ExactConfig {
    preset: Option<String>,
    layers: usize,
    k: usize,
    m: usize,
    width: usize,
}

impl Default for ExactConfig {
    fn default() -> Self {
        ExactConfig { preset: None, layers: 2, k: 2, m: 2, width: 1 }
    }
}

pub fn exact_bf(flags: &ExactFlags, common: &Common) -> Result<(), CliError> {
    let (cfg, dir): (ExactConfig, _) = setup(flags, common, "exact-bf")?;
    let arch = match &cfg.preset {
        Some(name) => preset(name)?,
        None => MinAggConfig::uniform(cfg.layers, cfg.k, cfg.m, cfg.width),
    };
    let params = build_exact_bf(&arch)?;
    write(&dir.join("model.json"), &params.to_json()?)?;
    println!(
        "exact model with {} nonzeros (L={}, K={}, m={}) written to {}",
        count_nonzero(&params, DEFAULT_NONZERO_THRESHOLD),
        arch.layers,
        arch.k_steps,
        arch.m,
        dir.display()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ExportConfig {
    trace: Option<PathBuf>,
    sigma: f64,
}

impl Default for ExportConfig {
    fn default() -> Self {
        ExportConfig { trace: None, sigma: 20.0 }
    }
}

pub fn export(flags: &ExportFlags, common: &Common) -> Result<(), CliError> {
    let (cfg, dir): (ExportConfig, _) = setup(flags, common, "export")?;
    let text = read(required(&cfg.trace, "trace")?)?;
    let smoothed = smooth_csv(&text, cfg.sigma)?;
    write(&dir.join("trace_smoothed.csv"), &smoothed)?;
    println!("smoothed trace (sigma {}) written to {}", cfg.sigma, dir.display());
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct OracleConfig {
    graph: Option<PathBuf>,
    k: usize,
    brute_force: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { graph: None, k: 1, brute_force: false }
    }
}

pub fn oracle(flags: &OracleFlags, common: &Common) -> Result<(), CliError> {
    let (cfg, dir): (OracleConfig, _) = setup(flags, common, "oracle")?;
    let path = required(&cfg.graph, "graph")?;
    let g: AttributedGraph = read_json(path)?;
    g.validate()?;
    let result = if cfg.brute_force {
        g.with_features(brute_force_khop(&g, cfg.k)?).with_step(g.step.map(|t| t + cfg.k as u32))
    } else {
        bf_k(&g, cfg.k)?
    };
    let text = serde_json::to_string(&result)?;
    write(&dir.join("graph.json"), &text)?;
    println!("{text}");
    Ok(())
}
