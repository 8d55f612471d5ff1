use std::path::Path;
use std::process::{Command, Output};

use bfgnn::certificate::e_test;
use bfgnn::dataset::{gen_er_sparse_family, gen_path, DatasetManifest};
use bfgnn::model::{MinAggConfig, MinAggGnnParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bfgnn"))
        .args(args)
        .current_dir(dir)
        .env_remove("BFGNN_OUT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn exact_model_certifies_with_zero_epsilon() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["exact-bf", "--L", "2", "--K", "2", "--m", "2", "--out", "ex"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(d.path(), &["certify", "--model", "ex/model.json", "--out", "cert"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("verdict        CERTIFIED"), "{stdout}");
    let cert = json(&d.path().join("cert/certificate.json"));
    assert_eq!(cert["epsilon"], 0.0);
    assert_eq!(cert["hypothesis_ok"], true);
    let audits = json(&d.path().join("cert/audit.json"));
    assert_eq!(audits.as_array().unwrap().len(), 4);
    assert!(d.path().join("cert/config.json").exists());
}

#[test]
fn generation_is_idempotent() {
    let d = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = run(d.path(), &["gen-train", "--set", "experiment", "--seed", "5", "--out", out]);
        assert_eq!(code(&o), 0);
        let o = run(d.path(), &["gen-test", "--family", "er-sparse", "--n", "50", "--count", "3", "--out", out]);
        assert_eq!(code(&o), 0);
    }
    for f in ["manifest.json", "suite.json", "config.json"] {
        let a = std::fs::read(d.path().join("a").join(f)).unwrap();
        let b = std::fs::read(d.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn eval_matches_in_process_metric() {
    let d = tempfile::tempdir().unwrap();
    let config = MinAggConfig::uniform(2, 2, 2, 4);
    let p = MinAggGnnParams::init(&config, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    std::fs::write(d.path().join("m.json"), p.to_json().unwrap()).unwrap();
    let o = run(d.path(), &["eval", "--model", "m.json", "--er-n", "60", "--count", "5", "--seed", "9", "--reps", "2", "--out", "ev"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let reported = json(&d.path().join("ev/eval.json"))["e_test"].as_f64().unwrap();
    let expected = e_test(&p, &gen_er_sparse_family(60, 5, 9).unwrap(), 2, 2).unwrap();
    assert_eq!(reported.to_bits(), expected.to_bits());
}

#[test]
fn short_training_run_writes_artifacts() {
    let d = tempfile::tempdir().unwrap();
    let args = [
        "train", "--preset", "two-layer-narrow", "--steps", "30", "--eval-stride", "10", "--summary-stride", "10",
        "--checkpoint-every", "15", "--refit-steps", "5", "--seed", "2",
    ];
    let mut with_out = args.to_vec();
    with_out.extend(["--out", "run"]);
    let o = run(d.path(), &with_out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run_dir = d.path().join("run");
    for f in ["config.json", "trace.csv", "refit_trace.csv", "model.json", "model_l1.json", "summary.json"] {
        assert!(run_dir.join(f).exists(), "{f} missing");
    }
    assert!(run_dir.join("checkpoints/step-000015.json").exists());
    assert!(run_dir.join("checkpoints/step-000030.json").exists());
    let trace = std::fs::read_to_string(run_dir.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 31);
    assert!(trace.starts_with("step,loss_mse,loss_mse_l1,loss_reg,e_test,"));

    // same resolved config, same bytes
    let mut again = args.to_vec();
    again.extend(["--out", "run2"]);
    assert_eq!(code(&run(d.path(), &again)), 0);
    for f in ["trace.csv", "model.json"] {
        assert_eq!(std::fs::read(run_dir.join(f)).unwrap(), std::fs::read(d.path().join("run2").join(f)).unwrap());
    }

    let o = run(d.path(), &["export", "--trace", "run/trace.csv", "--sigma", "2", "--out", "ex"]);
    assert_eq!(code(&o), 0);
    let smoothed = std::fs::read_to_string(d.path().join("ex/trace_smoothed.csv")).unwrap();
    assert_eq!(smoothed.lines().next(), trace.lines().next());
    assert_eq!(json(&d.path().join("ex/config.json"))["sigma"], 2.0);
}

#[test]
fn config_file_is_merged_under_flags() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("c.json"), r#"{"set": "gk", "k": 3, "seed": 4}"#).unwrap();
    let o = run(d.path(), &["gen-train", "--config", "c.json", "--K", "1", "--out", "g"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = json(&d.path().join("g/config.json"));
    assert_eq!(cfg["set"], "gk");
    assert_eq!(cfg["k"], 1);
    assert_eq!(cfg["seed"], 4);
}

#[test]
fn output_root_comes_from_the_environment() {
    let d = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_bfgnn"))
        .args(["exact-bf"])
        .current_dir(d.path())
        .env("BFGNN_OUT", "outputs")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(d.path().join("outputs/exact-bf/model.json").exists());
}

#[test]
fn oracle_runs_bellman_ford_and_walks() {
    let d = tempfile::tempdir().unwrap();
    let g = r#"{"n": 3, "beta": 4.0, "step": 0, "features": [0.0, 4.0, 4.0], "edges": [[0, 1, 1.0], [1, 2, 2.0]]}"#;
    std::fs::write(d.path().join("g.json"), g).unwrap();
    for extra in [&[][..], &["--brute-force"][..]] {
        let mut args = vec!["oracle", "--graph", "g.json", "--K", "2", "--out", "o"];
        args.extend(extra);
        let o = run(d.path(), &args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let out: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(out["features"], serde_json::json!([0.0, 1.0, 3.0]));
        assert_eq!(out["step"], 2);
    }
}

#[test]
fn error_classes_have_distinct_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    assert_eq!(code(&run(p, &["train", "--no-such-flag"])), 2);
    assert_eq!(code(&run(p, &["oracle", "--graph", "missing.json", "--out", "x"])), 3);
    std::fs::write(p.join("bad.json"), "{not json").unwrap();
    assert_eq!(code(&run(p, &["oracle", "--graph", "bad.json", "--out", "x"])), 4);
    std::fs::write(p.join("c.json"), r#"{"colour": 1}"#).unwrap();
    assert_eq!(code(&run(p, &["export", "--config", "c.json", "--out", "x"])), 5);
    assert_eq!(code(&run(p, &["exact-bf", "--L", "1", "--K", "2", "--out", "x"])), 5);
    let neg = r#"{"n": 2, "beta": 4.0, "step": 0, "features": [0.0, 4.0], "edges": [[0, 1, -1.0]]}"#;
    std::fs::write(p.join("neg.json"), neg).unwrap();
    assert_eq!(code(&run(p, &["oracle", "--graph", "neg.json", "--out", "x"])), 6);

    // a certificate needs the K-step training set; the toy set lacks it
    assert_eq!(code(&run(p, &["exact-bf", "--L", "1", "--K", "1", "--m", "1", "--out", "one"])), 0);
    assert_eq!(code(&run(p, &["gen-train", "--set", "h-small", "--out", "toy"])), 0);
    let o = run(p, &["certify", "--model", "one/model.json", "--manifest", "toy/manifest.json", "--out", "x"]);
    assert_eq!(code(&o), 7, "{}", String::from_utf8_lossy(&o.stderr));

    // squared errors of distances near 1e200 overflow
    let huge = DatasetManifest::new("huge", 2, vec![gen_path(0, &[1e200, 1e200]).unwrap()]).unwrap();
    std::fs::write(p.join("huge.json"), huge.to_json().unwrap()).unwrap();
    let args = ["train", "--preset", "two-layer-narrow", "--manifest", "huge.json", "--steps", "5", "--eval-stride", "0"];
    let o = run(p, &[&args[..], &["--out", "x"]].concat());
    assert_eq!(code(&o), 8, "{}", String::from_utf8_lossy(&o.stderr));
}
