use std::path::Path;
use std::process::{Command, Output};

use gtta_core::io::load_tensor;
use gtta_core::predictor::{predict_one, Mlp};
use gtta_core::Dataset;

fn gtta(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gtta")).args(args).output().expect("run gtta")
}

fn ok(args: &[&str]) -> Output {
    let out = gtta(args);
    assert!(out.status.success(), "gtta {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn unknown_flag_exits_with_usage_error() {
    let out = gtta(&["fit", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = gtta(&["fit", "--data", &s(&dir.path().join("absent.gttc")), "--out", &s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn zero_sigma_single_candidate_matches_base_model() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "blobs", "--seed", "4", "--out", &s(&d.join("data"))]);
    let data = d.join("data/data.gttc");
    ok(&["train", "--data", &s(&data), "--epochs", "3", "--out", &s(&d.join("model"))]);
    ok(&["fit", "--data", &s(&data), "--retain", "all", "--out", &s(&d.join("sub"))]);
    ok(&[
        "predict", "--model", &s(&d.join("model/model.gttc")), "--subspace", &s(&d.join("sub/subspace.gttc")),
        "--data", &s(&data), "--sigma", "0", "--n", "1", "--out", &s(&d.join("pred")),
    ]);
    let model = Mlp::load(&d.join("model/model.gttc")).unwrap();
    let ds = Dataset::load(&data).unwrap();
    let mean = load_tensor(&d.join("pred/mean.gtt")).unwrap();
    let std = load_tensor(&d.join("pred/std.gtt")).unwrap();
    for (i, x) in ds.inputs.rows().enumerate() {
        let base = predict_one(&model, x).unwrap();
        assert!(mean.row(i).iter().zip(base.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
    assert!(std.data().iter().all(|&v| v == 0.0));
}

#[test]
fn provenance_chains_hashes_and_config_merges() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "tabular", "--seed", "1", "--out", &s(&d.join("data"))]);
    let cfg = d.join("run.json");
    std::fs::write(&cfg, r#"{"retain": "count:3"}"#).unwrap();
    ok(&["fit", "--config", &s(&cfg), "--data", &s(&d.join("data/train.gttc")), "--out", &s(&d.join("sub"))]);

    let synth: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("data/provenance.json")).unwrap()).unwrap();
    let fit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("sub/provenance.json")).unwrap()).unwrap();
    let produced = &synth["outputs"]["train.gttc"];
    let consumed = &fit["inputs"][s(&d.join("data/train.gttc"))];
    assert!(produced.is_string());
    assert_eq!(produced, consumed);
    let argv: Vec<&str> = fit["argv"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(argv.windows(2).any(|w| w == ["--retain", "count:3"]));

    let sub = gtta_core::Subspace::<f64>::load(&d.join("sub/subspace.gttc")).unwrap();
    assert_eq!(sub.n_components(), 3);
}

#[test]
fn replay_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "blobs", "--seed", "2", "--out", &s(&d.join("data"))]);
    let prov = d.join("data/provenance.json");
    ok(&["replay", &s(&prov)]);
    let mut p: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&prov).unwrap()).unwrap();
    p["outputs"]["data.gttc"] = serde_json::Value::String("0".repeat(64));
    std::fs::write(&prov, serde_json::to_string(&p).unwrap()).unwrap();
    let out = gtta(&["replay", &s(&prov), "--out", &s(&d.join("again"))]);
    assert_eq!(out.status.code(), Some(1));
}
