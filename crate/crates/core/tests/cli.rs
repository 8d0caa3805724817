//! End-to-end runs of the `gantry` binary.

mod common;

use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use gantry::dose::{load_dose, Plan};
use gantry::phantom::load_phantom;
use gantry::{EnvConfig, Environment};

fn gantry(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gantry"))
        .args(args)
        .env_remove("OPENAI_API_KEY")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = gantry(args);
    assert!(
        out.status.success(),
        "gantry {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn files_under(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn phantom_gen_is_deterministic() {
    let dir = common::temp_dir();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["phantom", "gen", "--dims", "20", "--spacing", "6", "--seed", "4", "--out", p(out)]);
    }
    assert_eq!(files_under(&a), files_under(&b));
    let phantom = load_phantom(&a).unwrap();
    assert_eq!(phantom.geometry().dims, [20, 20, 20]);
    assert!(a.join("config.json").exists());
}

#[test]
fn phantom_gen_rejects_bad_dims_without_leftovers() {
    let dir = common::temp_dir();
    let out = dir.path().join("ph");
    let res = gantry(&["phantom", "gen", "--dims", "4,4,4", "--out", p(&out)]);
    assert!(!res.status.success());
    assert!(!String::from_utf8_lossy(&res.stderr).is_empty());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn score_matches_library() {
    let dir = common::temp_dir();
    let out = dir.path().join("score");
    let stdout = ok(&["score", "--angles", "0,72,144,216,288", "--out", p(&out)]);
    let printed: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    let saved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("reward.json")).unwrap()).unwrap();
    assert_eq!(printed, saved);

    let env = Environment::new(common::standard_phantom(), EnvConfig::default()).unwrap();
    let plan = Plan::from_angles(&[0.0, 72.0, 144.0, 216.0, 288.0], 5).unwrap();
    let eval = env.evaluate_plan(&plan).unwrap();
    assert_eq!(saved["total"].as_f64().unwrap(), eval.reward.total);
    let (dose, manifest) = load_dose(&out.join("dose")).unwrap();
    assert_eq!(dose.geometry, eval.dose.dose.geometry);
    // Stored as float32.
    assert!(dose.dose_gy.iter().zip(&eval.dose.dose.dose_gy).all(|(a, b)| *a == *b as f32 as f64));
    assert_eq!(manifest.plan_angles_deg, plan.angles());
}

#[test]
fn score_needs_angles() {
    assert!(!gantry(&["score", "--angles"]).status.success());
    assert!(!gantry(&["score"]).status.success());
}

#[test]
fn dvh_from_scored_dose() {
    let dir = common::temp_dir();
    let ph = dir.path().join("ph");
    let sc = dir.path().join("sc");
    let dv = dir.path().join("dvh");
    ok(&["phantom", "gen", "--out", p(&ph)]);
    ok(&["score", "--phantom", p(&ph), "--angles", "0,120,240", "--out", p(&sc)]);
    ok(&["dvh", "--phantom", p(&ph), "--dose", &format!("{}/dose", p(&sc)), "--bins", "30", "--out", p(&dv)]);
    let ptv = std::fs::read_to_string(dv.join("dvh_prostate.csv")).unwrap();
    let lines: Vec<&str> = ptv.lines().collect();
    assert_eq!(lines[0], "edge_gy,volume_fraction");
    assert_eq!(lines.len(), 32);
    assert_eq!(lines[1], "0,1");
}

#[test]
fn train_dqn_writes_weights_and_returns() {
    let dir = common::temp_dir();
    let out = dir.path().join("dqn");
    ok(&["train-dqn", "--episodes", "20", "--seed", "1", "--out", p(&out)]);
    let returns = std::fs::read_to_string(out.join("returns.csv")).unwrap();
    assert_eq!(returns.lines().count(), 21);
    assert!(out.join("weights/manifest.json").exists());
    let net = gantry::agents::QNetwork::load(&out.join("weights")).unwrap();
    assert_eq!(net.n_actions(), 37);
}

#[test]
fn agent_http_without_key_fails_cleanly() {
    let dir = common::temp_dir();
    let out = dir.path().join("run");
    let res = gantry(&["agent", "run", "--backend", "http", "--out", p(&out)]);
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("OPENAI_API_KEY"), "{err}");
    assert!(!out.exists());
}

#[test]
fn agent_scripted_replay() {
    let dir = common::temp_dir();
    let script = dir.path().join("script.json");
    std::fs::write(&script, serde_json::to_string(&common::MODEL_REPLIES).unwrap()).unwrap();
    let out = dir.path().join("run");
    ok(&[
        "agent", "run", "--backend", "mock-script", "--script", p(&script), "--iterations", "4", "--max-beams", "8",
        "--out", p(&out),
    ]);
    let t = gantry::agents::AgentTranscript::load(&out.join("transcript.jsonl")).unwrap();
    assert_eq!(t.parsed_count(), 4);
    for (it, expected) in t.iterations.iter().zip(common::MODEL_REPLY_ANGLES) {
        assert_eq!(it.parsed_angles.as_deref(), Some(expected));
        for img in &it.images_sent {
            assert!(Path::new(img).exists(), "{img}");
        }
    }
    assert!(out.join("dose_best").exists());
}

#[test]
fn evaluate_is_reproducible() {
    let dir = common::temp_dir();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, jobs) in [(&a, "1"), (&b, "3")] {
        ok(&[
            "evaluate", "--methods", "random,text2plan", "--trials", "4", "--seed", "5", "--jobs", jobs, "--out",
            p(out),
        ]);
    }
    let strip_config = |v: Vec<(String, Vec<u8>)>| v.into_iter().filter(|f| f.0 != "config.json").collect::<Vec<_>>();
    assert_eq!(strip_config(files_under(&a)), strip_config(files_under(&b)));
    let stats: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(a.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["anova"]["df_between"], 1);
    assert_eq!(stats["anova"]["df_within"], 6);
    assert!(a.join("rewards_random.csv").exists());
}

#[test]
fn rejects_unknown_config_keys() {
    let dir = common::temp_dir();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"env": {"max_beam": 4}}"#).unwrap();
    let res = gantry(&["--config", p(&cfg), "score", "--angles", "0"]);
    assert!(!res.status.success());
}

#[test]
fn library_entry_point_matches_binary() {
    let dir = common::temp_dir();
    let out = dir.path().join("s");
    gantry::cli::run(["gantry", "score", "--angles", "45,135", "--out", p(&out)]).unwrap();
    let env = Environment::new(Arc::clone(&common::standard_phantom()), EnvConfig::default()).unwrap();
    let eval = env.evaluate_plan(&Plan::from_angles(&[45.0, 135.0], 5).unwrap()).unwrap();
    let saved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("reward.json")).unwrap()).unwrap();
    assert_eq!(saved["total"].as_f64().unwrap(), eval.reward.total);
}
