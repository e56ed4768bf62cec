//! Drives the `safenav` binary end to end on the small pipeline config.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(format!("cli-{name}"));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn safenav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_safenav")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = safenav(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn manifest(dir: &Path, command: &str) -> Value {
    let text = std::fs::read_to_string(dir.join(format!("manifest-{command}.json"))).expect("manifest written");
    serde_json::from_str(&text).unwrap()
}

fn paths(m: &Value, key: &str) -> Vec<String> {
    m[key].as_array().unwrap().iter().map(|e| e["path"].as_str().unwrap().to_string()).collect()
}

fn assert_hashed(m: &Value, key: &str) {
    for e in m[key].as_array().unwrap() {
        let h = e["sha256"].as_str().unwrap();
        assert_eq!(h.len(), 64, "{e}");
        assert!(Path::new(e["path"].as_str().unwrap()).exists(), "{e}");
    }
}

/// Trains the quick pipeline into `dir` through the four training commands.
fn train_quick(dir: &Path) {
    let cfg = repo("configs/quick.toml");
    let (cfg, out) = (cfg.to_str().unwrap(), dir.to_str().unwrap());
    ok(&["generate-data", "--config", cfg, "--out", out]);
    ok(&["train-dynamics", "--config", cfg, "--out", out]);
    ok(&["train-ood", "--config", cfg, "--out", out]);
    ok(&["train-cbf", "--config", cfg, "--out", out]);
}

#[test]
fn training_commands_write_models_and_manifests() {
    let dir = scratch("train");
    train_quick(&dir);

    let gen = manifest(&dir, "generate-data");
    assert_eq!(gen["command"], "generate-data");
    assert_eq!(gen["seeds"]["pipeline"], 3);
    assert!(gen["config"]["sha256"].is_string());
    let outputs = paths(&gen, "outputs");
    for f in ["trajectories.txt", "pedestrians.txt", "labeled-static.txt", "labeled-dynamic.txt", "labeled-multirobot.txt"] {
        assert!(outputs.iter().any(|p| p.ends_with(f)), "{f} missing from {outputs:?}");
    }
    assert_hashed(&gen, "outputs");

    let dynm = manifest(&dir, "train-dynamics");
    assert_eq!(paths(&dynm, "models").len(), 3);
    assert_eq!(paths(&dynm, "inputs").len(), 1);
    assert_hashed(&dynm, "models");

    let cbf = manifest(&dir, "train-cbf");
    let models = paths(&cbf, "models");
    for t in ["static", "dynamic", "multirobot"] {
        assert!(models.iter().any(|p| p.ends_with(&format!("barrier-{t}.txt"))));
        assert!(cbf["seeds"][format!("cbf-{t}")].is_u64());
    }
    // Dynamics and rejection models are inputs, alongside the labeled sets.
    assert_eq!(paths(&cbf, "inputs").len(), 3 + 2 * 3);

    // Scenario runs are reproducible down to the byte.
    let scen = repo("configs/scenario-crossing.toml");
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let out = dir.join(format!("scenario-{name}"));
        ok(&[
            "run-scenario",
            "--config",
            scen.to_str().unwrap(),
            "--models",
            dir.to_str().unwrap(),
            "--reps",
            "1",
            "--out",
            out.to_str().unwrap(),
        ]);
        let m = manifest(&out, "run-scenario");
        assert_eq!(m["seeds"]["crossing"], 21);
        assert!(paths(&m, "models").iter().any(|p| p.ends_with("barrier-dynamic.txt")));
        assert_hashed(&m, "outputs");
        reports.push((
            std::fs::read(out.join("runs.csv")).unwrap(),
            std::fs::read(out.join("logs/crossing-rep00.csv")).unwrap(),
        ));
    }
    assert_eq!(reports[0], reports[1]);
    let header = String::from_utf8(reports[0].0.clone()).unwrap();
    assert!(header.starts_with("scenario,rep,seed,robot,"));
}

#[test]
fn platform_and_task_flags_narrow_the_work() {
    let dir = scratch("flags");
    let cfg = repo("configs/quick.toml");
    let stdout = ok(&[
        "generate-data",
        "--config",
        cfg.to_str().unwrap(),
        "--platform",
        "jackal",
        "--task",
        "static",
        "--seed",
        "9",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(stdout.contains("static:") && !stdout.contains("dynamic:"));
    let trajs = std::fs::read_to_string(dir.join("trajectories.txt")).unwrap();
    assert!(trajs.contains("jackal") && !trajs.contains("freight") && !trajs.contains("megarover"));
    assert!(!dir.join("labeled-dynamic.txt").exists());
    assert_eq!(manifest(&dir, "generate-data")["seeds"]["pipeline"], 9);
}

#[test]
fn bad_invocations_fail_with_a_message() {
    let dir = scratch("errors");
    let out = dir.to_str().unwrap();
    for args in [
        vec!["train-dynamics", "--out", out],
        vec!["generate-data", "--platform", "hovercraft", "--out", out],
        vec!["run-scenario", "--models", out, "--out", out],
        vec!["run-scenario", "--models", out, "--suite", "nonsense", "--out", out],
    ] {
        let res = safenav(&args);
        assert!(!res.status.success(), "{args:?} should fail");
        assert!(!res.stderr.is_empty());
    }
}
