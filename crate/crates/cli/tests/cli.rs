use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn east(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_east")).current_dir(dir).env_remove("EAST_OUT_DIR").args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn read_json(p: impl AsRef<Path>) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

/// Temp dir with a 3-class CSV and a small config pointing at it.
fn workspace() -> (TempDir, PathBuf) {
    let tmp = TempDir::new().unwrap();
    let o = east(tmp.path(), &["data", "gen-synth", "--d", "3", "--n", "450", "--weights", "0.5,0.3,0.2", "--seed", "9", "--out", "gen"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"version":"east-config-v1","data":{"path":"gen/data.csv","split_seed":2},
            "train":{"hidden":[16,8,8],"batch_size":64,"learning_rate":0.01,"max_epochs_per_phase":6,
                     "inner_patience":2,"outer_patience":2,"max_phases":4}}"#,
    )
    .unwrap();
    (tmp, cfg)
}

#[test]
fn gen_synth_then_inspect() {
    let (tmp, _) = workspace();
    let m = read_json(tmp.path().join("gen/manifest.json"));
    assert_eq!(m["dataset"]["n"], 450);
    assert_eq!(m["dataset"]["generator"]["seed"], 9);
    let o = east(tmp.path(), &["data", "inspect", "--data", "gen/data.csv", "--out", "insp"]);
    assert_eq!(code(&o), 0);
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("rows          450"));
    let r = read_json(tmp.path().join("insp/inspect.json"));
    let counts: Vec<u64> = r["dataset"]["class_counts"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(counts.iter().sum::<u64>(), 450);
    let e = r["equitability"].as_f64().unwrap();
    assert!(e > 0.0 && e < 1.0);
}

#[test]
fn train_writes_artifacts_and_is_reproducible() {
    let (tmp, _) = workspace();
    for out in ["a", "b"] {
        let o = east(tmp.path(), &["train", "--config", "cfg.json", "--seeds", "3..4", "--parallel", "2", "--out", out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for seed in ["seed-3", "seed-4"] {
        for f in ["model.bin", "history.json", "history.csv", "metrics.json", "metrics.csv"] {
            let a = std::fs::read(tmp.path().join("a").join(seed).join(f)).unwrap();
            let b = std::fs::read(tmp.path().join("b").join(seed).join(f)).unwrap();
            assert_eq!(a, b, "{seed}/{f} differs between identical runs");
        }
    }
    let m = read_json(tmp.path().join("a/manifest.json"));
    assert_eq!(m["seeds"], serde_json::json!([3, 4]));
    assert_eq!(m["config"]["version"], "east-config-v1");
    assert_eq!(m["config"]["train"]["temperature_0"], 0.2);
    assert_eq!(m["input_hash"].as_str().unwrap().len(), 64);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 12);
    let s = read_json(tmp.path().join("a/summary.json"));
    assert!(s["metrics"]["test_accuracy"]["std"].as_f64().unwrap() >= 0.0);
    let ckpt = read_json(tmp.path().join("a/seed-3/model.bin"));
    assert_eq!(ckpt["version"], "east-mlp-v1");
    assert_eq!(ckpt["standardizer"]["mean"].as_array().unwrap().len(), 3);
}

#[test]
fn flags_override_config() {
    let (tmp, _) = workspace();
    let o = east(
        tmp.path(),
        &["train", "--config", "cfg.json", "--seed", "7", "--loss", "east", "--betas", "1,0.5,2", "--temperature-0", "0.1", "--decay", "0.5", "--out", "o"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let h = read_json(tmp.path().join("o/seed-7/history.json"));
    assert_eq!(h["config"]["seed"], 7);
    assert_eq!(h["config"]["metric"]["betas"], serde_json::json!([1.0, 0.5, 2.0]));
    let temps: Vec<f64> = h["history"]["temperatures"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(temps[0], 0.1);
    if temps.len() > 1 {
        assert_eq!(temps[1], 0.05);
    }
    let o = east(tmp.path(), &["train", "--config", "cfg.json", "--betas", "1,2", "--out", "bad"]);
    assert_eq!(code(&o), 2);
    let o = east(tmp.path(), &["train", "--config", "cfg.json", "--temperature-0", "0.5", "--out", "bad"]);
    assert_eq!(code(&o), 2);
    let o = east(tmp.path(), &["train", "--config", "cfg.json", "--loss", "hinge", "--out", "bad"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn out_dir_from_environment() {
    let (tmp, _) = workspace();
    let o = Command::new(env!("CARGO_BIN_EXE_east"))
        .current_dir(tmp.path())
        .env("EAST_OUT_DIR", "from-env")
        .args(["train", "--config", "cfg.json", "--loss", "ce"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(tmp.path().join("from-env/seed-0/model.bin").exists());
}

#[test]
fn eval_is_deterministic_and_checks_shapes() {
    let (tmp, _) = workspace();
    assert_eq!(code(&east(tmp.path(), &["train", "--config", "cfg.json", "--out", "t"])), 0);
    let run = |out: &str| {
        let o = east(tmp.path(), &["eval", "--config", "cfg.json", "--checkpoint", "t/seed-0/model.bin", "--temperature", "0.05", "--out", out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(tmp.path().join(out).join("eval.json")).unwrap()
    };
    let (a, b) = (run("e1"), run("e2"));
    assert_eq!(a, b);
    let r: Value = serde_json::from_slice(&a).unwrap();
    let m = read_json(tmp.path().join("t/seed-0/metrics.json"));
    assert_eq!(r["hard"]["summary"], m["test"]["summary"]);
    let total: f64 = r["hard"]["confusion"].as_array().unwrap().iter().flat_map(|row| row.as_array().unwrap()).map(|v| v.as_f64().unwrap()).sum();
    assert_eq!(total, r["hard"]["n"].as_f64().unwrap());
    assert!(r["soft"]["target"].as_f64().is_some());

    let o = east(tmp.path(), &["data", "gen-synth", "--d", "4", "--n", "200", "--out", "wide"]);
    assert_eq!(code(&o), 0);
    let o = east(tmp.path(), &["eval", "--checkpoint", "t/seed-0/model.bin", "--data", "wide/data.csv", "--out", "e3"]);
    assert_eq!(code(&o), 2);
    let o = east(tmp.path(), &["eval", "--checkpoint", "nope.bin", "--data", "gen/data.csv", "--out", "e4"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn grid_selects_and_ranks() {
    let (tmp, _) = workspace();
    std::fs::write(tmp.path().join("grid.json"), r#"{"batch_size":[64],"learning_rate":[0.01,0.001],"dropout":[0.0],"decay":[0.8]}"#).unwrap();
    let o = east(tmp.path(), &["grid", "--config", "cfg.json", "--grid", "grid.json", "--parallel", "2", "--out", "g"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let g = read_json(tmp.path().join("g/grid.json"));
    let ranked = g["ranked"].as_array().unwrap();
    assert_eq!(ranked.len(), 2);
    assert!(ranked[0]["best_val_loss"].as_f64().unwrap() <= ranked[1]["best_val_loss"].as_f64().unwrap());
    assert_eq!(g["best_index"], ranked[0]["index"]);
    let best = read_json(tmp.path().join("g/best_config.json"));
    assert_eq!(best["version"], "east-config-v1");
    assert_eq!(best["train"]["learning_rate"], ranked[0]["config"]["learning_rate"]);
    assert_eq!(std::fs::read_to_string(tmp.path().join("g/grid.csv")).unwrap().lines().count(), 3);

    std::fs::write(tmp.path().join("empty.json"), r#"{"decay":[]}"#).unwrap();
    let o = east(tmp.path(), &["grid", "--config", "cfg.json", "--grid", "empty.json", "--out", "g2"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn config_errors_exit_2() {
    let (tmp, _) = workspace();
    assert_eq!(code(&east(tmp.path(), &["train", "--config", "missing.json"])), 2);
    assert_eq!(code(&east(tmp.path(), &["train"])), 2);
    let write = |name: &str, body: &str| std::fs::write(tmp.path().join(name), body).unwrap();
    write("v.json", r#"{"version":"east-config-v0","data":{"path":"gen/data.csv"}}"#);
    assert_eq!(code(&east(tmp.path(), &["train", "--config", "v.json"])), 2);
    write("p.json", r#"{"version":"east-config-v1","data":{"path":"nowhere.csv"}}"#);
    assert_eq!(code(&east(tmp.path(), &["train", "--config", "p.json"])), 2);
    write("u.json", r#"{"version":"east-config-v1","data":{"path":"gen/data.csv"},"train":{"epochs":3}}"#);
    assert_eq!(code(&east(tmp.path(), &["train", "--config", "u.json"])), 2);
    write("bad.csv", "a,label\n1.0,0\nx,1\n");
    write("c.json", r#"{"version":"east-config-v1","data":{"path":"bad.csv"}}"#);
    let o = east(tmp.path(), &["train", "--config", "c.json"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("row 3"));
    assert_eq!(code(&east(tmp.path(), &["train", "--config", "cfg.json", "--seeds", "5..2"])), 2);
}

#[test]
fn verify_reports_and_exit_status() {
    let tmp = TempDir::new().unwrap();
    let o = east(tmp.path(), &["verify", "no-such-check"]);
    assert_eq!(code(&o), 2);
    let o = east(tmp.path(), &["verify", "tsoi-compat", "--out", "v"]);
    assert_eq!(code(&o), 0);
    let r = read_json(tmp.path().join("v/tsoi-compat.json"));
    assert_eq!(r["check"], "tsoi-compat");
    assert_eq!(r["passed"], true);
    for key in ["parameters", "statistics", "tolerance"] {
        assert!(r.get(key).is_some());
    }
    assert!(tmp.path().join("v/manifest.json").exists());
    let o = east(tmp.path(), &["verify", "gt-convergence", "--points", "200", "--ladder", "0.2,0.3", "--out", "v2"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn verify_sampling_checks_on_a_checkpoint() {
    let (tmp, _) = workspace();
    assert_eq!(code(&east(tmp.path(), &["train", "--config", "cfg.json", "--loss", "ce", "--out", "t"])), 0);
    let o = east(
        tmp.path(),
        &["verify", "concentration", "--config", "cfg.json", "--checkpoint", "t/seed-0/model.bin", "--n", "100", "--trials", "200", "--out", "v"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let r = read_json(tmp.path().join("v/concentration.json"));
    assert_eq!(r["parameters"]["population"], 450);
    assert_eq!(r["parameters"]["n"], 100);
}
