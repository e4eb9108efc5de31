use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bit_core::config::RunConfig;
use serde_json::Value;

const SMALL: &str = r#"
seed = 3
[model]
preset = "tiny"
[synth]
molecules = 12
pockets = 12
complexes = 12
[pretrain]
steps = 20
warmup = 2
molecules_per_batch = 2
pockets_per_batch = 2
complexes_per_batch = 2
[affinity]
synth_complexes = 40
[affinity.schedule]
epochs = 2
[retrieval.data]
train_pockets_per_family = 2
train_ligands_per_family = 4
test_pockets_per_family = 1
pool_actives = 4
pool_size = 34
[retrieval.schedule]
epochs = 1
[classify.data]
molecules = 40
[classify.schedule]
epochs = 1
[screen]
k1 = 10
m = 3
"#;

fn bit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bit")).current_dir(dir).args(args).output().unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), SMALL).unwrap();
    dir
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gen_data_then_stats() {
    let dir = setup();
    ok(&bit(dir.path(), &["--config", "c.toml", "--out", "o", "gen-data"]));
    let o = bit(dir.path(), &["--config", "c.toml", "--out", "o", "--data", "o/data.jsonl", "stats"]);
    ok(&o);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    for d in ["molecule", "pocket"] {
        assert!(v[d]["graphs"].as_u64().unwrap() > 0);
        assert!(v[d]["spd"].as_object().unwrap().contains_key("1"));
        assert!(!v[d]["degree"].as_object().unwrap().is_empty());
    }
    let o = bit(dir.path(), &["--config", "c.toml", "--out", "o", "--data", "o/data.jsonl", "encode", "--dump"]);
    ok(&o);
    let lines: Vec<Value> =
        String::from_utf8(o.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 36);
    assert!(lines[0]["encoding"]["spd"].is_array());
}

#[test]
fn usage_errors_exit_2() {
    let dir = setup();
    fs::write(dir.path().join("bad.toml"), "hiddden_size = 64\n").unwrap();
    let o = bit(dir.path(), &["--config", "bad.toml", "stats"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("hiddden_size"));
    fs::write(dir.path().join("bad2.toml"), "[model]\nhiddden_size = 64\n").unwrap();
    let o = bit(dir.path(), &["--config", "bad2.toml", "stats"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("hiddden_size"));
    assert_eq!(bit(dir.path(), &["frobnicate"]).status.code(), Some(2));
    let o = bit(dir.path(), &["--config", "c.toml", "--out", "o", "eval"]);
    assert_eq!(o.status.code(), Some(1), "missing checkpoint is a runtime failure");
}

#[test]
fn pretrain_log_counts_and_resume() {
    let dir = setup();
    let p = dir.path();
    ok(&bit(p, &["--config", "c.toml", "--out", "a", "pretrain", "--steps", "10"]));
    let log = fs::read_to_string(p.join("a/pretrain_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 10);
    ok(&bit(p, &["--config", "c.toml", "--out", "b", "pretrain", "--steps", "10"]));
    assert_eq!(fs::read(p.join("a/pretrain_log.jsonl")).unwrap(), fs::read(p.join("b/pretrain_log.jsonl")).unwrap());
    assert_eq!(fs::read(p.join("a/pretrain.ckpt")).unwrap(), fs::read(p.join("b/pretrain.ckpt")).unwrap());

    ok(&bit(p, &["--config", "c.toml", "--out", "c", "pretrain", "--steps", "4"]));
    ok(&bit(p, &["--config", "c.toml", "--out", "c", "pretrain", "--steps", "6", "--checkpoint", "c/pretrain.ckpt"]));
    assert_eq!(fs::read(p.join("a/pretrain_log.jsonl")).unwrap(), fs::read(p.join("c/pretrain_log.jsonl")).unwrap());
    assert_eq!(fs::read(p.join("a/pretrain.ckpt")).unwrap(), fs::read(p.join("c/pretrain.ckpt")).unwrap());

    let o = bit(
        p,
        &[
            "--config",
            "c.toml",
            "--out",
            "c",
            "--seed",
            "9",
            "pretrain",
            "--steps",
            "1",
            "--checkpoint",
            "c/pretrain.ckpt",
        ],
    );
    assert_eq!(o.status.code(), Some(1), "resuming under another config is refused");
}

#[test]
fn task_commands_emit_reports() {
    let dir = setup();
    let p = dir.path();
    let run = |args: &[&str]| {
        let mut all = vec!["--config", "c.toml", "--out", "o"];
        all.extend_from_slice(args);
        let o = bit(p, &all);
        ok(&o);
        o
    };
    run(&["pretrain", "--steps", "3"]);
    let digest = RunConfig::from_toml_str(SMALL).unwrap().digest();
    for (cmd, task) in
        [("finetune-affinity", "affinity"), ("finetune-retrieval", "retrieval"), ("finetune-classify", "classify")]
    {
        let o = run(&[cmd]);
        let v: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(v["task"], task);
        assert_eq!(v["split"], "test");
        assert_eq!(v["config_digest"], digest.as_str());
        assert!(v["metrics"].is_object());
        assert_eq!(fs::read(p.join(format!("o/{task}.report.json"))).unwrap(), o.stdout);
    }
    let v: Value = serde_json::from_slice(&run(&["eval"]).stdout).unwrap();
    assert!(v["metrics"]["r"].is_f64());
    run(&["screen"]);
    let lines: Vec<Value> = fs::read_to_string(p.join("o/screen.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["rank"].as_u64().unwrap(), i as u64 + 1);
        assert!(l["id"].is_string() && l["stage1_score"].is_f64() && l["stage2_prob"].is_f64());
    }
    let v: Value = serde_json::from_slice(&run(&["grad-check"]).stdout).unwrap();
    assert_eq!(v["metrics"]["passed"], true);
}

#[test]
fn digest_ignores_key_order() {
    let a = RunConfig::from_toml_str("seed = 1\n[model]\npreset = \"tiny\"\nlayers = 3\n").unwrap();
    let b = RunConfig::from_toml_str("[model]\nlayers = 3\npreset = \"tiny\"\n\n").unwrap();
    let b = RunConfig { seed: 1, ..b };
    assert_eq!(a.digest(), b.digest());
    assert_eq!(a.digest(), RunConfig { out_dir: "elsewhere".into(), ..a.clone() }.digest());
    assert_ne!(a.digest(), RunConfig::default().digest());
    assert_eq!(a.bit_config().layers, 3);
}
