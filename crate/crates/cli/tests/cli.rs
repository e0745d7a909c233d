use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use softneg_core::TrainConfig;

fn softneg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_softneg"))
        .args(args)
        .env("SOFTNEG_LOG", "error")
        .output()
        .expect("spawn softneg")
}

fn ok(args: &[&str]) -> Output {
    let out = softneg(args);
    assert!(
        out.status.success(),
        "softneg {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn corpus(dir: &Path, n: &str) -> String {
    let out = dir.join("corpus");
    ok(&["gen-corpus", "--n", n, "--seed", "3", "--out-dir", s(&out)]);
    s(&out.join("corpus.jsonl")).to_string()
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        vec!["gen-corpus"],
        vec!["no-such-command"],
        vec!["gen-corpus", "--n", "ten", "--out-dir", s(tmp.path())],
        vec!["gen-corpus", "--threads", "0", "--out-dir", s(tmp.path())],
        vec!["ablate", "--configs", "1", "--out-dir", s(tmp.path())],
    ] {
        assert_eq!(softneg(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn runtime_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.jsonl");
    let out = softneg(&["train", "--corpus", s(&missing), "--out-dir", s(&tmp.path().join("t"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn outputs_are_write_once() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("c");
    ok(&["gen-corpus", "--n", "20", "--out-dir", s(&dir)]);
    let before = fs::read(dir.join("corpus.jsonl")).unwrap();
    let out = softneg(&["gen-corpus", "--n", "30", "--out-dir", s(&dir)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("refusing to overwrite"));
    assert_eq!(fs::read(dir.join("corpus.jsonl")).unwrap(), before);
}

#[test]
fn manifest_records_hashes_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("c");
    ok(&["gen-corpus", "--n", "20", "--seed", "9", "--out-dir", s(&dir)]);
    let m = json(&dir.join("manifest.json"));
    assert_eq!(m["command"], "gen-corpus");
    assert_eq!(m["seed"], 9);
    assert_eq!(m["tool"], "softneg");
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    let outputs = m["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 1);
    assert_eq!(outputs[0]["file"], "corpus.jsonl");
    let lines = fs::read_to_string(dir.join("corpus.jsonl")).unwrap().lines().count();
    assert_eq!(lines, 20);
}

#[test]
fn config_precedence_is_preset_file_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = corpus(tmp.path(), "40");
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"epochs": 2, "lr": 0.005, "hyper": {"tau_t": 0.95}}"#).unwrap();
    let out = tmp.path().join("t");
    ok(&[
        "train", "--corpus", &corpus, "--config", s(&cfg), "--epochs", "3", "--seed", "4",
        "--out-dir", s(&out),
    ]);
    let c: TrainConfig = serde_json::from_value(json(&out.join("config.json"))).unwrap();
    assert_eq!(c.epochs, 3);
    assert_eq!(c.lr, 0.005);
    assert_eq!(c.seed, 4);
    assert_eq!(c.hyper.tau_t, 0.95);
    // Keys the file leaves out keep their preset values.
    assert_eq!(c.hyper.tau_c, TrainConfig::desk().hyper.tau_c);
    assert_eq!(c.batch_size, TrainConfig::desk().batch_size);
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    assert!(metrics.starts_with("epoch,loss,i2t,t2i,h_mean,wall_ms\n"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = corpus(tmp.path(), "20");
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"epoch": 2}"#).unwrap();
    let out = softneg(&["train", "--corpus", &corpus, "--config", s(&cfg), "--out-dir", s(&tmp.path().join("t"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn shipped_configs_match_presets() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for (file, preset) in [("desk.json", TrainConfig::desk()), ("paper.json", TrainConfig::paper())] {
        let c: TrainConfig = serde_json::from_value(json(&root.join(file))).unwrap();
        assert_eq!(
            serde_json::to_value(&c).unwrap(),
            serde_json::to_value(&preset).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn ablate_writes_one_row_per_config() {
    let tmp = tempfile::tempdir().unwrap();
    for k in ["2", "4"] {
        let out = tmp.path().join(k);
        ok(&[
            "ablate", "--configs", k, "--n", "120", "--eval-n", "150", "--epochs", "1",
            "--out-dir", s(&out),
        ]);
        let table = fs::read_to_string(out.join("ablation.csv")).unwrap();
        let rows: Vec<&str> = table.lines().skip(1).collect();
        assert_eq!(rows.len(), k.parse::<usize>().unwrap());
        assert!(rows[0].starts_with("hard-labels,"));
    }
}

#[test]
fn oracle_eval_is_perfect_on_alignment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("e");
    ok(&["eval", "--model", "oracle", "--n", "300", "--out-dir", s(&out)]);
    let align = fs::read_to_string(out.join("align.csv")).unwrap();
    let all = align.lines().find(|l| l.starts_with("all,all,")).unwrap();
    assert!(all.ends_with(",1") || all.ends_with(",1.0"), "{all}");
    for f in ["zeroshot.csv", "retrieval.csv", "normal.csv", "adversarial.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn grad_check_runs_without_out_dir() {
    let out = ok(&["grad-check", "--seed", "5"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("(pass)"), "{text}");
}

#[test]
fn eval_of_trained_checkpoint_uses_given_align_file() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = corpus(tmp.path(), "60");
    let t = tmp.path().join("t");
    ok(&["train", "--corpus", &corpus, "--epochs", "1", "--out-dir", s(&t)]);
    let a = tmp.path().join("a");
    ok(&["gen-align", "--corpus", &corpus, "--out-dir", s(&a)]);
    let e = tmp.path().join("e");
    ok(&[
        "eval", "--model", s(&t.join("checkpoint.json")), "--corpus", &corpus, "--align",
        s(&a.join("align.jsonl")), "--out-dir", s(&e),
    ]);
    let n_triplets = fs::read_to_string(a.join("align.jsonl")).unwrap().lines().count();
    let align = fs::read_to_string(e.join("align.csv")).unwrap();
    let all: Vec<&str> = align.lines().find(|l| l.starts_with("all,all,")).unwrap().split(',').collect();
    assert_eq!(all[2].parse::<usize>().unwrap(), n_triplets);
    let m = json(&e.join("manifest.json"));
    assert_eq!(m["inputs"].as_array().unwrap().len(), 3);
}
