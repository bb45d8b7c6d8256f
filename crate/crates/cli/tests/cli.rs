//! End-to-end runs of the `featx` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("featx-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn featx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_featx")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = featx(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Six three-valued columns; the label follows the first two.
fn toy_dataset(dir: &Path, rows: usize, salt: usize) -> (PathBuf, PathBuf) {
    let mut csv = String::from("c0,c1,c2,c3,c4,c5,y\n");
    for i in 0..rows {
        let vals: Vec<usize> = (0..6).map(|c| (i * (c + 2) + c * 5 + i / 7 + salt) % 3).collect();
        let label = if vals[0] == 0 || vals[1] == 2 { "yes" } else { "no" };
        let cells: Vec<String> = vals.iter().map(|v| ["a", "b", "c"][*v].to_string()).collect();
        csv.push_str(&format!("{},{label}\n", cells.join(",")));
    }
    let schema: String = (0..6).map(|c| format!("c{c} = categorical\n")).collect::<String>() + "y = label\n";
    let (csv_path, schema_path) = (dir.join("toy.csv"), dir.join("schema.txt"));
    fs::write(&csv_path, csv).unwrap();
    fs::write(&schema_path, schema).unwrap();
    (csv_path, schema_path)
}

fn toy_config(dir: &Path, salt: usize) -> PathBuf {
    toy_dataset(dir, 240, salt);
    let path = dir.join("toy.toml");
    fs::write(
        &path,
        "dataset = \"toy\"\noutput = \"out\"\nratios = [0.5]\nseeds = [0]\n\
         [data]\ncsv = \"toy.csv\"\nschema = \"schema.txt\"\n\
         [settings]\nepochs = 3\nbatch_size = 64\n",
    )
    .unwrap();
    path
}

fn gene_config() -> String {
    concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/gene.toml").to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn encode_is_deterministic() {
    let dir = workdir("encode");
    let (csv, schema) = toy_dataset(&dir, 50, 0);
    let (a, b) = (dir.join("a"), dir.join("b"));
    ok(&["encode", "--input", s(&csv), "--schema", s(&schema), "--output", s(&a)]);
    ok(&["encode", "--input", s(&csv), "--schema", s(&schema), "--output", s(&b)]);
    for suffix in [".vocab.txt", ".encoded.txt"] {
        let x = fs::read(dir.join(format!("a{suffix}"))).unwrap();
        assert_eq!(x, fs::read(dir.join(format!("b{suffix}"))).unwrap(), "{suffix}");
    }
    let encoded = fs::read_to_string(dir.join("a.encoded.txt")).unwrap();
    assert!(encoded.lines().count() >= 50);
}

#[test]
fn one_epoch_writes_one_checkpoint() {
    let dir = workdir("train");
    let config = toy_config(&dir, 0);
    ok(&["train", "--config", s(&config), "--method", "fate", "--epochs", "1"]);
    let ckpts: Vec<_> = fs::read_dir(dir.join("out/checkpoints"))
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    assert_eq!(ckpts.len(), 1);
    let log = fs::read_to_string(dir.join("out/checkpoints/fate-r0.50-s0.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
}

#[test]
fn sweep_summarizes_then_resumes() {
    let dir = workdir("sweep");
    let config = toy_config(&dir, 0);
    let args = ["sweep", "--config", s(&config), "--methods", "base", "--seeds", "0,1,2,3,4"];
    let first = ok(&args);
    assert!(first.contains("ran 5 cells"), "{first}");
    let records = fs::read_to_string(dir.join("out/results.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 5);
    let summary = fs::read_to_string(dir.join("out/summary.tsv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    assert!(summary.lines().nth(1).unwrap().starts_with("base\tr=0.50\troc_auc\t5\t0\t"), "{summary}");

    let second = ok(&args);
    assert!(second.contains("ran 0 cells, skipped 5"), "{second}");
    assert_eq!(fs::read_to_string(dir.join("out/results.jsonl")).unwrap(), records);
}

#[test]
fn foreign_checkpoint_is_refused() {
    let (a, b) = (workdir("hash-a"), workdir("hash-b"));
    let trained = toy_config(&a, 0);
    let other = toy_config(&b, 1);
    ok(&["train", "--config", s(&trained), "--method", "base", "--epochs", "1"]);
    let ckpt = a.join("out/checkpoints/base-r0.50-s0.ckpt");
    let own = featx(&["evaluate", "--config", s(&trained), "--method", "base", "--checkpoint", s(&ckpt)]);
    assert!(own.status.success());
    let out = featx(&["evaluate", "--config", s(&other), "--method", "base", "--checkpoint", s(&ckpt)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!b.join("out/results.jsonl").exists());
}

#[test]
fn exit_codes_follow_error_class() {
    assert_eq!(featx(&["bogus"]).status.code(), Some(1));
    assert_eq!(featx(&["--help"]).status.code(), Some(0));
    assert_eq!(featx(&["train", "--config", "/nonexistent.toml"]).status.code(), Some(2));
    let dir = workdir("codes");
    let bad = dir.join("bad.toml");
    fs::write(&bad, "dataset = \"x\"\nunknown = 1\n").unwrap();
    assert_eq!(featx(&["train", "--config", s(&bad)]).status.code(), Some(1));
}

#[test]
fn stability_with_every_raw_feature() {
    let out = ok(&["stability", "--d", "4", "--k", "4", "--seeds", "1", "--steps", "5", "--train-rows", "16", "--batch", "8"]);
    assert!(out.contains("median_gap"), "{out}");
}

#[test]
fn reruns_are_bit_identical() {
    let dir = workdir("rerun");
    let config = toy_config(&dir, 0);
    let strip = |text: String| -> Vec<serde_json::Value> {
        text.lines()
            .map(|l| {
                let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
                v.as_object_mut().unwrap().remove("wall_time_s");
                v
            })
            .collect()
    };
    let mut ckpts = Vec::new();
    let mut records = Vec::new();
    for run in ["one", "two"] {
        let out = dir.join(run);
        ok(&["train", "--config", s(&config), "--output", s(&out)]);
        let ckpt = out.join("checkpoints/fate-r0.50-s0.ckpt");
        ok(&["evaluate", "--config", s(&config), "--output", s(&out), "--checkpoint", s(&ckpt)]);
        ckpts.push(fs::read(&ckpt).unwrap());
        records.push(strip(fs::read_to_string(out.join("results.jsonl")).unwrap()));
    }
    assert_eq!(ckpts[0], ckpts[1]);
    assert_eq!(records[0], records[1]);
}

#[test]
fn gene_smoke_run_improves_validation_loss() {
    let dir = workdir("gene");
    let config = gene_config();
    ok(&["train", "--config", &config, "--output", s(&dir), "--ratio", "0.5", "--seed", "0", "--epochs", "10"]);
    let log = fs::read_to_string(dir.join("checkpoints/fate-r0.50-s0.log.jsonl")).unwrap();
    let losses: Vec<f64> = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["val_logloss"].as_f64().unwrap())
        .collect();
    assert_eq!(losses.len(), 10);
    let best = losses.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(best < losses[0], "{losses:?}");
}
