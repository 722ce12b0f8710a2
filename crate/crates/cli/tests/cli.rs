use std::fs;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;
use tempfile::TempDir;

fn airwrite(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_airwrite"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY_MODEL: [&str; 10] = [
    "--set",
    "model.channels=8",
    "--set",
    "model.heads=2",
    "--set",
    "model.head_hidden=8",
    "--set",
    "train.epochs=1",
    "--set",
    "train.batch_size=4",
];

/// A synthetic corpus and a checkpoint trained on it for one epoch.
struct Fixture {
    dir: TempDir,
    corpus: PathBuf,
    ckpt: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let ckpt = dir.path().join("m.awck");
    let out = airwrite(&[
        "synth",
        "--per-class",
        "2",
        "--seed",
        "3",
        "--out",
        path_str(&corpus),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let mut args = vec![
        "train",
        "--corpus",
        path_str(&corpus),
        "--out",
        path_str(&ckpt),
        "--seed",
        "5",
    ];
    args.extend(TINY_MODEL);
    let out = airwrite(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    Fixture { dir, corpus, ckpt }
}

#[test]
fn synth_is_deterministic_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for p in [&a, &b] {
        let out = airwrite(&[
            "synth",
            "--per-class",
            "3",
            "--seed",
            "7",
            "--out",
            path_str(p),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert_eq!(text.lines().count(), 3 * 20);

    let other = airwrite(&["synth", "--per-class", "3", "--seed", "8"]);
    assert!(other.status.success());
    assert_ne!(String::from_utf8(other.stdout).unwrap(), text);
}

#[test]
fn synth_reads_template_file() {
    let dir = tempfile::tempdir().unwrap();
    let templates = dir.path().join("t.json");
    fs::write(
        &templates,
        r#"[{"class": "L", "strokes": [[[0, 0], [0, 1], [0.6, 1]]]},
            {"class": "T", "strokes": [[[0, 0], [1, 0]], [[0.5, 0], [0.5, 1]]]}]"#,
    )
    .unwrap();
    let out = airwrite(&[
        "synth",
        "--templates",
        path_str(&templates),
        "--per-class",
        "4",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let lines: Vec<Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 8);
    assert_eq!(lines.iter().filter(|l| l["label"] == "T").count(), 4);
}

#[test]
fn train_eval_recognize_round_trip() {
    let f = fixture();

    let out = airwrite(&[
        "eval",
        "--ckpt",
        path_str(&f.ckpt),
        "--corpus",
        path_str(&f.corpus),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report = stdout_json(&out);
    let (cr, ar) = (
        report["cr"].as_f64().unwrap(),
        report["ar"].as_f64().unwrap(),
    );
    assert!(ar <= cr);
    assert_eq!(report["num_samples"], 40);

    // first corpus line, label and all
    let sample = f.dir.path().join("line.json");
    let first = fs::read_to_string(&f.corpus)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    fs::write(&sample, &first).unwrap();
    let out = airwrite(&[
        "recognize",
        "--ckpt",
        path_str(&f.ckpt),
        "--traj",
        path_str(&sample),
        "--topk",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let with_label = stdout_json(&out);
    let candidates = with_label["candidates"].as_array().unwrap();
    assert_eq!(candidates.len(), 5);
    let probs: Vec<f64> = candidates
        .iter()
        .map(|c| c["prob"].as_f64().unwrap())
        .collect();
    assert!(probs.windows(2).all(|w| w[0] >= w[1]));

    // the same points as a bare object
    let mut bare: Value = serde_json::from_str(&first).unwrap();
    bare.as_object_mut().unwrap().remove("label");
    let bare_path = f.dir.path().join("bare.json");
    fs::write(&bare_path, serde_json::to_string_pretty(&bare).unwrap()).unwrap();
    let out = airwrite(&[
        "recognize",
        "--ckpt",
        path_str(&f.ckpt),
        "--traj",
        path_str(&bare_path),
        "--topk",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(stdout_json(&out), with_label);
}

#[test]
fn seeded_training_is_bit_reproducible() {
    let f = fixture();
    let again = f.dir.path().join("again.awck");
    let mut args = vec![
        "train",
        "--corpus",
        path_str(&f.corpus),
        "--out",
        path_str(&again),
        "--seed",
        "5",
    ];
    args.extend(TINY_MODEL);
    let out = airwrite(&args);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read(&f.ckpt).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    assert!(
        airwrite(&["synth", "--per-class", "1", "--out", path_str(&corpus)])
            .status
            .success()
    );
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"model": {"channels": 8, "heads": 2, "head_hidden": 8}, "train": {"epochs": 7}}"#,
    )
    .unwrap();
    let ckpt = dir.path().join("m.awck");
    let out = airwrite(&[
        "train",
        "--corpus",
        path_str(&corpus),
        "--out",
        path_str(&ckpt),
        "--config",
        path_str(&cfg),
        "--set",
        "train.epochs=1",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let history = stdout_json(&out);
    assert_eq!(history["epochs"].as_array().unwrap().len(), 1);

    let out = airwrite(&[
        "train",
        "--corpus",
        path_str(&corpus),
        "--out",
        path_str(&ckpt),
        "--set",
        "train.epoch=1",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr(&out).contains("unknown config key"),
        "{}",
        stderr(&out)
    );

    fs::write(&cfg, r#"{"model": {"chanels": 8}}"#).unwrap();
    let out = airwrite(&[
        "train",
        "--corpus",
        path_str(&corpus),
        "--out",
        path_str(&ckpt),
        "--config",
        path_str(&cfg),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(airwrite(&[]).status.code(), Some(1));
    assert_eq!(airwrite(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        airwrite(&["eval", "--ckpt", "x.awck"]).status.code(),
        Some(1)
    );
    assert_eq!(
        airwrite(&["synth", "--per-class", "many"]).status.code(),
        Some(1)
    );
    assert_eq!(airwrite(&["--help"]).status.code(), Some(0));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.awck");
    let corpus = dir.path().join("bad.jsonl");
    fs::write(
        &corpus,
        "{\"label\":\"a\",\"points\":[[0,0,1],[1,1,1],[2,0,1]]}\n{\"label\":\"b\",\"points\":[[0,0]]}\n",
    )
    .unwrap();
    let out = airwrite(&[
        "eval",
        "--ckpt",
        path_str(&missing),
        "--corpus",
        path_str(&corpus),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let ckpt = dir.path().join("m.awck");
    let out = airwrite(&[
        "train",
        "--corpus",
        path_str(&corpus),
        "--out",
        path_str(&ckpt),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
    assert!(!ckpt.exists());

    fs::write(&missing, b"not a checkpoint").unwrap();
    let traj = dir.path().join("t.json");
    fs::write(&traj, r#"{"points": [[0, 0, 1], [1, 1, 1], [2, 0, 1]]}"#).unwrap();
    let out = airwrite(&[
        "recognize",
        "--ckpt",
        path_str(&missing),
        "--traj",
        path_str(&traj),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    assert!(
        airwrite(&["synth", "--per-class", "1", "--out", path_str(&corpus)])
            .status
            .success()
    );
    let ckpt = dir.path().join("m.awck");
    let mut args = vec![
        "train",
        "--corpus",
        path_str(&corpus),
        "--out",
        path_str(&ckpt),
        "--set",
        "train.lr=1e300",
    ];
    args.extend(TINY_MODEL);
    let out = airwrite(&args);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(!ckpt.exists());
}

fn http_get(port: u16, path: &str) -> Option<(u16, String)> {
    let mut stream = TcpStream::connect(("127.0.0.1", port)).ok()?;
    stream.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    write!(
        stream,
        "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n"
    )
    .ok()?;
    let mut raw = String::new();
    stream.read_to_string(&mut raw).ok()?;
    let status = raw.split_whitespace().nth(1)?.parse().ok()?;
    let body = raw.split_once("\r\n\r\n")?.1.to_string();
    Some((status, body))
}

#[test]
fn serve_answers_health() {
    let f = fixture();
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_airwrite"))
        .args([
            "serve",
            "--ckpt",
            path_str(&f.ckpt),
            "--port",
            &port.to_string(),
        ])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(30);
    let mut reply = None;
    while Instant::now() < deadline {
        reply = http_get(port, "/api/health");
        if reply.is_some() {
            break;
        }
        std::thread::sleep(Duration::from_millis(100));
    }
    let labels = http_get(port, "/api/labels");
    child.kill().unwrap();
    child.wait().unwrap();

    let (status, body) = reply.expect("server came up");
    assert_eq!(status, 200);
    let health: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(health["status"], "ok");
    assert_eq!(health["model_version"], "D-c8-seed5-ep1");
    let (_, body) = labels.unwrap();
    let labels: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(labels["labels"].as_array().unwrap().len(), 20);
}
