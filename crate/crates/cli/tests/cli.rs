use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bta_core::io::{load_manifest, read_tensor_file, write_tensor_file};
use serde_json::json;
use tempfile::TempDir;

fn bta(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bta"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> String {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(&o));
    stdout(&o)
}

/// A workspace with a small config and a generated dataset for `task`.
struct Workspace {
    dir: TempDir,
    manifest: PathBuf,
}

impl Workspace {
    fn new(task: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = json!({
            "model": { "d_model": 16 },
            "train": { "epochs": 2, "batch_size": 2 },
            "synth": {
                "samples": 4, "clips": 3, "frames_per_clip": 2, "tokens": 4,
                "feature_dim": 8, "word_dim": 8, "candidates": 3, "count_max": 3
            }
        });
        std::fs::write(dir.path().join("run.json"), config.to_string()).unwrap();
        let out = ok(bta(dir.path(), &["gen-synth", "--config", "run.json", "--task", task, "--out", "data"]));
        let manifest = PathBuf::from(out.trim());
        assert!(dir.path().join(&manifest).is_file());
        Self { dir, manifest }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn run(&self, args: &[&str]) -> Output {
        let manifest = self.manifest.to_str().unwrap();
        let mut all = vec!["--config", "run.json", "--manifest", manifest];
        all.extend_from_slice(args);
        bta(self.path(), &all)
    }

    fn train(&self, out: &str, extra: &[&str]) -> PathBuf {
        let mut args = vec!["train", "--out", out];
        args.extend_from_slice(extra);
        ok(self.run(&args));
        self.path().join(out).join("checkpoint.btac")
    }
}

#[test]
fn train_then_evaluate_each_task() {
    for (task, metric) in [("open-ended", "accuracy "), ("count", "mse "), ("multi-choice", "accuracy ")] {
        let ws = Workspace::new(task);
        let ckpt = ws.train("run", &[]);
        assert!(ckpt.is_file());
        let report: serde_json::Value =
            serde_json::from_slice(&std::fs::read(ws.path().join("run/report.json")).unwrap()).unwrap();
        assert_eq!(report["epochs"].as_array().unwrap().len(), 2);
        let out = ok(ws.run(&["eval", "--checkpoint", ckpt.to_str().unwrap()]));
        assert!(out.starts_with(metric), "{task}: {out}");
    }
}

#[test]
fn multi_choice_inference_picks_the_highest_score() {
    let ws = Workspace::new("multi-choice");
    let ckpt = ws.train("run", &[]);
    let out = ok(ws.run(&["infer", "--checkpoint", ckpt.to_str().unwrap()]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 4);
    for line in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(fields[1], "answer");
        assert_eq!(fields[3], "scores");
        let index: usize = fields[2].parse().unwrap();
        let scores: Vec<f64> = fields[4..].iter().map(|s| s.parse().unwrap()).collect();
        assert_eq!(scores.len(), 3);
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(scores.iter().position(|&s| s == best).unwrap(), index, "{line}");
    }
    let one = ok(ws.run(&["infer", "--checkpoint", ckpt.to_str().unwrap(), "--sample-id", "s0002"]));
    assert!(one.starts_with("s0002 answer "));
}

#[test]
fn interaction_dump_names_every_matrix() {
    let ws = Workspace::new("open-ended");
    let ckpt = ws.train("run", &[]);
    ok(ws.run(&["dump-interactions", "--checkpoint", ckpt.to_str().unwrap(), "--sample-id", "s0001", "--out", "trace.json"]));
    let dump: serde_json::Value = serde_json::from_slice(&std::fs::read(ws.path().join("trace.json")).unwrap()).unwrap();
    let text = dump.to_string();
    for name in ["S_v", "S_m", "S_b_v", "S_b_m"] {
        assert!(text.contains(&format!("\"{name}\"")), "{name} missing");
    }
}

#[test]
fn identical_runs_write_identical_checkpoints() {
    let ws = Workspace::new("count");
    let a = ws.train("a", &["--seed", "7"]);
    let b = ws.train("b", &["--seed", "7"]);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    let c = ws.train("c", &["--seed", "8"]);
    assert_ne!(std::fs::read(ws.path().join("a/checkpoint.btac")).unwrap(), std::fs::read(c).unwrap());
}

#[test]
fn flags_override_the_architecture() {
    let ws = Workspace::new("open-ended");
    let base = ws.train("base", &[]);
    let scaled = ws.train("scaled", &["--lambda", "20"]);
    assert_ne!(std::fs::read(&base).unwrap(), std::fs::read(&scaled).unwrap());
    let ckpt = |p: &Path| String::from_utf8_lossy(&std::fs::read(p).unwrap()).into_owned();
    assert!(ckpt(&scaled).contains("\"lambda\":20.0"));
    let bridgeless = ws.train("nb", &["--ablate", "no-bridge"]);
    assert!(ckpt(&bridgeless).contains("wob^v"));
    assert!(!ckpt(&base).contains("wob^v"));
}

#[test]
fn help_and_version_succeed() {
    let dir = tempfile::tempdir().unwrap();
    for flag in ["--help", "--version"] {
        let o = bta(dir.path(), &[flag]);
        assert_eq!(o.status.code(), Some(0), "{flag}");
        assert!(!stdout(&o).is_empty());
    }
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["--bogus"],
        vec!["train", "--ablate", "no-such-thing"],
        vec!["gen-synth"],
        vec!["eval", "--manifest", "m.json"],
    ] {
        let o = bta(dir.path(), &args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn invalid_inputs_exit_with_two() {
    let ws = Workspace::new("open-ended");
    let ckpt = ws.train("run", &[]);
    let ckpt = ckpt.to_str().unwrap();
    let unknown = ws.run(&["infer", "--checkpoint", ckpt, "--sample-id", "nope"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(stderr(&unknown).contains("nope"));
    let both = ws.run(&["train", "--out", "x", "--ablate", "no-appearance", "--ablate", "no-motion"]);
    assert_eq!(both.status.code(), Some(2));
    std::fs::write(ws.path().join("broken.btac"), b"BTAC garbage").unwrap();
    let broken = ws.run(&["eval", "--checkpoint", "broken.btac"]);
    assert_eq!(broken.status.code(), Some(2), "{}", stderr(&broken));
    let missing = bta(ws.path(), &["eval", "--checkpoint", ckpt, "--manifest", "absent.json"]);
    assert_eq!(missing.status.code(), Some(2));
    std::fs::write(ws.path().join("bad.json"), r#"{"model": {"depth": 3}}"#).unwrap();
    let bad = bta(ws.path(), &["train", "--config", "bad.json", "--out", "x"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn non_finite_features_exit_with_three() {
    let ws = Workspace::new("count");
    let manifest = ws.path().join(&ws.manifest);
    let data = load_manifest::<f32>(&manifest).unwrap();
    assert!(!data.samples.is_empty());
    let motion = manifest.parent().unwrap().join("features/s0000.motion.btat");
    let mut t = read_tensor_file(&motion).unwrap().exact::<f32>().unwrap();
    t.data_mut().fill(f32::NAN);
    write_tensor_file(&t, &motion).unwrap();
    let o = ws.run(&["train", "--out", "nan"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn gradient_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(bta(dir.path(), &["grad-check", "--task", "count"]));
    assert_eq!(out.lines().last(), Some("ok"));
}
