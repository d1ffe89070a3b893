use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = "\
num_clusters = 2
overcluster_factor = 2
d_z = 8
d_c = 4
d_h = 32
image_size = 16
base_channels = 32
batch_size = 4
checkpoint_interval = 5
";

fn c3gan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_c3gan")).args(args).env("C3_LOG_LEVEL", "error").output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("tiny.conf"), TINY).unwrap();
        let data = dir.path().join("data");
        ok(&c3gan(&["synth-data", "--out", s(&data), "--classes", "2", "--per-class", "8", "--eval-per-class", "4", "--size", "32"]));
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let (conf, data, out) = (self.path("tiny.conf"), self.path("data"), self.path(out));
        let mut args = vec!["train", "--config", s(&conf), "--data", s(&data), "--out", s(&out)];
        args.extend_from_slice(extra);
        c3gan(&args)
    }
}

#[test]
fn missing_data_directory_exits_2() {
    let f = Fixture::new();
    let out = c3gan(&["train", "--config", s(&f.path("tiny.conf")), "--data", s(&f.path("absent")), "--out", s(&f.path("run"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dataset not found"));
}

#[test]
fn smoke_run_writes_checkpoint_log_and_config_snapshot() {
    let f = Fixture::new();
    ok(&f.train("run", &["--steps", "10", "--set", "temperature=0.2"]));
    let run = f.path("run");
    let ckpts: Vec<_> = fs::read_dir(run.join("checkpoints")).unwrap().collect();
    assert!(!ckpts.is_empty());
    let log = fs::read_to_string(run.join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 10);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["d_loss"]["total"].is_number() && v["grad_norm"]["generator"].is_number());
    }
    let snapshot = fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(snapshot.lines().any(|l| l == "temperature = 0.2"), "{snapshot}");
    assert!(run.join("samples/step_00000010.png").exists());
}

#[test]
fn unknown_override_exits_2() {
    let f = Fixture::new();
    let out = f.train("run", &["--set", "no_such_key=1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let f = Fixture::new();
    ok(&f.train("full", &["--steps", "10"]));
    ok(&f.train("part", &["--steps", "5"]));
    let ckpt = f.path("part/checkpoints/latest.ckpt");
    let (data, part) = (f.path("data"), f.path("part"));
    ok(&c3gan(&["train", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&part), "--steps", "10"]));
    let a = fs::read(f.path("full/checkpoints/step_00000010.ckpt")).unwrap();
    let b = fs::read(f.path("part/checkpoints/step_00000010.ckpt")).unwrap();
    assert!(a == b, "resumed checkpoint differs");
    let steps = |p: &str| -> Vec<u64> {
        fs::read_to_string(f.path(p))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["step"].as_u64().unwrap())
            .collect()
    };
    assert_eq!(steps("part/log.jsonl"), (0..10).collect::<Vec<_>>());
}

#[test]
fn retraining_into_same_directory_is_idempotent() {
    let f = Fixture::new();
    ok(&f.train("run", &["--steps", "5"]));
    let first = fs::read(f.path("run/checkpoints/latest.ckpt")).unwrap();
    let grid = fs::read(f.path("run/samples/step_00000005.png")).unwrap();
    ok(&f.train("run", &["--steps", "5"]));
    assert!(first == fs::read(f.path("run/checkpoints/latest.ckpt")).unwrap());
    assert!(grid == fs::read(f.path("run/samples/step_00000005.png")).unwrap());
    assert_eq!(fs::read_to_string(f.path("run/log.jsonl")).unwrap().lines().count(), 5);
}

#[test]
fn generate_grids_have_expected_layout_and_are_deterministic() {
    let f = Fixture::new();
    ok(&f.train("run", &["--steps", "2"]));
    let ckpt = f.path("run/checkpoints/latest.ckpt");
    let gen = |out: &str, mode: &str, seed: &str| {
        ok(&c3gan(&["generate", "--checkpoint", s(&ckpt), "--mode", mode, "--out", s(&f.path(out)), "--seed", seed]));
    };
    // 16-px tiles with 2-px separators.
    let side = |n: u32| n * 16 + (n + 1) * 2;
    gen("a", "fixed_c_vary_z", "1");
    let img = image::open(f.path("a/fixed_c_vary_z.png")).unwrap();
    assert_eq!((img.width(), img.height()), (side(4), side(4)));
    assert_eq!(fs::read_dir(f.path("a")).unwrap().count(), 1);

    gen("a", "decomposed", "1");
    let img = image::open(f.path("a/decomposed.png")).unwrap();
    assert_eq!((img.width(), img.height()), (side(4), side(4)));

    gen("b", "fixed_c_vary_z", "1");
    gen("c", "fixed_c_vary_z", "2");
    let bytes = |p: &str| fs::read(f.path(p)).unwrap();
    assert!(bytes("a/fixed_c_vary_z.png") == bytes("b/fixed_c_vary_z.png"));
    assert!(bytes("a/fixed_c_vary_z.png") != bytes("c/fixed_c_vary_z.png"));
}

#[test]
fn vary_c_grid_respects_rows_and_cols() {
    let f = Fixture::new();
    ok(&f.train("run", &["--steps", "2"]));
    let ckpt = f.path("run/checkpoints/latest.ckpt");
    ok(&c3gan(&["generate", "--checkpoint", s(&ckpt), "--mode", "vary_c_fixed_z", "--out", s(&f.path("g")), "--rows", "3", "--cols", "2"]));
    let img = image::open(f.path("g/vary_c_fixed_z.png")).unwrap().to_rgb8();
    assert_eq!((img.width(), img.height()), (2 * 16 + 3 * 2, 3 * 16 + 4 * 2));
}

#[test]
fn corrupt_checkpoint_exits_3() {
    let f = Fixture::new();
    ok(&f.train("run", &["--steps", "1"]));
    let ckpt = f.path("run/checkpoints/latest.ckpt");
    let mut bytes = fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    fs::write(&ckpt, bytes).unwrap();
    let out = c3gan(&["generate", "--checkpoint", s(&ckpt), "--mode", "decomposed", "--out", s(&f.path("g"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn eval_prints_all_five_fields_and_assign_writes_every_image() {
    let f = Fixture::new();
    ok(&f.train("run", &["--steps", "2"]));
    let (ckpt, data) = (f.path("run/checkpoints/latest.ckpt"), f.path("data"));
    let out = c3gan(&["eval", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&f.path("ev"))]);
    ok(&out);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["acc", "nmi", "Y_eff", "Y_true", "n"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["n"], 8);
    assert_eq!(v["Y_eff"], 4);
    assert!(f.path("ev/scores.json").exists());

    ok(&c3gan(&["assign", "--checkpoint", s(&ckpt), "--data", s(&data), "--split", "train", "--out", s(&f.path("as"))]));
    let lines = fs::read_to_string(f.path("as/assignments.tsv")).unwrap();
    assert_eq!(lines.lines().count(), 16);
    for line in lines.lines() {
        let parts: Vec<&str> = line.split('\t').collect();
        assert_eq!(parts.len(), 3);
        assert!(parts[1].parse::<usize>().unwrap() < 4);
        let conf: f64 = parts[2].parse().unwrap();
        assert!((0.25..=1.0).contains(&conf));
    }
}

#[test]
fn eval_without_labels_exits_4() {
    let f = Fixture::new();
    ok(&f.train("run", &["--steps", "1"]));
    let manifest = f.path("data/eval/manifest.tsv");
    let unlabeled: String =
        fs::read_to_string(&manifest).unwrap().lines().map(|l| format!("{}\t-1\n", l.split('\t').next().unwrap())).collect();
    fs::write(&manifest, unlabeled).unwrap();
    let out = c3gan(&["eval", "--checkpoint", s(&f.path("run/checkpoints/latest.ckpt")), "--data", s(&f.path("data"))]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ground truth required for eval"));
}
