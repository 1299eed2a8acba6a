use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_woundaug"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn woundaug")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "woundaug {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"
name = "cli"
shape = "8x8x3"
balance_per_class = 10
output_dir = "out"
global_seed = 5

[synthetic]
per_class = 12

[degan]
inflate = 4
epochs = 2
batch_size = 8
base_channels = 4
latent_dim = 4

[grid]
epochs_list = [3]
lr_list = [0.1]

[[grid.backbones]]
name = "tiny-cnn"
feature_dim = 8
"#;

#[test]
fn bundled_profiles_validate() {
    let desk = configs().join("desk.toml");
    assert!(ok(&["validate", "--config", s(&desk)]).contains("config ok"));

    // the full-scale profile only needs its dataset root to exist
    let tmp = tempfile::tempdir().unwrap();
    for code in ["BG", "D", "N", "P", "S", "V"] {
        fs::create_dir_all(tmp.path().join(code)).unwrap();
    }
    let paper = configs().join("paper.toml");
    let set = format!("dataset_root={:?}", s(tmp.path()));
    let out = run(&["validate", "--config", s(&paper), "--set", &set]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(stdout.contains("warning: grid.backbones[0]"));
    assert!(!stdout.contains("error:"));

    let missing = run(&["validate", "--config", s(&paper)]);
    assert!(!missing.status.success());
}

#[test]
fn validate_reports_bad_keys() {
    let desk = configs().join("desk.toml");
    let out = run(&["validate", "--config", s(&desk), "--set", "grid.lr_list=[0.0, 0.1]"]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("error:")).count(), 1);
    assert!(stdout.contains("grid.lr_list[0]"));

    let out = run(&["validate", "--config", s(&desk), "--set", r#"conditions=["xfer-only","cutmix"]"#]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("xfer-only, geometric-aug, degan-aug"));

    let out = run(&["validate", "--config", s(&desk), "--set", "no_such_key=1"]);
    assert!(!out.status.success());
}

#[test]
fn stage_commands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |name: &str| tmp.path().join(name);
    let shape = ["--shape", "8x8x3"];
    ok(&["synth", "--out", s(&p("data")), "--per-class", "12", "--seed", "2", shape[0], shape[1]]);
    assert!(ok(&["ingest", "--root", s(&p("data")), "--out", s(&p("all.jsonl")), shape[0], shape[1]]).starts_with("72 samples"));
    let balanced = ok(&["balance", "--manifest", s(&p("all.jsonl")), "--out", s(&p("bal.jsonl")), "--per-class", "10", shape[0], shape[1]]);
    assert!(balanced.contains("60 samples") && balanced.contains("D=10"));
    let split = ok(&["split", "--manifest", s(&p("bal.jsonl")), "--out", s(&p("split.jsonl")), shape[0], shape[1]]);
    assert!(split.contains("train: 48 samples") && split.contains("test:  12 samples"));

    let strict = run(&["balance", "--manifest", s(&p("all.jsonl")), "--out", s(&p("x.jsonl")), "--per-class", "50", shape[0], shape[1]]);
    assert!(!strict.status.success());
    assert!(String::from_utf8_lossy(&strict.stderr).contains("50 required"));

    ok(&["augment", "--manifest", s(&p("bal.jsonl")), "--out", s(&p("aug/aug.jsonl")), "--seed", "4", shape[0], shape[1]]);
    assert!(p("aug/images/geometric-aug").is_dir());

    ok(&[
        "gan-train", "--manifest", s(&p("split.jsonl")), "--class", "D", "--out", s(&p("gan.json")),
        "--epochs", "2", "--batch-size", "4", "--base-channels", "4", "--latent-dim", "4", shape[0], shape[1],
    ]);
    let gen = ok(&["gan-generate", "--model", s(&p("gan.json")), "--n", "6", "--out", s(&p("gan/gen.jsonl")), "--curate", "12"]);
    assert!(gen.contains("generated 6 class D images"));
    assert!(p("gan/curate_sheet.png").is_file());

    ok(&[
        "train", "--manifest", s(&p("split.jsonl")), "--manifest", s(&p("gan/gen.jsonl")), "--out", s(&p("model.json")),
        "--epochs", "5", "--lr", "0.1", "--feature-dim", "8", shape[0], shape[1],
    ]);
    ok(&["train", "--manifest", s(&p("split.jsonl")), "--out", s(&p("base.json")), "--epochs", "5", "--lr", "0.1", "--feature-dim", "8", shape[0], shape[1]]);
    let eval = ok(&["evaluate", "--model", s(&p("model.json")), "--manifest", s(&p("split.jsonl")), "--condition", "degan-aug", "--out", s(&p("degan.json"))]);
    assert!(eval.contains("on 12 samples"));
    ok(&["evaluate", "--model", s(&p("base.json")), "--manifest", s(&p("split.jsonl")), "--out", s(&p("xfer.json"))]);
    let table = ok(&["compare", "--report", s(&p("xfer.json")), "--report", s(&p("degan.json")), "--out-dir", s(&p("cmp"))]);
    assert!(table.contains("F1 delta vs xfer-only"));
    assert_eq!(fs::read_to_string(p("cmp/comparison.txt")).unwrap(), table);
    assert_eq!(fs::read_to_string(p("cmp/comparison.jsonl")).unwrap().lines().count(), 12);

    let single = run(&["compare", "--report", s(&p("xfer.json"))]);
    assert!(!single.status.success());
}

#[test]
fn run_resumes_and_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let first = ok(&["run", "--config", s(&cfg)]);
    assert_eq!(first.lines().filter(|l| l.contains(" ok ")).count(), 3, "{first}");
    let out = tmp.path().join("out");
    let metrics = fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    let index = fs::read_to_string(out.join("results.jsonl")).unwrap();

    let second = bin().args(["run", "--config", s(&cfg)]).env("RUST_LOG", "info").output().unwrap();
    assert!(second.status.success());
    assert_eq!(String::from_utf8_lossy(&second.stderr).matches("already finished, skipping").count(), 3);
    assert_eq!(fs::read_to_string(out.join("metrics.jsonl")).unwrap(), metrics);
    assert_eq!(fs::read_to_string(out.join("results.jsonl")).unwrap(), index);

    fs::remove_dir_all(out.join("plots")).unwrap();
    let plots = ok(&["plot", "--output-dir", s(&out)]);
    assert_eq!(plots.lines().count(), 6, "{plots}");

    // a different seed is a different run
    let other = tmp.path().join("other");
    ok(&["run", "--config", s(&cfg), "--output-dir", s(&other), "--seed", "6"]);
    assert_ne!(fs::read_to_string(other.join("metrics.jsonl")).unwrap(), metrics);
}

#[test]
fn failing_condition_sets_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let out = run(&["run", "--config", s(&cfg), "--set", "degan.learning_rate=1e300"]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("degan-aug      failed"), "{stdout}");
    assert!(tmp.path().join("out/comparison.txt").is_file());
}

#[test]
fn adapter_without_weights_explains_how_to_fetch() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["synth", "--out", s(&tmp.path().join("data")), "--per-class", "3", "--shape", "8x8x3"]);
    ok(&["ingest", "--root", s(&tmp.path().join("data")), "--out", s(&tmp.path().join("m.jsonl")), "--shape", "8x8x3"]);
    let out = bin()
        .args(["train", "--manifest", s(&tmp.path().join("m.jsonl")), "--out", s(&tmp.path().join("x.json"))])
        .args(["--backbone", "resnet50-adapter", "--shape", "8x8x3"])
        .env_remove("WOUNDAUG_WEIGHTS_DIR")
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("scripts/export_backbones.py"), "{err}");
}
