use std::path::Path;
use std::process::{Command, Output};

fn softmil(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_softmil"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = softmil(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth_into(dir: &Path) {
    ok(&[
        "synth",
        "--out",
        s(dir),
        "--n-images",
        "60",
        "--n-features",
        "8",
        "--support",
        "2",
        "--seed",
        "3",
    ]);
}

#[test]
fn stepwise_commands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data);
    for f in [
        "images.jsonl",
        "marks.jsonl",
        "candidates.csv",
        "true_weights.json",
    ] {
        assert!(data.join(f).exists(), "{f}");
    }
    let gts = tmp.path().join("gts.jsonl");
    let targets = tmp.path().join("targets.jsonl");
    let bags = tmp.path().join("bags.jsonl");
    let model = tmp.path().join("model.json");
    let roc = tmp.path().join("roc.csv");
    ok(&["merge", "--data", s(&data), "--out", s(&gts)]);
    ok(&[
        "label",
        "--data",
        s(&data),
        "--gts",
        s(&gts),
        "--out",
        s(&targets),
    ]);
    ok(&[
        "bags",
        "--data",
        s(&data),
        "--gts",
        s(&gts),
        "--targets",
        s(&targets),
        "--out",
        s(&bags),
    ]);
    let train = ok(&[
        "train",
        "--bags",
        s(&bags),
        "--data",
        s(&data),
        "--lambda",
        "0.05",
        "--normalization",
        "per-class",
        "--out",
        s(&model),
    ]);
    assert!(train.contains("converged true"), "{train}");
    let model_json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&model).unwrap()).unwrap();
    assert_eq!(model_json["normalization"], "per-class");
    assert_eq!(model_json["version"], 1);

    ok(&[
        "eval",
        "--data",
        s(&data),
        "--gts",
        s(&gts),
        "--model",
        s(&model),
        "--out",
        s(&roc),
    ]);
    let table = std::fs::read_to_string(&roc).unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next(),
        Some("fp_point,threshold,gt_sensitivity,image_sensitivity")
    );
    assert_eq!(lines.count(), 6);
}

#[test]
fn run_is_deterministic_and_honours_config() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data);
    let config = tmp.path().join("cfg.toml");
    std::fs::write(&config, "lambda = 0.05\nsplit_seed = 4\n").unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&[
        "run",
        "--data",
        s(&data),
        "--out",
        s(&a),
        "--config",
        s(&config),
    ]);
    ok(&[
        "run",
        "--data",
        s(&data),
        "--out",
        s(&b),
        "--config",
        s(&config),
    ]);
    for f in [
        "gts.jsonl",
        "targets.jsonl",
        "model.json",
        "roc_train.csv",
        "test_induced.csv",
        "manifest.json",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let manifest = std::fs::read_to_string(a.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"split_seed\": 4"), "{manifest}");
    assert!(!a.join("sweep.csv").exists());
}

#[test]
fn sweep_writes_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data);
    let config = tmp.path().join("cfg.toml");
    std::fs::write(&config, "grid = [0.001, 0.01, 0.1, 1.0]\n").unwrap();
    let out = tmp.path().join("out");
    ok(&[
        "sweep",
        "--data",
        s(&data),
        "--out",
        s(&out),
        "--config",
        s(&config),
    ]);
    let sweep = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 5);
    assert_eq!(sweep.lines().filter(|l| l.ends_with(",true")).count(), 1);
}

#[test]
fn gradient_check_passes() {
    let out = ok(&["check-gradients", "--trials", "30"]);
    assert!(out.contains("30 problems"), "{out}");
}

#[test]
fn validation_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data);
    let mut csv = std::fs::read_to_string(data.join("candidates.csv")).unwrap();
    let first_row = csv.lines().nth(1).unwrap().to_string();
    let cols: Vec<&str> = first_row.split(',').collect();
    let mut bad = vec!["9999", "888888"];
    bad.extend(&cols[2..]);
    csv.push_str(&bad.join(","));
    csv.push('\n');
    std::fs::write(data.join("candidates.csv"), csv).unwrap();
    let out = softmil(&[
        "merge",
        "--data",
        s(&data),
        "--out",
        s(&tmp.path().join("g.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("9999"), "{err}");
}

#[test]
fn fatal_nonconvergence_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth_into(&data);
    let config = tmp.path().join("cfg.toml");
    std::fs::write(
        &config,
        "lambda = 0.001\nfail_on_nonconvergence = true\n[optimizer]\nmax_iterations = 1\n",
    )
    .unwrap();
    let out = softmil(&[
        "run",
        "--data",
        s(&data),
        "--out",
        s(&tmp.path().join("o")),
        "--config",
        s(&config),
    ]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn usage_errors_exit_with_one_and_help_with_zero() {
    assert_eq!(softmil(&["train"]).status.code(), Some(1));
    assert_eq!(softmil(&["--help"]).status.code(), Some(0));
}
