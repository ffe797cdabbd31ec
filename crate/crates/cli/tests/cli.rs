//! End-to-end runs of the `stgdl` binary: every subcommand, the documented
//! exit codes, and byte-level determinism of generated artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stgdl"))
}

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("stgdl_cli_tests").join(name);
    if dir.exists() {
        fs::remove_dir_all(&dir).unwrap();
    }
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn generate_tiny(dir: &Path) {
    run_ok(bin().args([
        "generate",
        "--out",
        dir.to_str().unwrap(),
        "--nodes",
        "8",
        "--factors",
        "2",
        "--steps",
        "100",
        "--noise",
        "0.02",
        "--edge-prob",
        "0.5",
        "--seed",
        "11",
    ]));
}

fn train_tiny(data: &Path, ckpt: &Path, variant: &str, extra: &[&str]) {
    let mut cmd = bin();
    cmd.args([
        "train",
        "--data",
        data.to_str().unwrap(),
        "--k",
        "2",
        "--window",
        "6",
        "--hidden",
        "4",
        "--lr",
        "0.01",
        "--batch",
        "16",
        "--epochs",
        "2",
        "--patience",
        "5",
        "--seed",
        "3",
        "--variant",
        variant,
        "--out",
        ckpt.to_str().unwrap(),
    ]);
    cmd.args(extra);
    run_ok(&mut cmd);
}

#[test]
fn generate_writes_a_loadable_deterministic_dataset() {
    let root = workdir("generate");
    let a = root.join("a");
    let b = root.join("b");
    generate_tiny(&a);
    generate_tiny(&b);

    for name in ["meta.json", "adjacency.csv", "signals.csv"] {
        assert!(a.join(name).exists(), "{name} missing");
    }
    assert!(a.join("factor_0").join("adjacency.csv").exists());
    assert!(a.join("factor_1").join("signals.csv").exists());

    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["n_nodes"], 8);
    assert_eq!(meta["factors"], 2);

    // Same seed, same bytes.
    assert_eq!(
        fs::read(a.join("signals.csv")).unwrap(),
        fs::read(b.join("signals.csv")).unwrap()
    );
}

#[test]
fn train_evaluate_and_decompose_round_trip() {
    let root = workdir("train_eval");
    let data = root.join("data");
    generate_tiny(&data);

    let ckpt = root.join("model.json");
    let history = root.join("history.csv");
    train_tiny(
        &data,
        &ckpt,
        "stgdl",
        &["--history", history.to_str().unwrap()],
    );
    assert!(ckpt.exists());

    let hist = fs::read_to_string(&history).unwrap();
    let mut lines = hist.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,loss_completeness,loss_independence,loss_reconstruction,loss_prediction,loss_joint,val_mae"
    );
    assert_eq!(lines.count(), 2, "one row per epoch");

    let out = run_ok(bin().args([
        "evaluate",
        "--data",
        data.to_str().unwrap(),
        "--model",
        ckpt.to_str().unwrap(),
        "--split",
        "test",
    ]));
    let metrics: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(metrics["mae"].as_f64().unwrap() > 0.0);
    assert!(metrics["rmse"].as_f64().unwrap() >= metrics["mae"].as_f64().unwrap());

    let decomp_dir = root.join("decomposition");
    let out = run_ok(bin().args([
        "decompose",
        "--model",
        ckpt.to_str().unwrap(),
        "--tau",
        "0.5",
        "--out",
        decomp_dir.to_str().unwrap(),
    ]));
    assert!(String::from_utf8_lossy(&out.stdout).contains("hardened 2 factors"));
    assert!(decomp_dir.join("soft_0.csv").exists());
    assert!(decomp_dir.join("summary.json").exists());
}

#[test]
fn decompose_rejects_models_without_masks() {
    let root = workdir("decompose_reject");
    let data = root.join("data");
    generate_tiny(&data);
    let ckpt = root.join("mono.json");
    train_tiny(&data, &ckpt, "monolithic", &[]);

    let out = bin()
        .args([
            "decompose",
            "--model",
            ckpt.to_str().unwrap(),
            "--out",
            root.join("d").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("without learned masks"));
}

#[test]
fn theory_report_prints_bounds() {
    let root = workdir("theory");
    let data = root.join("data");
    generate_tiny(&data);

    let csv_path = root.join("bounds.csv");
    let out = run_ok(bin().args([
        "theory-report",
        "--data",
        data.to_str().unwrap(),
        "--states",
        "6",
        "--out",
        csv_path.to_str().unwrap(),
    ]));
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.contains("mixture.entropy_bits"));
    assert!(text.contains("decomposed_floor"));
    assert!(
        !text.contains("factor_0."),
        "per-factor lines need the flag"
    );

    let out = run_ok(bin().args([
        "theory-report",
        "--data",
        data.to_str().unwrap(),
        "--states",
        "6",
        "--per-factor",
    ]));
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.contains("factor_0.max_predictability"));
    assert!(text.contains("factor_1.error_floor"));

    let csv = fs::read_to_string(&csv_path).unwrap();
    assert!(csv.starts_with("key,value\n"));
    assert!(csv.contains("mixture.error_floor"));
}

#[test]
fn experiment_writes_reports() {
    let root = workdir("experiment");
    let data = root.join("data");
    generate_tiny(&data);

    let config = serde_json::json!({
        "dataset": { "source": "load", "path": data },
        "train": {
            "learning_rate": 0.01,
            "batch_size": 16,
            "max_epochs": 2,
            "patience": 5,
            "factors": 2,
            "window": 6,
            "hidden": 4
        },
        "seeds": [1, 2],
        "variants": ["stgdl", "monolithic"],
        "theory_states": 6
    });
    let cfg_path = root.join("experiment.json");
    fs::write(&cfg_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();

    let report_dir = root.join("report");
    let out = run_ok(bin().args([
        "experiment",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        report_dir.to_str().unwrap(),
    ]));
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.contains("stgdl vs monolithic"));

    for name in ["report.json", "report.csv", "report.txt"] {
        assert!(report_dir.join(name).exists(), "{name} missing");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(report_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["runs"].as_array().unwrap().len(), 4);
    let csv = fs::read_to_string(report_dir.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn usage_and_data_errors_use_documented_exit_codes() {
    // Unknown subcommand and bad flag values are usage errors.
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = bin()
        .args(["train", "--data", "x", "--out", "y", "--variant", "gru"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    // A missing dataset directory is a data error.
    let out = bin()
        .args([
            "evaluate",
            "--data",
            "/nonexistent/dataset",
            "--model",
            "/nonexistent/model.json",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Help and version report success.
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("theory-report"));
    let out = bin().arg("--version").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}
