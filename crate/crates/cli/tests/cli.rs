//! End-to-end CLI tests driving the installed binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_graddrop"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("graddrop-cli-tests").join(name);
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

const TINY_CONFIG: &str = r#"
[model]
embed_dim = 8
attn_dim = 4
heads = 2
head_dim = 4
layers = 2
vocab = 16
max_len = 8
classes = 2

[policy]
kind = "grad-drop-epoch"

[train]
epochs = 2
batch_size = 8
train_samples = 48
test_samples = 24
"#;

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn run_writes_metrics_summary_and_checkpoint() {
    let dir = scratch("run");
    let cfg = write_config(&dir, TINY_CONFIG);
    let out_dir = dir.join("out");
    run_ok(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out_dir.join("metrics.jsonl").exists());
    assert!(out_dir.join("summary.json").exists());
    assert!(out_dir.join("model_final.ckpt").exists());
    let metrics = std::fs::read_to_string(out_dir.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
}

#[test]
fn rerun_is_byte_identical() {
    let dir = scratch("determinism");
    let cfg = write_config(&dir, TINY_CONFIG);
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    run_ok(&["run", "--config", cfg.to_str().unwrap(), "--out", out_a.to_str().unwrap()]);
    run_ok(&["run", "--config", cfg.to_str().unwrap(), "--out", out_b.to_str().unwrap()]);
    let a = std::fs::read(out_a.join("metrics.jsonl")).unwrap();
    let b = std::fs::read(out_b.join("metrics.jsonl")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = scratch("badkey");
    let cfg = write_config(&dir, "[train]\nepochs = 1\nnot_a_key = 3\n");
    let out = bin()
        .args(["run", "--config", cfg.to_str().unwrap(), "--out", dir.join("o").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("not_a_key"), "{stderr}");
}

#[test]
fn numerical_abort_exits_3() {
    let dir = scratch("abort");
    let cfg = write_config(
        &dir,
        &format!("{TINY_CONFIG}\n[optim]\nlr = 1e18\n"),
    );
    let out = bin()
        .args(["run", "--config", cfg.to_str().unwrap(), "--out", dir.join("o").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn missing_config_file_exits_4() {
    let dir = scratch("missing");
    let out = bin()
        .args([
            "run",
            "--config",
            dir.join("nope.toml").to_str().unwrap(),
            "--out",
            dir.join("o").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn dry_run_prints_effective_config() {
    let dir = scratch("dry");
    let cfg = write_config(&dir, TINY_CONFIG);
    let out = run_ok(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.join("o").to_str().unwrap(),
        "--dry-run",
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("kind = \"grad-drop-epoch\""), "{stdout}");
    assert!(stdout.contains("lr = 0.02"), "{stdout}");
    assert!(!dir.join("o").exists());
}

#[test]
fn grid_compare_and_export_pipeline() {
    let dir = scratch("pipeline");
    let cfg = write_config(&dir, TINY_CONFIG);
    let sweep = dir.join("sweep");
    run_ok(&[
        "grid",
        "--config",
        cfg.to_str().unwrap(),
        "--policies",
        "sft,layer-grad-drop",
        "--seeds",
        "0,1",
        "--out",
        sweep.to_str().unwrap(),
        "--workers",
        "2",
    ]);
    for cell in ["sft_s000", "sft_s001", "layer-grad-drop_s000", "layer-grad-drop_s001"] {
        assert!(sweep.join(cell).join("summary.json").exists(), "{cell}");
    }

    let table_path = dir.join("compare.json");
    let out = run_ok(&[
        "compare",
        "--dir",
        sweep.to_str().unwrap(),
        "--baseline",
        "sft",
        "--out",
        table_path.to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("layer-grad-drop"), "{stdout}");
    let table: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&table_path).unwrap()).unwrap();
    assert_eq!(table.as_array().unwrap().len(), 1);

    let run_dir = sweep.join("sft_s000");
    run_ok(&["export", "--run", run_dir.to_str().unwrap()]);
    let layers = std::fs::read_to_string(run_dir.join("timeline_layers.csv")).unwrap();
    assert!(layers.starts_with("epoch,embed,enc_1,enc_2,head\n"), "{layers}");
    let metrics = std::fs::read_to_string(run_dir.join("timeline_metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,train_loss,test_accuracy,p_effective\n"));
}

#[test]
fn unknown_policy_name_exits_2() {
    let dir = scratch("badpolicy");
    let cfg = write_config(&dir, TINY_CONFIG);
    let out = bin()
        .args([
            "grid",
            "--config",
            cfg.to_str().unwrap(),
            "--policies",
            "sft,warp-drive",
            "--seeds",
            "0",
            "--out",
            dir.join("s").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn check_subcommand_passes() {
    let out = run_ok(&["check"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("all 10 self-checks passed"), "{stdout}");
    assert!(!stdout.contains("[FAIL]"));
}
