//! End-to-end checks of the `mfc` binary.

use std::path::Path;
use std::process::Command;

fn mfc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mfc"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    let out = dir.join("out");
    std::fs::write(
        &path,
        format!("{body}\n[output]\ndir = {:?}\n", out.to_str().unwrap()),
    )
    .unwrap();
    path
}

fn only_run_dir(dir: &Path) -> std::path::PathBuf {
    let mut entries: Vec<_> = std::fs::read_dir(dir.join("out"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    entries.sort();
    entries.remove(0)
}

#[test]
fn empty_selection_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[model]\npreset = \"lq\"");
    let st = mfc().arg("run").arg(&cfg).status().unwrap();
    assert!(st.success());
    let summary: serde_json::Value = serde_json::from_reader(
        std::fs::File::open(only_run_dir(tmp.path()).join("summary.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(summary["tests"].as_array().unwrap().len(), 0);
    assert_eq!(summary["pass"], true);
}

#[test]
fn invalid_config_is_rejected_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[model]\npreset = \"lq\"\nlamda = 3.0");
    let out = mfc().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid config"));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn solve_run_then_replay_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "name = \"smoke\"\ntests = [\"solve\", \"simulate\"]\n[model]\npreset = \"lq\"\nsigma = 0.3\n[grid]\nsteps = 20\n[solver]\nnoise_batch = 4",
    );
    assert!(mfc().arg("run").arg(&cfg).status().unwrap().success());
    let run = only_run_dir(tmp.path());
    let solved: serde_json::Value =
        serde_json::from_reader(std::fs::File::open(run.join("solve.json")).unwrap()).unwrap();
    assert!(solved["value"].is_number());
    let out = mfc()
        .arg("replay")
        .arg(run.join("summary.json"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("2 of 2 CSV files identical"));
}

#[test]
fn failing_test_gives_nonzero_exit() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "tests = [\"audit\"]\n[model]\npreset = \"twolayer\"",
    );
    let out = mfc().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL  audit"));
}

#[test]
fn audit_subcommand_prints_constants() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[model]\npreset = \"lq\"");
    let out = mfc().arg("audit").arg(&cfg).output().unwrap();
    assert!(out.status.success());
    let a: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(a["lambda0"], 0.0);
}
