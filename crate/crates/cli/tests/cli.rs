use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn amc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amc-uq"))
        .args(args)
        .output()
        .expect("spawn")
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

#[test]
fn smoke_run_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let out = amc(&["run", "--config", path(&smoke_config()), "--out", path(tmp.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for rel in [
        "data/train.sigset",
        "data/test.sigset",
        "models/standalone.weights",
        "models/equal_ensemble/ensemble.json",
        "models/weighted_ensemble/ensemble.json",
        "reports/clean.csv",
        "reports/attack_pnr_over_snr.csv",
        "reports/attack_snr_over_pnr.csv",
        "manifests/run.json",
    ] {
        assert!(tmp.path().join(rel).is_file(), "missing {rel}");
    }
    let figures = std::fs::read_dir(tmp.path().join("figures")).unwrap().count();
    assert!(figures > 0);
}

#[test]
fn stages_run_separately() {
    let tmp = tempfile::tempdir().unwrap();
    for stage in ["generate", "train", "evaluate", "attack", "report"] {
        let out = amc(&[
            stage,
            "--config",
            path(&smoke_config()),
            "--out",
            path(tmp.path()),
            "--precision",
            "f64",
        ]);
        assert!(
            out.status.success(),
            "{stage}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "seed = 1\nnot_a_field = 3\n").unwrap();
    let out = amc(&["generate", "--config", path(&bad), "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = amc(&["generate", "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_artifacts_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = amc(&["evaluate", "--config", path(&smoke_config()), "--out", path(tmp.path())]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
