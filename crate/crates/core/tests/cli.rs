//! The `weakkam` binary: exit codes, error paths and written artifacts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_weakkam"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs").join(name)
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).env_remove("WEAKKAM_OUT").output().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn missing_grid_section_exits_2_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\n[system]\nkind = \"flat\"\n").unwrap();
    let o = run(&["alpha", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["kind"], "config");
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid"));
}

#[test]
fn mistyped_field_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(config("flat.toml")).unwrap().replace("v_max = 4.0", "v_max = \"fast\"");
    std::fs::write(&cfg, text).unwrap();
    let o = run(&["alpha", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid.v_max"));
}

#[test]
fn unknown_subcommand_is_rejected() {
    let o = bin().args(["lyapunov", "--config"]).arg(config("flat.toml")).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flat_faces_stage_finds_no_face() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["faces", "--config", config("flat.toml").to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let faces = json(&dir.path().join("faces/faces.json"));
    for d in faces["report"]["directions"].as_array().unwrap() {
        assert_eq!(d["delta_star"].as_f64(), Some(0.0));
    }
    let m = json(&dir.path().join("manifest.json"));
    assert_eq!(m["exit_code"], 0);
    assert_eq!(m["seed"], 42);
    for a in m["artifacts"].as_array().unwrap() {
        assert!(dir.path().join(a["path"].as_str().unwrap()).exists());
    }
}

#[test]
fn seed_flag_overrides_config_and_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["barrier", "--config", config("pendulum.toml").to_str().unwrap(), "--seed", "7", "--threads", "1"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&dir.path().join("manifest.json"))["seed"], 7);
    assert_eq!(json(&dir.path().join("barrier/barrier.json"))["seed"], 7);
}
