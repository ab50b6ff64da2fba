//! End-to-end runs of the `kinetic` binary on small configs.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use kinetic::cli::RunManifest;

fn kinetic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kinetic")).args(args).output().unwrap()
}

const SMALL_SPECTRUM: &str = "grid.n_v = 12\nkernel.n_sigma = 8\n";

fn run_spectrum(dir: &Path) -> Output {
    let cfg = dir.join("small.cfg");
    fs::write(&cfg, SMALL_SPECTRUM).unwrap();
    kinetic(&["spectrum", "--config", cfg.to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()])
}

#[test]
fn spectrum_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let out = run_spectrum(d.path());
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
    }
    for name in ["eigenvalues.csv", "spectrum_plateau.csv", "spectrum_summary.csv"] {
        let x = fs::read(a.path().join("out").join(name)).unwrap();
        let y = fs::read(b.path().join("out").join(name)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{name} differs between runs");
    }
    let head = fs::read_to_string(a.path().join("out/eigenvalues.csv")).unwrap();
    assert!(head.starts_with("index,re,im,in_kernel"));

    let m = RunManifest::load(&a.path().join("out/manifest.json")).unwrap();
    assert_eq!(m.exit_code(), 0);
    assert_eq!(m.experiment, "spectrum");
    let report = tempfile::tempdir().unwrap();
    let out = kinetic(&[
        "report",
        a.path().join("out/manifest.json").to_str().unwrap(),
        "--out",
        report.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(report.path().join("report.md").exists());
    assert!(report.path().join("checks.csv").exists());
}

#[test]
fn bad_config_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "grid.n_v = 12\nno_such_key = 3\n").unwrap();
    let out = kinetic(&["spectrum", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn unsorted_epsilon_override_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = kinetic(&["linear-decay", "--epsilon-override", "0.25,0.5", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_subcommand_prints_parseable_defaults() {
    let out = kinetic(&["config", "hydro-limit"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = kinetic::cli::parse_config(&text, kinetic::cli::Experiment::HydroLimit).unwrap();
    assert_eq!(cfg.to_text(), text);
    assert_eq!(kinetic(&["config", "nope"]).status.code(), Some(2));
}
