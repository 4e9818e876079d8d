use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use corsma::experiment::{read_table, RowKind};
use corsma::pipeline::RunRecord;

fn corsma(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_corsma")).args(args).output().expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("corsma-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn selftest_passes_on_clean_build() {
    let o = corsma(&["selftest"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.contains("0 failed"));
    assert!(text.contains("samples"), "oracle line reports its sample count");
}

#[test]
fn injected_gradient_fault_fails_selftest() {
    let o = corsma(&["selftest", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(text.contains("FAIL gradient e_u"), "{text}");
    assert!(text.contains("PASS gradient c_uk"), "{text}");
}

#[test]
fn run_with_defaults_writes_record_and_path() {
    let dir = scratch("run");
    let cfg = configs().join("defaults.toml");
    let o = corsma(&["run", "--config", cfg.to_str().unwrap(), "--out-dir", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rec = RunRecord::read_json(&dir.join("run-corsma-seed0.json")).unwrap();
    assert!(rec.solution.wsr() > 0.0);
    assert!(rec.solution.report.sensing_snr >= 2.0 * (1.0 - 1e-6));
    let path = std::fs::read_to_string(dir.join("run-corsma-seed0-path.csv")).unwrap();
    assert!(path.starts_with("outer,inner,uav,x,y\n"));
    assert!(path.lines().count() > 3);
    let manifest = std::fs::read_to_string(dir.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 2);
    assert!(manifest.contains(&rec.scenario_hash));
}

#[test]
fn missing_config_is_an_error() {
    let o = corsma(&["run", "--config", "/nonexistent/corsma.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
}

#[test]
fn unknown_override_is_rejected() {
    let o = corsma(&["run", "--set", "options.no_such_key=1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn infeasible_run_exits_nonzero() {
    let dir = scratch("infeasible");
    let o = corsma(&["run", "--scheme", "sdma", "--set", "rate_threshold=5e6", "--out-dir", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    // The record is still written for inspection.
    assert!(dir.join("run-sdma-seed0.json").exists());
}

#[test]
fn seed_changes_fading_but_not_geometry() {
    let dir = scratch("seeds");
    let d = dir.to_str().unwrap();
    let los = corsma(&["run", "--scheme", "oma", "--seeds", "2", "--out-dir", d]);
    assert!(los.status.success());
    let a = RunRecord::read_json(&dir.join("run-oma-seed0.json")).unwrap();
    let b = RunRecord::read_json(&dir.join("run-oma-seed1.json")).unwrap();
    assert_eq!(a.scenario, b.scenario);
    // The seed also drives K-Means restarts, so UAV labels may permute.
    assert!((a.solution.wsr() - b.solution.wsr()).abs() <= 1e-3 * a.solution.wsr());

    let dir = scratch("seeds-rayleigh");
    let d = dir.to_str().unwrap();
    let ray = corsma(&["run", "--scheme", "oma", "--seeds", "2", "--set", "channel_mode=rayleigh", "--out-dir", d]);
    assert!(ray.status.success());
    let a = RunRecord::read_json(&dir.join("run-oma-seed0.json")).unwrap();
    let b = RunRecord::read_json(&dir.join("run-oma-seed1.json")).unwrap();
    assert_eq!(a.scenario.cs_positions, b.scenario.cs_positions);
    assert_ne!(a.solution.wsr(), b.solution.wsr());
}

#[test]
fn sweep_writes_rows_and_summaries_and_appends() {
    let dir = scratch("sweep");
    let spec = dir.join("tiny.toml");
    std::fs::write(
        &spec,
        "parameter = \"sensing_threshold\"\nvalues = [2.0, 4.0]\nschemes = [\"noma\", \"oma\"]\nseeds = 2\n",
    )
    .unwrap();
    let args = ["sweep", "--sweep", spec.to_str().unwrap(), "--out-dir", dir.to_str().unwrap()];
    let o = Command::new(env!("CARGO_BIN_EXE_corsma")).args(args).env("CORSMA_WORKERS", "2").output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_table(&dir.join("tiny.csv")).unwrap();
    assert_eq!(rows.iter().filter(|r| r.kind == RowKind::Row).count(), 8);
    assert_eq!(rows.iter().filter(|r| r.kind == RowKind::Summary).count(), 4);

    let o = corsma(&["sweep", "--sweep", spec.to_str().unwrap(), "--out-dir", dir.to_str().unwrap(), "--scheme", "oma", "--seeds", "1"]);
    assert!(o.status.success());
    let rows = read_table(&dir.join("tiny.csv")).unwrap();
    assert_eq!(rows.len(), 12 + 4);
    let manifest = std::fs::read_to_string(dir.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 2);
}

#[test]
fn invalid_sweep_is_rejected() {
    let dir = scratch("badsweep");
    let spec = dir.join("bad.toml");
    std::fs::write(&spec, "parameter = \"K\"\nvalues = [2.5]\n").unwrap();
    let o = corsma(&["sweep", "--sweep", spec.to_str().unwrap(), "--out-dir", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
