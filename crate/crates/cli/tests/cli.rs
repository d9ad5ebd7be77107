use std::fs;
use std::process::Command;

fn qnet() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qnet"))
}

const CONFIG: &str = "seed = 5\nend_time_ms = 5.0\n[topology]\nkind = \"linear\"\nrouters = 6\n[flows]\nlanes = 4\n";

#[test]
fn run_then_report_against_a_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let (seq, par) = (dir.path().join("p1"), dir.path().join("p2"));
    let out = qnet().arg("run").arg(&cfg).arg("--out").arg(&seq).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = qnet()
        .args(["run"])
        .arg(&cfg)
        .args(["--workers", "2", "--lookahead", "half-classical", "--no-batching", "--dup-factor", "2", "--out"])
        .arg(&par)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("workers=2"));
    assert!(par.join("workers.csv").exists());

    let out = qnet().arg("report").arg(&par).arg("--baseline").arg(&seq).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("speedup="));
}

#[test]
fn partition_prints_the_map() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, CONFIG).unwrap();
    let out = qnet().arg("partition").arg(&cfg).args(["--workers", "2"]).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["pmap"]["assign"], serde_json::json!([0, 0, 0, 1, 1, 1]));
    assert_eq!(v["energy"]["p2"], 1.0);
}

#[test]
fn bad_config_fails_with_the_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, format!("{CONFIG}[hardware]\nqc_length = -2.0\n")).unwrap();
    let out = qnet().arg("run").arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("hardware.qc_length"));
}
