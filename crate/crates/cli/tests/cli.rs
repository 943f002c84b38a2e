use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn o2proxy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_o2proxy")).args(args).env_remove("O2PROXY_WORKERS").output().expect("binary runs")
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).expect("valid JSON")
}

fn read_json(path: &Path) -> Value {
    json(&std::fs::read(path).unwrap())
}

#[test]
fn serial_then_offloaded_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let a = o2proxy(&["run", "--suite", "cam-phys", "--mode", "mpe", "--out", out]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = o2proxy(&["run", "--suite", "cam-phys", "--mode", "mpe+cpe", "--n-cpes", "8", "--out", out]);
    assert!(b.status.success(), "{}", String::from_utf8_lossy(&b.stderr));
    assert_eq!(json(&b.stdout)["status"], "match");

    let cp_a = dir.path().join("cam-phys-mpe.bin");
    let cp_b = dir.path().join("cam-phys-mpe+cpe.bin");
    let v = o2proxy(&["verify", cp_a.to_str().unwrap(), cp_b.to_str().unwrap(), "--mode", "bit"]);
    assert_eq!(v.status.code(), Some(0));
    let report = json(&v.stdout);
    assert_eq!(report["status"], "match");
    assert_eq!(report["mismatch_count"], 0);
}

#[test]
fn verify_reports_first_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.bin");
    let b = dir.path().join("b.bin");
    o2proxy::kernels::flatio::save(&a, &[3], &[1.0, 2.0, 3.0]).unwrap();
    o2proxy::kernels::flatio::save(&b, &[3], &[1.0, f64::from_bits(2f64.to_bits() + 1), 3.0]).unwrap();
    let (a, b) = (a.to_str().unwrap(), b.to_str().unwrap());

    let bit = o2proxy(&["verify", a, b]);
    assert_eq!(bit.status.code(), Some(1));
    let report = json(&bit.stdout);
    assert_eq!(report["status"], "mismatch");
    assert_eq!(report["first_mismatch"]["index"], 1);

    let ulp = o2proxy(&["verify", a, b, "--mode", "ulp:1"]);
    assert_eq!(ulp.status.code(), Some(0));
}

#[test]
fn unknown_suite_is_a_usage_error() {
    let out = o2proxy(&["run", "--suite", "cam-chem"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn errors_are_json_on_stderr() {
    let out = o2proxy(&["verify", "/nonexistent/a.bin", "/nonexistent/b.bin"]);
    assert_eq!(out.status.code(), Some(1));
    let err = json(&out.stderr);
    assert_eq!(err["error"]["kind"], "verify");

    let dir = tempfile::tempdir().unwrap();
    let bad = o2proxy(&["run", "--suite", "cam-phys", "--n-cpes", "65", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));
    assert_eq!(json(&bad.stderr)["error"]["kind"], "config");
}

#[test]
fn init_bench_counts_messages() {
    let out = o2proxy(&["init-bench", "--n", "64", "--group-size", "8"]);
    assert!(out.status.success());
    let report = json(&out.stdout);
    assert_eq!(report["alltoallw_hierarchical"]["stats"]["messages"], 168);
    assert_eq!(report["alltoallw_flat"]["stats"]["messages"], 4032);
    assert_eq!(report["alltoallw_identical"], true);
}

#[test]
fn init_bench_scenario_file_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("scenario.json");
    std::fs::write(&sc, r#"{"n": 4, "group_size": 2, "fanout": 2, "seed": 1}"#).unwrap();
    let csv = dir.path().join("stats.csv");
    let out = o2proxy(&["init-bench", "--config", sc.to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
    assert!(out.status.success());
    let report = json(&out.stdout);
    assert_eq!(report["alltoallw_hierarchical"]["stats"]["messages"], 6);
    assert_eq!(report["alltoallw_flat"]["stats"]["messages"], 12);
    let text = std::fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("operation,messages,"));
}

#[test]
fn reports_are_reproducible_outside_timing() {
    let run = |dir: &Path| {
        let out = o2proxy(&[
            "run",
            "--suite",
            "all",
            "--mode",
            "mpe+cpe",
            "--n-cpes",
            "4",
            "--seed",
            "11",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        read_json(&dir.join("profile-mpe+cpe.json"))
    };
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (mut a, mut b) = (run(d1.path()), run(d2.path()));
    for doc in [&mut a, &mut b] {
        doc["config"]["out"] = Value::Null;
    }
    assert_eq!(a["deterministic"], b["deterministic"]);
    assert_eq!(a["config"], b["config"]);
    assert_eq!(a["all_match"], true);

    let cases = a["deterministic"]["cases"].as_array().unwrap();
    assert_eq!(cases.len(), 6);
    let breakdown = &a["timing"]["breakdown"]["by_category"];
    for cat in ["MPE_COMPUTE", "CPE_COMPUTE", "COMM", "IO", "IDLE"] {
        assert!(breakdown[cat].is_number(), "{cat}");
    }
    let total: f64 = breakdown.as_object().unwrap().values().map(|v| v.as_f64().unwrap()).sum();
    assert!((total - 100.0).abs() < 0.01);
}

#[test]
fn config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    let out_dir = dir.path().join("out");
    std::fs::write(
        &cfg,
        serde_json::json!({
            "suite": "pop-hmix", "mode": "mpe", "n_cpes": 2, "seed": 5,
            "out": out_dir,
        })
        .to_string(),
    )
    .unwrap();
    let out = o2proxy(&["run", "--config", cfg.to_str().unwrap(), "--mode", "mpe+cpe"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let profile = read_json(&out_dir.join("profile-mpe+cpe.json"));
    assert_eq!(profile["config"]["n_cpes"], 2);
    assert_eq!(profile["config"]["suite"], "pop-hmix");
    assert!(out_dir.join("pop-hmix-mpe+cpe.bin").exists());
}

#[test]
fn worker_cap_and_core_groups() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_o2proxy"))
        .args(["run", "--suite", "cice-evp", "--n-core-groups", "2", "--out", dir.path().to_str().unwrap()])
        .env("O2PROXY_WORKERS", "2")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("cice-evp-mpe+cpe-cg0.bin").exists());
    assert!(dir.path().join("cice-evp-mpe+cpe-cg1.bin").exists());
    let profile = read_json(&dir.path().join("profile-mpe+cpe.json"));
    assert_eq!(profile["timing"]["host_threads"], 2);

    let bad = Command::new(env!("CARGO_BIN_EXE_o2proxy"))
        .args(["run", "--suite", "cam-phys", "--out", dir.path().to_str().unwrap()])
        .env("O2PROXY_WORKERS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn report_formats() {
    let dir = tempfile::tempdir().unwrap();
    let run = o2proxy(&["run", "--suite", "pop-vmix", "--out", dir.path().to_str().unwrap()]);
    assert!(run.status.success());
    let profile = dir.path().join("profile-mpe+cpe.json");
    let p = profile.to_str().unwrap();
    let text = o2proxy(&["report", p]);
    assert!(String::from_utf8_lossy(&text.stdout).contains("by category"));
    let csv = o2proxy(&["report", p, "--format", "csv"]);
    assert!(String::from_utf8_lossy(&csv.stdout).starts_with("kind,name,percent"));
    let j = json(&o2proxy(&["report", p, "--format", "json"]).stdout);
    assert!(j["by_component"]["OCN"].as_f64().unwrap() > 0.0);
}
