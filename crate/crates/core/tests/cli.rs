use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cosr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cosr"))
        .args(args)
        .env_remove("COSR_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn small_run(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "run",
        "--seeds",
        "2",
        "--set",
        "sim_duration=0.3",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    cosr(&args)
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(small_run(&a, &[]).status.success());
    assert!(small_run(&b, &["--workers", "2"]).status.success());
    for f in ["runs.csv", "aggregate.csv", "stas.csv", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let runs = fs::read_to_string(a.join("runs.csv")).unwrap();
    // Header plus 2 seeds x 2 traffic models x 3 policies.
    assert_eq!(runs.lines().count(), 13);
}

#[test]
fn verify_passes_clean_logs_and_flags_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("batch");
    assert!(small_run(&out, &["--event-log"]).status.success());
    let ok = cosr(&["verify", "--out", out.to_str().unwrap()]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stdout));

    // Let an AP under NAV transmit as well.
    let log = out.join("logs").join("0_poisson_UNC.jsonl");
    let text = fs::read_to_string(&log).unwrap();
    let mut lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let txop = lines
        .iter_mut()
        .find(|v| v["kind"] == "txop" && !v["nav"].as_array().unwrap().is_empty())
        .expect("a TXOP with idle APs");
    let intruder = txop["nav"][0].as_u64().unwrap();
    let mut extra = txop["tx"][0].clone();
    extra["ap"] = intruder.into();
    txop["tx"].as_array_mut().unwrap().push(extra);
    let corrupted: Vec<String> = lines.iter().map(|v| v.to_string()).collect();
    fs::write(&log, corrupted.join("\n") + "\n").unwrap();

    let bad = cosr(&["verify", "--out", out.to_str().unwrap()]);
    assert!(!bad.status.success());
    let report = String::from_utf8_lossy(&bad.stdout);
    assert!(report.contains("FAIL 0_poisson_UNC.jsonl"), "{report}");
    assert!(report.contains("nav:"), "{report}");
}

#[test]
fn missing_logs_are_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nolog");
    assert!(small_run(&out, &[]).status.success());
    assert!(!cosr(&["verify", "--out", out.to_str().unwrap()]).status.success());
}

#[test]
fn unsupported_scenario_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    // APs 200 m apart do not hear each other.
    let o = small_run(&dir.path().join("far"), &["--d-ap-ap", "200"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let o = cosr(&["plan", "--set", "num_bss=3"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn bad_config_is_rejected() {
    let o = cosr(&["plan", "--set", "no_such_key=1"]);
    assert_eq!(o.status.code(), Some(1));
    let o = cosr(&["plan", "--set", "cw_min=14"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    fs::write(&cfg, "[topology]\ninter_ap_distance = 20\n[simulation]\nsim_duration = 0.2\n").unwrap();
    let plan = |extra: &[&str]| {
        let mut args = vec!["plan", "--config", cfg.to_str().unwrap()];
        args.extend_from_slice(extra);
        String::from_utf8(cosr(&args).stdout).unwrap()
    };
    let reference = String::from_utf8(cosr(&["plan", "--d-ap-ap", "20"]).stdout).unwrap();
    assert_eq!(plan(&[]), reference);
    let closer = String::from_utf8(cosr(&["plan", "--d-ap-ap", "10"]).stdout).unwrap();
    assert_eq!(plan(&["--d-ap-ap", "10"]), closer);
    assert_eq!(plan(&["--d-ap-ap", "20", "--set", "inter_ap_distance=10"]), closer);
}

#[test]
fn output_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("env-root");
    let o = Command::new(env!("CARGO_BIN_EXE_cosr"))
        .args(["run", "--seeds", "1", "--policies", "DCF", "--traffic", "poisson", "--set", "sim_duration=0.2"])
        .env("COSR_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(root.join("runs.csv").exists());
    assert!(root.join("manifest.json").exists());
}

#[test]
fn calibrate_and_plan_print() {
    let o = cosr(&["calibrate", "--seed", "4", "--set", "sim_duration=0.2"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["per_sta_rate"].as_f64().unwrap() > 0.0);
    let o = cosr(&["plan", "--d-ap-ap", "15", "--symmetric", "-1,0;0,-1"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("0:0,1:2,2:4,3:6"), "{text}");
}
