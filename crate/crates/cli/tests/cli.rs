use std::path::Path;
use std::process::{Command, Output};

fn qfcsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qfcsim")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const SCENARIO: &str = r#"{
    "name": "cli",
    "seed": 9,
    "emitter": {"n_pulses": 2000000, "p_detect_per_pulse": 0.01, "beta": 0.7,
                "background_rate_cps": 100.0},
    "analysis": [
        {"kind": "lifetime", "bin_width_ps": 200, "window_ps": 60000, "fit_start_ps": 1000},
        {"kind": "g2"}
    ],
    "targets": [{"metric": "lifetime.tau_ns", "expected": 7.47, "abs_tol": 1.0}],
    "outputs": {"write_tags": true}
}"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn simulate_reports_targets_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "sc.json", SCENARIO);
    let out_dir = dir.path().join("run");
    let out = qfcsim(&["--out", out_dir.to_str().unwrap(), "simulate", &sc]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("lifetime.tau_ns") && text.contains("PASS"), "{text}");
    for f in ["summary.json", "lifetime_histogram.csv", "g2_g2.csv", "emitted.qtt"] {
        assert!(out_dir.join(f).is_file(), "missing {f}");
    }
}

#[test]
fn seed_flag_overrides_the_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "sc.json", SCENARIO);
    let run = |name: &str, seed: &str| {
        let d = dir.path().join(name);
        let out = qfcsim(&["--seed", seed, "--out", d.to_str().unwrap(), "simulate", &sc]);
        assert_eq!(out.status.code(), Some(0));
        std::fs::read(d.join("lifetime_histogram.csv")).unwrap()
    };
    assert_eq!(run("a", "9"), run("b", "9"));
    assert_ne!(run("a", "9"), run("c", "10"));
}

#[test]
fn missed_target_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "sc.json", &SCENARIO.replace("\"expected\": 7.47", "\"expected\": 20.0"));
    let out = qfcsim(&["--out", dir.path().join("run").to_str().unwrap(), "simulate", &sc]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("FAIL"));
}

#[test]
fn bad_configuration_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "sc.json", &SCENARIO.replace("\"beta\": 0.7", "\"beta\": 2.0"));
    let out = qfcsim(&["simulate", &sc]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    let out = qfcsim(&["simulate", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let junk = write(dir.path(), "junk.qtt", "not a tag file at all");
    let out = qfcsim(&["analyze", &junk, "--estimator", "histogram"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn estimator_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let mut empty = b"QTT1".to_vec();
    empty.extend_from_slice(&1u32.to_le_bytes());
    empty.extend_from_slice(&0u64.to_le_bytes());
    let path = dir.path().join("empty.qtt");
    std::fs::write(&path, empty).unwrap();
    let out_dir = dir.path().join("an");
    let out = qfcsim(&[
        "--out",
        out_dir.to_str().unwrap(),
        "analyze",
        path.to_str().unwrap(),
        "--estimator",
        "g2",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn analyze_reads_simulated_tags() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "sc.json", SCENARIO);
    let run = dir.path().join("run");
    assert_eq!(qfcsim(&["--out", run.to_str().unwrap(), "simulate", &sc]).status.code(), Some(0));
    let tags = run.join("emitted.qtt");
    let an = dir.path().join("an");
    let out = qfcsim(&[
        "--out",
        an.to_str().unwrap(),
        "analyze",
        tags.to_str().unwrap(),
        "--estimator",
        "lifetime",
        "--bin-width-ps",
        "200",
        "--window-ps",
        "60000",
        "--fit-start-ps",
        "1000",
        "--acquisition-s",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("tau = "));
    assert!(an.join("lifetime_fit.json").is_file());
    // the standalone histogram matches the one written by the scenario run
    assert_eq!(
        std::fs::read(an.join("histogram.csv")).unwrap(),
        std::fs::read(run.join("lifetime_histogram.csv")).unwrap()
    );

    let out = qfcsim(&["--out", an.to_str().unwrap(), "analyze", tags.to_str().unwrap(), "--estimator", "g2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("g2(0) = "));

    let out = qfcsim(&[
        "--out",
        an.to_str().unwrap(),
        "analyze",
        tags.to_str().unwrap(),
        "--estimator",
        "noise-density",
        "--acquisition-s",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(an.join("noise_density.json").is_file());
}

#[test]
fn sweep_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "sc.json", SCENARIO);
    let out_dir = dir.path().join("sw");
    let out = qfcsim(&[
        "--out",
        out_dir.to_str().unwrap(),
        "sweep",
        &sc,
        "--param",
        "emitter.beta",
        "--values",
        "0.5,1",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.starts_with("index,emitter.beta,"));
    assert!(out_dir.join("point_001/summary.json").is_file());
}
