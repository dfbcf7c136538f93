use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ckam::config::{parse_config, Command as RunCommand};
use ckam::detector::Formulation;
use ckam::foliation::Plane;

fn ckam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ckam"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn recipes() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../recipes")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr_error(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    v["error"].clone()
}

#[test]
fn scan_writes_csv_json_png() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = ckam(&[
        "scan", "--mu", "0.1", "--n-r", "10", "--n-l", "10", "--t-out", "10", "--out-dir", d,
        "--stem", "s", "--ratio", "9/4",
    ]);
    let summary = stdout_json(&out);
    assert_eq!(summary["cells"], 100);
    let csv = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert_eq!(csv.lines().count(), 101);
    assert_eq!(csv.lines().next().unwrap(), "i,j,r,L,classification,t_detect,q,lyapunov,C");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.json")).unwrap()).unwrap();
    assert_eq!(json["metadata"]["config"]["t_out"], 10.0);
    assert!(json["metadata"]["config_hash"].as_str().unwrap().len() == 64);
    assert!(dir.path().join("s.png").exists());
    let overlays = std::fs::read_to_string(dir.path().join("s_overlays.txt")).unwrap();
    assert!(overlays.contains("# resonance 9/4"));
}

#[test]
fn fixed_step_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let run = |stem: &str, workers: &str| {
        let out = ckam(&[
            "scan", "--mu", "0.1", "--n-r", "8", "--n-l", "8", "--t-out", "8", "--fixed-step",
            "0.01", "--out-dir", d, "--stem", stem, "--no-png", "--workers", workers,
        ]);
        stdout_json(&out);
        std::fs::read(dir.path().join(format!("{stem}.csv"))).unwrap()
    };
    assert_eq!(run("a", "1"), run("b", "3"));
}

#[test]
fn invalid_values_give_error_json_and_nonzero_exit() {
    let out = ckam(&["scan", "--mu", "0.1", "--t-out", "-5"]);
    let err = stderr_error(&out);
    assert_eq!(err["kind"], "config_invalid");
    assert!(err["message"].as_str().unwrap().contains("t_out"));
    assert_eq!(out.status.code(), Some(2));

    let out = ckam(&["scan", "--mu", "1.5"]);
    assert_eq!(stderr_error(&out)["kind"], "invalid_mass_ratio");

    let out = ckam(&["scan"]);
    assert_eq!(stderr_error(&out)["kind"], "invalid_argument");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "command = \"scan\"\nmu = 0.1\ntimeout = 4\n").unwrap();
    let out = ckam(&["scan", "-c", p.to_str().unwrap()]);
    let err = stderr_error(&out);
    assert_eq!(err["kind"], "config_parse");
    assert!(err["message"].as_str().unwrap().contains("timeout"));
}

#[test]
fn detect_reports_each_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = ckam(&[
        "detect", "--mu", "0.1", "--seed", "1.5,0.5", "--seed", "3.0,-1.5", "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    let v = stdout_json(&out);
    let results = v["results"].as_array().unwrap();
    assert_eq!(results.len(), 2);
    assert_eq!(results[0]["outcome"]["classification"], "nonexistence");
}

#[test]
fn pendulum_boundary_from_cli() {
    let dir = tempfile::tempdir().unwrap();
    let out = ckam(&[
        "pendulum", "--p-range", "0.55,2.95", "--n", "25", "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    let v = stdout_json(&out);
    // p0 = 0.55 + 0.1 k; below the separatrix p0 = 2 for k < 15
    assert_eq!(v["nonexistence"], 15);
    let csv = std::fs::read_to_string(dir.path().join("run_pendulum.csv")).unwrap();
    assert_eq!(csv.lines().count(), 26);
}

#[test]
fn overlays_list_one_block_per_curve() {
    let dir = tempfile::tempdir().unwrap();
    let out = ckam(&[
        "overlays", "--mu", "0.01", "--ratio", "12/11", "--ratio", "2", "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    let v = stdout_json(&out);
    let labels: Vec<&str> = v["curves"].as_array().unwrap().iter().map(|c| c.as_str().unwrap()).collect();
    assert!(labels.contains(&"resonance 12/11") && labels.contains(&"resonance 2"));
    let text = std::fs::read_to_string(dir.path().join("run_overlays.txt")).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("# ")).count(), labels.len());
}

#[test]
fn section_and_lyapunov_commands_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let v = stdout_json(&ckam(&["section", "--mu", "0.0", "--seed", "1.56,1.0", "--n-returns", "4", "--out-dir", d]));
    assert_eq!(v["orbits"][0]["crossings"], 4);
    let v = stdout_json(&ckam(&["lyapunov", "--mu", "0.1", "--seed", "1.0,0.5", "--out-dir", d]));
    assert!(v["results"][0]["estimate"]["value"].as_f64().unwrap().is_finite());
}

#[test]
fn reference_recipe_matches_reference_scan() {
    let text = std::fs::read_to_string(recipes().join("mu0.1_p0_general.toml")).unwrap();
    let cfg = parse_config(&text).unwrap();
    assert_eq!(cfg.command, RunCommand::Scan);
    assert_eq!(cfg.mu.mu(), 0.1);
    assert_eq!(cfg.t_out, 40.0);
    assert_eq!(cfg.formulation, Formulation::General);
    let spec = cfg.seed_spec();
    assert_eq!(spec.plane, Plane::Zero);
    assert_eq!(spec.r_range, [0.1, 4.0]);
    assert_eq!(spec.l_range, [-2.5, 2.5]);
    assert_eq!((spec.n_r, spec.n_l), (100, 100));
    let ratios: Vec<String> = cfg.winding_ratios.iter().map(|r| r.to_string()).collect();
    assert_eq!(ratios, ["9/4", "13/4", "17/4", "21/4"]);
}

#[test]
fn every_shipped_recipe_is_valid() {
    let mut n = 0;
    for entry in std::fs::read_dir(recipes()).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            let text = std::fs::read_to_string(&p).unwrap();
            parse_config(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 5);
}
