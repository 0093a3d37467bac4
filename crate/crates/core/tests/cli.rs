use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const REFERENCE: &str = r#"{"grid": {"h": 0.1}, "time": {"t_final": 0.01, "k": 0.002},
    "model": {"name": "paper_sec5"}}"#;

fn fkpp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fkpp"))
        .args(args)
        .current_dir(dir)
        .env_remove("FKPP_OUT_DIR")
        .output()
        .expect("run fkpp")
}

fn config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read_csv(path: &Path) -> (String, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let rows = lines
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn check_reports_admissibility() {
    let dir = TempDir::new().unwrap();
    let ok = config(&dir, "ok.json", REFERENCE);
    let out = fkpp(&["check", "--config", ok.to_str().unwrap()], dir.path());
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("admissible: true"));
    assert!(stdout.contains("d2"), "bound discrepancy note missing: {stdout}");

    let bad = config(&dir, "bad.json", &REFERENCE.replace("0.002", "0.0025"));
    let out = fkpp(&["check", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(code(&out), 1);
}

#[test]
fn usage_and_parse_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&fkpp(&["solve"], dir.path())), 2);
    assert_eq!(code(&fkpp(&["frobnicate"], dir.path())), 2);
    assert_eq!(code(&fkpp(&["check", "--config", "missing.json"], dir.path())), 2);
    let broken = config(&dir, "broken.json", "{\"grid\": ");
    assert_eq!(code(&fkpp(&["check", "--config", broken.to_str().unwrap()], dir.path())), 2);
    let unknown = config(&dir, "unknown.json", &REFERENCE.replace("\"grid\"", "\"gird\""));
    assert_eq!(code(&fkpp(&["check", "--config", unknown.to_str().unwrap()], dir.path())), 2);
}

#[test]
fn solve_writes_surfaces_and_manifest() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "ref.json", REFERENCE);
    let out = fkpp(&["solve", "--config", cfg.to_str().unwrap(), "--out-dir", "out"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (header, mean) = read_csv(&dir.path().join("out/mean.csv"));
    assert_eq!(header, "x,t,mean");
    assert_eq!(mean.len(), 66);
    // Level-major: the first 11 rows are t = 0.
    assert!(mean[..11].iter().all(|r| r[1] == 0.0));
    assert_eq!(mean[11][0], 0.0);
    assert_eq!(mean[65][..2], [1.0, 0.01]);
    let (header, std) = read_csv(&dir.path().join("out/std.csv"));
    assert_eq!(header, "x,t,std");
    assert_eq!(std.len(), 66);
    assert!(std.iter().all(|r| r[2] >= 0.0));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "solve");
    assert_eq!(manifest["sampler"]["method"], "collocation");
    assert_eq!(manifest["stepsize_report"]["admissible"], true);
}

#[test]
fn monte_carlo_flags_add_standard_error_column() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "ref.json", REFERENCE);
    let args = ["solve", "--config", cfg.to_str().unwrap(), "--out-dir", "mc", "--samples", "50", "--seed", "3"];
    assert_eq!(code(&fkpp(&args, dir.path())), 0);
    let (header, rows) = read_csv(&dir.path().join("mc/mean.csv"));
    assert_eq!(header, "x,t,mean,mc_standard_error");
    assert_eq!(rows.len(), 66);
    let manifest = std::fs::read_to_string(dir.path().join("mc/manifest.json")).unwrap();
    assert!(manifest.contains("\"master_seed\": 3"));
}

#[test]
fn deterministic_model_has_zero_std() {
    let dir = TempDir::new().unwrap();
    let text = REFERENCE.replace(
        "{\"name\": \"paper_sec5\"}",
        "{\"name\": \"paper_sec5\", \"reaction_law\": {\"law\": \"deterministic\", \"value\": 0.75}}",
    );
    let cfg = config(&dir, "det.json", &text);
    assert_eq!(code(&fkpp(&["solve", "--config", cfg.to_str().unwrap(), "--out-dir", "o"], dir.path())), 0);
    let (_, std) = read_csv(&dir.path().join("o/std.csv"));
    assert!(std.iter().all(|r| r[2] == 0.0));
}

#[test]
fn inadmissible_solve_needs_override() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "bad.json", &REFERENCE.replace("0.002", "0.0025"));
    let path = cfg.to_str().unwrap();
    let out = fkpp(&["solve", "--config", path, "--out-dir", "o"], dir.path());
    assert_eq!(code(&out), 1);
    assert!(!dir.path().join("o/mean.csv").exists());
    let out = fkpp(&["solve", "--config", path, "--out-dir", "o", "--allow-inadmissible"], dir.path());
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn output_directory_precedence() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "ref.json", REFERENCE);
    let path = cfg.to_str().unwrap();
    let run = |extra: &[&str], env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_fkpp"));
        cmd.args(["solve", "--config", path]).args(extra).current_dir(dir.path());
        match env {
            Some(v) => cmd.env("FKPP_OUT_DIR", v),
            None => cmd.env_remove("FKPP_OUT_DIR"),
        };
        assert!(cmd.output().unwrap().status.success());
    };
    run(&[], Some("from_env"));
    assert!(dir.path().join("from_env/mean.csv").exists());
    run(&["--out-dir", "from_flag"], Some("from_env2"));
    assert!(dir.path().join("from_flag/mean.csv").exists());
    assert!(!dir.path().join("from_env2").exists());
    let with_output = REFERENCE.replace("\"model\"", "\"output\": {\"dir\": \"from_config\"}, \"model\"");
    let cfg2 = config(&dir, "out.json", &with_output);
    let out = Command::new(env!("CARGO_BIN_EXE_fkpp"))
        .args(["solve", "--config", cfg2.to_str().unwrap()])
        .current_dir(dir.path())
        .env("FKPP_OUT_DIR", "from_env3")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("from_config/mean.csv").exists());
    run(&[], None);
    assert!(dir.path().join("fkpp-out/mean.csv").exists());
}

#[test]
fn validate_applies_threshold() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "ref.json", REFERENCE);
    let path = cfg.to_str().unwrap();
    let out = fkpp(&["validate", "--config", path, "--out-dir", "v"], dir.path());
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
    let (header, rows) = read_csv(&dir.path().join("v/errors.csv"));
    assert!(header.starts_with("x,exact_mean,numeric_mean,abs_err_mean"));
    assert_eq!(rows.len(), 11);
    assert!(rows.iter().all(|r| r[3] <= 2e-3 && r[6] <= 2e-3));
    let out = fkpp(&["validate", "--config", path, "--out-dir", "v", "--threshold", "1e-9"], dir.path());
    assert_eq!(code(&out), 1);
}

#[test]
fn validate_rejects_custom_models() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        &dir,
        "custom.json",
        r#"{"grid": {"n": 10}, "time": {"t_final": 0.01, "n_steps": 10},
            "model": {"name": "custom",
              "diffusion": {"shape": {"kind": "constant"}, "amplitude": {"law": "deterministic", "value": 1.0}},
              "advection": {"shape": {"kind": "constant"}, "amplitude": {"law": "deterministic", "value": 0.0}},
              "reaction": {"shape": {"kind": "constant"}, "amplitude": {"law": "deterministic", "value": 1.0}},
              "initial": {"shape": {"kind": "sin_pi_x"}},
              "boundary": {"left": {"kind": "constant", "value": 0.0}, "right": {"kind": "constant", "value": 0.0}}}}"#,
    );
    let path = cfg.to_str().unwrap();
    assert_eq!(code(&fkpp(&["solve", "--config", path, "--out-dir", "o"], dir.path())), 0);
    assert_eq!(code(&fkpp(&["validate", "--config", path, "--out-dir", "o"], dir.path())), 2);
}

#[test]
fn converge_writes_refinement_tables() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "ref.json", REFERENCE);
    let args = ["converge", "--config", cfg.to_str().unwrap(), "--out-dir", "c", "--levels", "3"];
    assert_eq!(code(&fkpp(&args, dir.path())), 0);
    for kind in ["temporal", "spatial"] {
        let text = std::fs::read_to_string(dir.path().join(format!("c/convergence_{kind}.csv"))).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "h,k,max_err_mean,observed_order");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].ends_with(','), "first row has no order: {}", lines[1]);
    }
    let spatial = std::fs::read_to_string(dir.path().join("c/convergence_spatial.csv")).unwrap();
    let last: Vec<f64> = spatial.lines().last().unwrap().split(',').map(|c| c.parse().unwrap()).collect();
    assert!(last[3] >= 1.8);
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        &dir,
        "mc.json",
        &REFERENCE.replace("\"model\"", "\"sampling\": {\"method\": \"monte_carlo\", \"n_samples\": 300, \"seed\": 7}, \"model\""),
    );
    let path = cfg.to_str().unwrap();
    for (out, threads) in [("a", "1"), ("b", "1"), ("c", "3")] {
        let args = ["solve", "--config", path, "--out-dir", out, "--threads", threads];
        assert_eq!(code(&fkpp(&args, dir.path())), 0);
    }
    for file in ["mean.csv", "std.csv"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        assert_eq!(a, std::fs::read(dir.path().join("b").join(file)).unwrap());
        assert_eq!(a, std::fs::read(dir.path().join("c").join(file)).unwrap());
    }
}
