use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_asyncclip"));
    c.env_remove("ASYNCCLIP_OUT");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn text(o: &Output) -> (String, String) {
    (
        String::from_utf8_lossy(&o.stdout).into_owned(),
        String::from_utf8_lossy(&o.stderr).into_owned(),
    )
}

#[test]
fn run_writes_two_files_and_prints_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--config"])
        .arg(configs().join("sync_quadratic.toml"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    let (stdout, stderr) = text(&out);
    assert!(out.status.success(), "{stderr}");
    assert!(stdout.starts_with("mode=Synchronous policy=SgdClip T=100 min_gns="), "{stdout}");
    assert!(stdout.contains(" sim_time="));
    let mut files: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(files, ["rounds.csv", "summary.json"]);
}

#[test]
fn buffer_above_clients_fails_with_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--config"])
        .arg(configs().join("sync_quadratic.toml"))
        .arg("--out")
        .arg(dir.path())
        .args(["--set", "buffer_size=5"])
        .output()
        .unwrap();
    let (_, stderr) = text(&out);
    assert!(!out.status.success());
    assert!(stderr.contains("1 ≤ M ≤ N"), "{stderr}");
}

#[test]
fn dc_override_without_hessian_tracking_is_a_policy_violation() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--config"])
        .arg(configs().join("sync_quadratic.toml"))
        .arg("--out")
        .arg(dir.path())
        .args(["--set", "policy=Clip2DC"])
        .output()
        .unwrap();
    let (_, stderr) = text(&out);
    assert!(!out.status.success());
    assert!(stderr.to_lowercase().contains("policy"), "{stderr}");
    assert!(stderr.contains("track_hessian"), "{stderr}");
}

#[test]
fn seed_flag_and_env_output_root() {
    let root = tempfile::tempdir().unwrap();
    let run = |seed: &str| {
        let out = bin()
            .env("ASYNCCLIP_OUT", root.path().join(seed))
            .args(["run", "--config"])
            .arg(configs().join("heavy_tail_async.toml"))
            .args(["--seed", seed, "--set", "rounds=20"])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", text(&out).1);
        fs::read_to_string(root.path().join(seed).join("heavy_tail_async/rounds.csv")).unwrap()
    };
    let a = run("1");
    let b = run("2");
    assert_ne!(a, b);
    assert_eq!(a.lines().count(), 21);
}

#[test]
fn missing_config_is_reported() {
    let out = bin()
        .args(["run", "--config", "/nonexistent/cfg.toml"])
        .output()
        .unwrap();
    let (_, stderr) = text(&out);
    assert!(!out.status.success());
    assert!(stderr.contains("/nonexistent/cfg.toml"), "{stderr}");
}

#[test]
fn sweep_reports_grid_size_and_best_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["sweep", "--config"])
        .arg(configs().join("sweep_sgdclip.toml"))
        .arg("--out")
        .arg(dir.path())
        .args(["--parallel", "4", "--set", "rounds=30"])
        .output()
        .unwrap();
    let (stdout, stderr) = text(&out);
    assert!(out.status.success(), "{stderr}");
    assert!(stdout.starts_with("grid: 64 points x 3 seeds = 192 runs"), "{stdout}");
    assert!(stdout.contains("best=point_"), "{stdout}");
    assert!(dir.path().join("index.json").exists());
    assert!(dir.path().join("point_0063/seed_3/summary.json").exists());
}

#[test]
fn accept_runs_selected_criteria() {
    let out = bin().args(["accept", "A1", "a2"]).output().unwrap();
    let (stdout, _) = text(&out);
    assert!(out.status.success(), "{stdout}");
    let lines: Vec<_> = stdout.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("A1  PASS"));
    assert!(lines[1].starts_with("A2  PASS"));

    let out = bin().args(["accept", "A99"]).output().unwrap();
    assert!(!out.status.success());
}
