use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL_RUN: &str = r#"
mode = "minimum"
engine = "exact"
tau_max = 0.2
dtau = 1e-3
master_seed = 3
trajectories = 4
snapshot_every = 50

[geometry]
atoms = 100
sites = 100
illuminated = 100
odd_sites = 50

[cavity]
g0 = 1.0
g1 = 0.05
delta_a = -100.0
delta_p = 0.0
kappa = 1.0
eta = [0.0, 0.0]
a0 = [1.0, 0.0]
"#;

fn cli() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lattice-qmc"));
    cmd.env_remove("LATTICE_QMC_OUTPUT_DIR");
    cmd
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn verify_passes_and_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("report.json");
    let out = cli().args(["verify", "--json"]).arg(&json).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("all identities pass"));
    assert!(!text.contains("FAIL"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(json).unwrap()).unwrap();
    assert!(report.is_object() || report.is_array());
}

#[test]
fn injected_printed_minimum_rate_fails_verification() {
    let out = cli().args(["verify", "--inject-printed-minimum"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout(&out).contains("FAIL"));
}

#[test]
fn run_then_stats() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_RUN);
    let run_dir = dir.path().join("out");
    let out = cli().arg("run").arg("--config").arg(&config).arg("--output-dir").arg(&run_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("4 trajectories"));
    assert!(run_dir.join("manifest.json").exists());

    let out = cli().arg("stats").arg(&run_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stdout(&out).contains("count rate per unit tau"));
    let grid = fs::read_to_string(run_dir.join("stats_grid.csv")).unwrap();
    assert!(grid.starts_with("tau,mean_m,variance_m\n"));
    assert!(!grid.contains('\r'));
    let peaks = fs::read_to_string(run_dir.join("stats_peaks.csv")).unwrap();
    assert!(peaks.starts_with("trajectory,tau,m,argmax,predicted,deviation_steps\n"));
}

#[test]
fn flags_override_the_config_and_output_is_worker_independent() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_RUN);
    let mut dirs = Vec::new();
    for workers in ["1", "3"] {
        let run_dir = dir.path().join(format!("w{workers}"));
        let out = cli()
            .arg("run")
            .arg("--config")
            .arg(&config)
            .arg("--output-dir")
            .arg(&run_dir)
            .args(["--trajectories", "6", "--master-seed", "17", "--workers", workers])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        assert!(stdout(&out).contains("6 trajectories"));
        dirs.push(run_dir);
    }
    let a = fs::read(dirs[0].join("manifest.json")).unwrap();
    let b = fs::read(dirs[1].join("manifest.json")).unwrap();
    assert_eq!(a, b);
    let manifest: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(manifest["config"]["master_seed"], 17);
    assert_eq!(manifest["config"]["trajectories"], 6);
}

#[test]
fn output_dir_comes_from_flag_then_environment() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_RUN);
    let from_env = dir.path().join("env");
    let from_flag = dir.path().join("flag");

    let out = cli().arg("run").arg("--config").arg(&config).env("LATTICE_QMC_OUTPUT_DIR", &from_env).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(from_env.join("manifest.json").exists());

    let out = cli()
        .arg("run")
        .arg("--config")
        .arg(&config)
        .arg("--output-dir")
        .arg(&from_flag)
        .env("LATTICE_QMC_OUTPUT_DIR", dir.path().join("ignored"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(from_flag.join("manifest.json").exists());
    assert!(!dir.path().join("ignored").exists());
}

#[test]
fn invalid_configs_exit_with_status_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), &SMALL_RUN.replace("dtau = 1e-3", "dtau = -1e-3"));
    let out = cli().arg("run").arg("--config").arg(&bad).arg("--output-dir").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).starts_with("error:"));

    let unknown = write_config(dir.path(), &format!("colour = \"red\"\n{SMALL_RUN}"));
    let out = cli().arg("run").arg("--config").arg(&unknown).arg("--output-dir").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = cli().arg("stats").arg(dir.path().join("missing")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn strong_scattering_is_warned_about() {
    let dir = tempfile::tempdir().unwrap();
    let strong = SMALL_RUN.replace("a0 = [1.0, 0.0]", "a0 = [10000.0, 0.0]").replace("tau_max = 0.2", "tau_max = 0.01");
    let config = write_config(dir.path(), &strong);
    let out = cli().arg("run").arg("--config").arg(&config).arg("--output-dir").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stderr(&out).contains("warning: "));

    let config = write_config(dir.path(), SMALL_RUN);
    let out = cli().arg("run").arg("--config").arg(&config).arg("--output-dir").arg(dir.path().join("p")).output().unwrap();
    assert!(!stderr(&out).contains("warning"));
}

#[test]
fn purity_sweep_contains_the_threshold_row() {
    let out = cli().args(["purity-sweep", "--steps", "4", "--phi", "1.5707963267948966"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("alpha_abs,phi,alpha_sin_phi,purity,distinguishable"));
    let threshold = lines
        .map(|l| l.split(',').collect::<Vec<_>>())
        .find(|f| f[2] == "0.25")
        .expect("threshold row");
    let purity: f64 = threshold[3].parse().unwrap();
    assert!((purity - 0.8894).abs() < 1e-3);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    let out = cli().args(["purity-sweep", "--alpha-max", "2", "--output"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(fs::read_to_string(path).unwrap().lines().count() > 3 * 40);
}
