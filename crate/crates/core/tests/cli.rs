use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn doblab(args: &[&str], cfg: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_doblab"));
    cmd.args(args).env_remove("DOBLAB_SEED");
    if let Some(cfg) = cfg {
        cmd.arg(cfg);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn column(path: &Path, idx: usize) -> Vec<f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(idx).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn simulate_writes_golden_headers() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(
        tmp.path(),
        "c.json",
        &format!(r#"{{"output_dir": {:?}, "scenario": {{"steps": 50}}}}"#, out.display().to_string()),
    );
    let res = doblab(&["simulate"], Some(&cfg));
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(header(&out.join("trajectory.csv")), "step,t,d_true,x1,x2,y1,y2");
    for name in ["sise", "nkfdob", "kfdob", "mkckfdob", "immkfdob"] {
        let path = out.join(format!("estimates_{name}.csv"));
        assert_eq!(header(&path), "step,t,d_hat,d_cov,x1_hat,x2_hat");
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 51);
    }
}

#[test]
fn simulate_default_scenario_matches_sise() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(
        tmp.path(),
        "c.json",
        &format!(r#"{{"output_dir": {:?}}}"#, out.display().to_string()),
    );
    assert_eq!(doblab(&["simulate"], Some(&cfg)).status.code(), Some(0));
    let kf = column(&out.join("estimates_kfdob.csv"), 2);
    let sise = column(&out.join("estimates_sise.csv"), 2);
    assert_eq!(kf.len(), 2000);
    let gap = kf.iter().zip(&sise).skip(2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(gap <= 1e-3, "gap {gap}");
}

#[test]
fn negative_trials_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", "{\n  \"output_dir\": \"o\",\n  \"harness\": {\"trials\": -4}\n}\n");
    let res = doblab(&["sweep"], Some(&cfg));
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("harness.trials") && err.contains("c.json:3"), "{err}");
}

#[test]
fn empty_grid_and_missing_file_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"output_dir": "o", "harness": {"eta_grid": []}}"#);
    let res = doblab(&["sweep"], Some(&cfg));
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("eta_grid"));
    assert_eq!(doblab(&["simulate"], Some(&tmp.path().join("absent.json"))).status.code(), Some(2));
    let unknown = write_config(tmp.path(), "u.json", r#"{"output_dir": "o", "extra": 1}"#);
    assert_eq!(doblab(&["simulate"], Some(&unknown)).status.code(), Some(2));
}

#[test]
fn sweep_two_point_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(
        tmp.path(),
        "c.json",
        &format!(
            r#"{{"output_dir": {:?}, "scenario": {{"steps": 700}}, "estimators": [],
                "harness": {{"trials": 20, "window": [590, 640], "log_eta_grid": [0, 20]}}}}"#,
            out.display().to_string()
        ),
    );
    let res = doblab(&["sweep"], Some(&cfg));
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let sweep = out.join("sweep.csv");
    assert_eq!(header(&sweep), "eta,bias_sq,variance,perf_loss");
    let bias = column(&sweep, 1);
    let var = column(&sweep, 2);
    assert_eq!(bias.len(), 2);
    assert!(bias[1] < bias[0] && var[1] > var[0]);
    for i in 0..2 {
        assert_eq!(header(&out.join(format!("bias_std_kfdob_eta{i:02}.csv"))), "step,t,bias,std");
    }
    assert!(out.join("report.json").exists());
}

#[test]
fn seed_override_changes_output() {
    let tmp = tempfile::tempdir().unwrap();
    let body = |dir: &Path| {
        format!(
            r#"{{"output_dir": {:?}, "scenario": {{"steps": 30}}, "estimators": [{{"kind": "sise"}}]}}"#,
            dir.display().to_string()
        )
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let cfg_a = write_config(tmp.path(), "a.json", &body(&a));
    let cfg_b = write_config(tmp.path(), "b.json", &body(&b));
    assert_eq!(doblab(&["simulate"], Some(&cfg_a)).status.code(), Some(0));
    let res = Command::new(env!("CARGO_BIN_EXE_doblab"))
        .arg("simulate")
        .arg(&cfg_b)
        .env("DOBLAB_SEED", "99")
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(0));
    assert_ne!(fs::read(a.join("trajectory.csv")).unwrap(), fs::read(b.join("trajectory.csv")).unwrap());

    let bad = Command::new(env!("CARGO_BIN_EXE_doblab"))
        .arg("simulate")
        .arg(&cfg_b)
        .env("DOBLAB_SEED", "minus one")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn verify_passes_and_catches_injected_fault() {
    let ok = doblab(&["verify", "--trials", "10"], None);
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert_eq!(ok.status.code(), Some(0), "{stdout}");
    assert!(stdout.lines().filter(|l| l.starts_with("PASS")).count() >= 10);

    let bad = doblab(&["verify", "--trials", "10", "--inject-fault", "skip-joseph"], None);
    assert_eq!(bad.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&bad.stdout);
    assert!(stdout.contains("FAIL gain complement"), "{stdout}");
    assert!(stdout.contains("FAIL information form"), "{stdout}");
}

#[test]
fn bad_arguments_exit_two() {
    assert_eq!(doblab(&["--threads", "0", "verify"], None).status.code(), Some(2));
    assert_eq!(doblab(&["frobnicate"], None).status.code(), Some(2));
}
