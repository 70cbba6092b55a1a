use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn gptraj(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gptraj"))
        .args(args)
        .env_remove("GPTRAJ_WORKERS")
        .output()
        .expect("binary runs")
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_string()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn missing_mode_is_a_config_error() {
    let o = gptraj(&[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mode"));
}

#[test]
fn bad_value_names_the_field() {
    let o = gptraj(&["--mode", "gp-dist", "--theta-pi-units", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("params.theta_pi_units"));
}

#[test]
fn unknown_key_in_file_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "mode = \"gp-dist\"\n[params]\nomega = 0.1\n").unwrap();
    let o = gptraj(&["--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn coarse_step_trips_the_numerical_guard() {
    let tmp = TempDir::new().unwrap();
    let o = gptraj(&["--mode", "gp-dist", "--dt", "2.0", "--ntraj", "4", "--out", &out_arg(tmp.path())]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn gp_dist_writes_hashed_tables() {
    let tmp = TempDir::new().unwrap();
    let o = gptraj(&["--mode", "gp-dist", "--ntraj", "100", "--out", &out_arg(tmp.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(tmp.path());
    let hash = m["manifest_sha256"].as_str().unwrap();
    let csv = fs::read_to_string(tmp.path().join("gp_histogram.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), format!("# manifest_sha256={hash}"));
    assert_eq!(lines.next().unwrap(), "bin_center_rad,count,probability");
    assert_eq!(lines.count(), 200);
    assert_eq!(m["run"]["results"]["ensemble"]["n_traj"], 100);
    assert!(m["run"]["results"]["ensemble"]["mean_jumps"].as_f64().unwrap() > 0.0);
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    // More than one stream block, so the split actually differs.
    let common = ["--mode", "gp-dist", "--ntraj", "600", "--seed", "7"];
    for (dir, w) in [(&a, "1"), (&b, "8")] {
        let mut args = common.to_vec();
        let out = out_arg(dir.path());
        args.extend(["--workers", w, "--out", &out]);
        assert!(gptraj(&args).status.success());
    }
    let read = |d: &TempDir| fs::read(d.path().join("gp_histogram.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_eq!(manifest(a.path())["manifest_sha256"], manifest(b.path())["manifest_sha256"]);
    assert_eq!(manifest(b.path())["workers"], 8);
}

#[test]
fn lindblad_check_stays_within_bound() {
    let tmp = TempDir::new().unwrap();
    let o = gptraj(&["--mode", "lindblad-check", "--ntraj", "1000", "--out", &out_arg(tmp.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = &manifest(tmp.path())["run"]["results"];
    let (worst, bound) = (r["max_trace_distance"].as_f64().unwrap(), r["bound"].as_f64().unwrap());
    assert!(worst < bound, "{worst} >= {bound}");
    let csv = fs::read_to_string(tmp.path().join("lindblad_check.csv")).unwrap();
    assert_eq!(csv.lines().nth(1), Some("time,trace_distance"));
}

#[test]
fn phase_diagram_finds_the_singular_point() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("pd.toml");
    fs::write(
        &cfg,
        "mode = \"phase-diagram\"\n[window]\nomega = { from = 4.79e-3, to = 4.826e-3, points = 5 }\n\
         gamma = { from = 0.0303, to = 0.0309, points = 5 }\n",
    )
    .unwrap();
    let out = tmp.path().join("out");
    let o = gptraj(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cells = fs::read_to_string(out.join("phase_diagram.csv")).unwrap();
    assert_eq!(cells.lines().skip(2).count(), 25);
    assert_eq!(cells.lines().filter(|l| l.ends_with(",1")).count(), 1);
    let roots = manifest(&out)["run"]["results"]["singularities"].as_array().unwrap().clone();
    assert_eq!(roots.len(), 1);
    assert!(roots[0]["survival"].as_f64().unwrap() < 1e-6);
}

#[test]
fn sweep_is_required_for_omega_modes() {
    let o = gptraj(&["--mode", "echo-vs-omega"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sweep"));
}
