use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_hyperflow");

const SMALL_GRID: [&str; 2] = ["grid_nodes=17", "grid_spacing=0.0625"];
const SMALL_DATA: [&str; 5] = ["n_train=64", "n_test=32", "hidden=8", "batch_size=16", "seeds=[0, 1, 2]"];

fn run(command: &str, out: &Path, sets: &[&str], extra: &[&str]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.arg(command).arg("--out").arg(out).args(extra);
    for s in sets {
        cmd.arg("--set").arg(s);
    }
    cmd.output().expect("failed to launch hyperflow")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("terminated by signal")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn with<'a>(base: &[&'a str], more: &[&'a str]) -> Vec<&'a str> {
    base.iter().chain(more).copied().collect()
}

#[test]
fn short_flow_writes_samples_and_summary() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("flow");
    let o = run("flow", &out, &with(&SMALL_GRID, &["t_max=0.02"]), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = json(&out.join("summary.json"));
    assert!(s["steps"].as_u64().unwrap() > 0);
    assert!(s["l2_dist_sq_final"].as_f64().unwrap() < s["l2_dist_sq_initial"].as_f64().unwrap());
    let mut rows = csv::Reader::from_path(out.join("flow.csv")).unwrap();
    assert!(rows.records().count() >= 2);
    assert!(!out.join(".lock").exists());
}

#[test]
fn unperturbed_flow_is_converged_at_start() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("flow");
    let o = run("flow", &out, &with(&SMALL_GRID, &["bump_amplitude=0.0"]), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = json(&out.join("summary.json"));
    assert_eq!(s["converged"], Value::Bool(true));
    assert_eq!(s["t_final"].as_f64().unwrap(), 0.0);
}

#[test]
fn large_perturbation_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let o = run("flow", &tmp.path().join("flow"), &with(&SMALL_GRID, &["bump_amplitude=0.5"]), &[]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn flat_metric_has_zero_curvature() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("curv");
    let o = run("curvature", &out, &with(&SMALL_GRID, &["metric=flat"]), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = json(&out.join("curvature.json"));
    assert_eq!(s["pass"], Value::Bool(true));
    assert!(s["ricci_error"].as_f64().unwrap() < 1e-12);
}

#[test]
fn coarse_grid_fails_curvature_with_spacing_hint() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("curv");
    let o = run("curvature", &out, &["grid_nodes=9", "grid_spacing=0.125"], &[]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("spacing"), "{}", stderr(&o));
    assert_eq!(json(&out.join("curvature.json"))["pass"], Value::Bool(false));
}

#[test]
fn gradcheck_passes_on_small_smooth_network() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("gc");
    let o = run("gradcheck", &out, &with(&SMALL_DATA, &["activation=tanh"]), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&out.join("gradcheck.json"));
    assert!(r["plain"]["max_rel_error"].as_f64().unwrap() < 1e-5);
}

#[test]
fn zero_epochs_write_header_only() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("train");
    let o = run("train", &out, &with(&SMALL_DATA, &["epochs=0"]), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut rows = csv::Reader::from_path(out.join("epochs.csv")).unwrap();
    assert!(!rows.headers().unwrap().is_empty());
    assert_eq!(rows.records().count(), 0);
    assert_eq!(json(&out.join("summary.json"))["epochs"].as_u64(), Some(0));
}

#[test]
fn training_defaults_to_small_curvature() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("train");
    let o = run("train", &out, &with(&SMALL_DATA, &["epochs=0"]), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let echoed: toml::Table = toml::from_str(&fs::read_to_string(out.join("config.toml")).unwrap()).unwrap();
    assert_eq!(echoed["r"].as_float(), Some(0.01));
}

#[test]
fn compare_reports_one_pair_per_seed() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("cmp");
    let o = run("compare", &out, &with(&SMALL_DATA, &["epochs=2"]), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&out.join("report.json"));
    assert_eq!(r["pairs"].as_array().unwrap().len(), 3);
    for seed in 0..3 {
        for arm in ["hyperbolic", "euclidean"] {
            let mut rows = csv::Reader::from_path(out.join(format!("{arm}_seed{seed}.csv"))).unwrap();
            assert_eq!(rows.records().count(), 2);
        }
    }
}

#[test]
fn config_file_is_overridden_by_set_and_seed() {
    let tmp = TempDir::new().unwrap();
    let file = tmp.path().join("run.toml");
    fs::write(&file, "version = 1\nepochs = 3\nseed = 7\nhidden = 4\n").unwrap();
    let out = tmp.path().join("train");
    let extra = ["--config", file.to_str().unwrap(), "--seed", "11"];
    let o = run("train", &out, &with(&SMALL_DATA, &["epochs=0"]), &extra);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let echoed: toml::Table = toml::from_str(&fs::read_to_string(out.join("config.toml")).unwrap()).unwrap();
    assert_eq!(echoed["epochs"].as_integer(), Some(0));
    assert_eq!(echoed["seed"].as_integer(), Some(11));
    assert_eq!(echoed["hidden"].as_integer(), Some(8));
}

#[test]
fn bad_configs_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    for sets in [&["no_such_key=1"][..], &["version=2"], &["grad_clip=0"], &["epochs"]] {
        let o = run("train", &tmp.path().join("bad"), sets, &[]);
        assert_eq!(code(&o), 2, "{sets:?}: {}", stderr(&o));
    }
}

#[test]
fn held_lock_is_refused_and_left_alone() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("busy");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(".lock"), "").unwrap();
    let o = run("curvature", &out, &with(&SMALL_GRID, &["metric=flat"]), &[]);
    assert_eq!(code(&o), 1);
    assert!(out.join(".lock").exists());
    assert!(!out.join("curvature.json").exists());
}
