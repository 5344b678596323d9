use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_prefix-sls");

fn identity(n: usize, scale: f64) -> Value {
    json!((0..n).map(|i| (0..n).map(|j| if i == j { scale } else { 0.0 }).collect::<Vec<_>>()).collect::<Vec<_>>())
}

fn drift_h2(horizon: usize) -> Value {
    json!({
        "model": "admire_drift",
        "language": {"fault_model": {"horizon": horizon, "include_never_faulty": false}},
        "problem": "h2",
        "noise": {"gaussian": {"scale": 1.0}},
        "cost": {"q": identity(3, 1.0), "r": identity(4, 2.0)},
        "runs": 20,
        "seed": 3
    })
}

fn sensor_l1(horizon: usize) -> Value {
    json!({
        "model": "admire_sensor",
        "language": {"fault_model": {"horizon": horizon, "include_never_faulty": true}},
        "problem": "l1",
        "noise": {"bounded": {"w_bar": 1.0, "v_bar": 1.0}},
        "runs": 20,
        "seed": 5
    })
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self { dir: TempDir::new().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self, name: &str, mut scenario: Value) -> PathBuf {
        scenario["output_dir"] = json!(self.path(&format!("{name}_out")));
        let path = self.path(&format!("{name}.json"));
        fs::write(&path, serde_json::to_string_pretty(&scenario).unwrap()).unwrap();
        path
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(BIN).args(args).current_dir(self.dir.path()).output().unwrap()
    }
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process exited normally")
}

fn error_report(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|_| panic!("stderr {}", String::from_utf8_lossy(&out.stderr)))
}

#[test]
fn synth_writes_solution_and_diagnostics() {
    let ws = Workspace::new();
    let cfg = ws.config("drift", drift_h2(3));
    let out = ws.run(&["synth", "--config", arg(&cfg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let sol = read_json(&ws.path("drift_out/solution.json"));
    assert_eq!(sol["problem"], "h2");
    assert!(sol["objective"].as_f64().unwrap() > 0.0);
    assert_eq!(sol["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(sol["signal_values"].as_array().unwrap().len(), 4);
    let diag = read_json(&ws.path("drift_out/diagnostics.json"));
    assert!(diag["max_affine_residual"].as_f64().unwrap() < 1e-8);
}

#[test]
fn simulation_is_reproducible_for_a_fixed_seed() {
    let ws = Workspace::new();
    let cfg = ws.config("drift", drift_h2(3));
    assert_eq!(code(&ws.run(&["synth", "--config", arg(&cfg)])), 0);
    let sol = ws.path("drift_out/solution.json");
    let run = |dir: &str, seed: &str| {
        let out = ws.path(dir);
        let o =
            ws.run(&["simulate", "--config", arg(&cfg), "--solution", arg(&sol), "--out", arg(&out), "--seed", seed]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out.join("traces.csv")).unwrap()
    };
    let (a, b, c) = (run("a", "11"), run("b", "11"), run("c", "12"));
    assert_eq!(a, b);
    assert_ne!(a, c);
    let manifest = read_json(&ws.path("a/manifest.json"));
    assert_eq!(manifest["rng"], "ChaCha8");
    assert_eq!(manifest["seed"], 11);
    let header = String::from_utf8(a).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "controller,time,signal_id,signal,run,cost,state_inf_norm,x1,x2,x3,u1,u2,u3,u4");
}

#[test]
fn solution_from_another_scenario_is_rejected() {
    let ws = Workspace::new();
    let cfg = ws.config("drift", drift_h2(3));
    assert_eq!(code(&ws.run(&["synth", "--config", arg(&cfg)])), 0);
    let mut changed = drift_h2(3);
    changed["delay"] = json!(1);
    let other = ws.config("delayed", changed);
    let sol = ws.path("drift_out/solution.json");
    let out = ws.run(&["simulate", "--config", arg(&other), "--solution", arg(&sol)]);
    assert_eq!(code(&out), 4);
    assert_eq!(error_report(&out)["exit_code"], 4);
}

#[test]
fn invalid_scenarios_exit_with_config_errors() {
    let ws = Workspace::new();
    let mut unknown = drift_h2(2);
    unknown["colour"] = json!("blue");
    let mut mismatched = drift_h2(2);
    mismatched["noise"] = json!({"bounded": {"w_bar": 1.0, "v_bar": 1.0}});
    let mut no_runs = sensor_l1(2);
    no_runs["runs"] = json!(0);
    for (name, scenario) in [("unknown", unknown), ("mismatched", mismatched), ("no_runs", no_runs)] {
        let cfg = ws.config(name, scenario);
        let out = ws.run(&["synth", "--config", arg(&cfg)]);
        assert_eq!(code(&out), 2, "{name}");
        assert_eq!(error_report(&out)["error"], "config", "{name}");
    }
    let out = ws.run(&["synth", "--config", arg(&ws.path("missing.json"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn noiseless_h2_has_zero_cost() {
    let ws = Workspace::new();
    let mut scenario = drift_h2(2);
    scenario["noise"] = json!({"gaussian": {"scale": 0.0}});
    let cfg = ws.config("quiet", scenario);
    let out = ws.run(&["synth", "--config", arg(&cfg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_json(&ws.path("quiet_out/solution.json"))["objective"].as_f64().unwrap(), 0.0);
}

#[test]
fn identical_modes_make_the_baseline_optimal() {
    let ws = Workspace::new();
    let mode = json!({"a": [[0.9, 0.2], [0.0, 1.1]], "b": [[0.0], [1.0]], "c": [[1.0, 0.0]]});
    let scenario = json!({
        "model": {"modes": [mode, mode]},
        "language": {"fault_model": {"horizon": 3, "include_never_faulty": true}},
        "problem": "h2",
        "noise": {"gaussian": {"scale": 1.0}},
        "cost": {"q": identity(2, 1.0), "r": identity(1, 1.0)},
        "runs": 10
    });
    let cfg = ws.config("same", scenario);
    let out = ws.run(&["compare", "--config", arg(&cfg), "--format", "json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(&ws.path("same_out/summary.json"));
    let prefix = summary["objectives"]["prefix"].as_f64().unwrap();
    let nominal = summary["objectives"]["nominal"].as_f64().unwrap();
    assert!((prefix - nominal).abs() <= 1e-8 * nominal, "{prefix} vs {nominal}");
    assert!(ws.path("same_out/traces.json").exists());
    assert!(ws.path("same_out/stats.json").exists());
}

#[test]
fn reported_worst_signal_is_the_binding_one() {
    let ws = Workspace::new();
    let cfg = ws.config("sensor", sensor_l1(3));
    assert_eq!(code(&ws.run(&["synth", "--config", arg(&cfg)])), 0);
    let sol = read_json(&ws.path("sensor_out/solution.json"));
    let objective = sol["objective"].as_f64().unwrap();
    let worst = sol["worst_signal"].as_str().unwrap();
    let values = sol["signal_values"].as_array().unwrap();
    let max = values.iter().map(|v| v[1].as_f64().unwrap()).fold(0.0, f64::max);
    assert!((max - objective).abs() < 1e-12);
    let binding = values.iter().find(|v| v[0] == worst).unwrap()[1].as_f64().unwrap();
    assert!((binding - objective).abs() < 1e-12);
}

#[test]
fn l1_compare_certifies_the_prefix_bound() {
    let ws = Workspace::new();
    let cfg = ws.config("sensor", sensor_l1(3));
    let out = ws.run(&["compare", "--config", arg(&cfg)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(&ws.path("sensor_out/summary.json"));
    assert_eq!(summary["certificate"]["prefix_within_bound"], true);
    assert!(summary["objectives"]["prefix"].as_f64() <= summary["objectives"]["memoryless"].as_f64());
    let stats = fs::read_to_string(ws.path("sensor_out/stats.csv")).unwrap();
    assert!(stats.lines().any(|l| l.starts_with("memoryless,all,")));
}

#[test]
fn check_passes_on_admire_dimensions() {
    let ws = Workspace::new();
    let cfg = ws.config("drift", drift_h2(3));
    let out = ws.run(&["check", "--config", arg(&cfg), "--runs", "10"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let report = read_json(&ws.path("drift_out/check.json"));
    assert!(report.to_string().contains("\"failures\":0"));
    assert!(!String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn exported_controller_lists_every_gain_entry() {
    let ws = Workspace::new();
    let cfg = ws.config("sensor", sensor_l1(2));
    assert_eq!(code(&ws.run(&["synth", "--config", arg(&cfg)])), 0);
    let sol_path = ws.path("sensor_out/solution.json");
    let out = ws.run(&["export-controller", "--config", arg(&cfg), "--solution", arg(&sol_path)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let sol = read_json(&sol_path);
    let entries: usize = sol["nodes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|n| n["gain"].as_array().unwrap().iter().map(|r| r.as_array().unwrap().len()).sum::<usize>())
        .sum();
    let csv = fs::read_to_string(ws.path("sensor_out/controller.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "depth,prefix,row,col,value");
    assert_eq!(csv.lines().count(), entries + 1);
}
