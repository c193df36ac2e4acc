use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pdmp_ldp::calcium::{calcium_model, CalciumParams};
use pdmp_ldp::io::{path_table, sha256_hex};
use pdmp_ldp::{deterministic_limit, fixed_point};
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pdmp-ldp"));
    c.env_remove("PDMP_LDP_OUT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("stderr is one JSON object")
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
}

#[test]
fn simulate_reruns_are_byte_identical_and_fully_manifested() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let common = ["--set", "model.params.n=1000", "--set", "horizon=10", "--set", "seed=42"];
    for (dir, threads) in [(&a, "1"), (&b, "2")] {
        let mut args = vec!["simulate", "--out", dir.to_str().unwrap(), "--threads", threads];
        args.extend(common);
        let out = run(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(listing(&a), ["manifest.json", "simulate.csv", "simulate.json"]);
    for name in listing(&a) {
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name}");
    }
    let manifest = json(&a.join("manifest.json"));
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["config"]["model"]["params"]["n"], 1000);
    let files = manifest["files"].as_array().unwrap();
    assert_eq!(files.len(), 2);
    for f in files {
        let bytes = fs::read(a.join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["sha256"], sha256_hex(&bytes));
        assert_eq!(f["bytes"], bytes.len());
    }
}

#[test]
fn calcium_wave_at_the_fixed_point_has_zero_exponent() {
    let model = calcium_model(&CalciumParams::default()).unwrap();
    let x_star = fixed_point(&model, model.x0(), model.u0()).unwrap().x[0];
    let tmp = tempfile::tempdir().unwrap();
    let target = format!("model.params.x_target={x_star:.17e}");
    let out = run(&["calcium-wave", "--out", tmp.path().to_str().unwrap(), "--set", &target]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&tmp.path().join("calcium_wave.json"));
    assert!(report["J_star"].as_f64().unwrap().abs() <= 1e-8, "{}", report["J_star"]);
    assert_eq!(report["trajectory_files"][0], "calcium_wave_path.csv");
    assert!(tmp.path().join("calcium_wave_path.csv").exists());
}

#[test]
fn sweep_hits_thin_out_with_system_size() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "sweep",
        "--out",
        tmp.path().to_str().unwrap(),
        "--set",
        "horizon=1",
        "--set",
        "sweep.trials=100000",
        "--set",
        "sweep.sizes=[20,40,80]",
        "--set",
        "output.plot_data=true",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&tmp.path().join("sweep.json"));
    let rows = report["monte_carlo"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let hits: Vec<u64> = rows.iter().map(|r| r["hits"].as_u64().unwrap()).collect();
    assert!(hits.windows(2).all(|w| w[1] <= w[0]), "{hits:?}");
    assert!(hits[0] > hits[2], "{hits:?}");
    assert!(report["J_star"].as_f64().unwrap() > 0.0);
    let plot = fs::read_to_string(tmp.path().join("sweep_plot.csv")).unwrap();
    assert_eq!(plot.lines().filter(|l| l.starts_with("J_star,")).count(), 3);
}

#[test]
fn config_errors_list_every_offending_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.json");
    fs::write(&cfg, r#"{"horizon": 2, "simulate": {"trajectorys": 3}, "model": {"params": {"gama": 1}}}"#).unwrap();
    let out = run(&["simulate", "--config", cfg.to_str().unwrap(), "--set", "sweep.trials=0"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "config");
    let details: Vec<&str> = err["error"]["details"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(details.iter().any(|d| d.contains("simulate.trajectorys")), "{details:?}");
    assert!(details.iter().any(|d| d.contains("model.params.gama")), "{details:?}");

    fs::write(&cfg, "{}").unwrap();
    let out = run(&["sweep", "--config", cfg.to_str().unwrap(), "--set", "model.params.k_f=-1", "--set", "sweep.trials=0"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["details"].as_array().unwrap().len(), 2);

    let out = run(&["simulate", "--config", "/definitely/not/here.json"]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(stderr_json(&out)["error"]["kind"], "io");

    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = run(&["validate", "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));

    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solver_failures_exit_with_three_and_name_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "optimal-path",
        "--out",
        tmp.path().to_str().unwrap(),
        "--set",
        "horizon=5",
        "--set",
        "optimal_path.target=[0.999]",
        "--set",
        "optimal_path.shooting.max_iterations=2",
        "--set",
        "optimal_path.shooting.continuation_steps=0",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "solver");
    assert_eq!(err["error"]["stages"][0], "optimal path");
    assert_eq!(err["error"]["details"].as_array().unwrap().len(), 9);
}

#[test]
fn custom_model_optimal_path_and_action_from_a_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("poisson.json");
    fs::write(
        &cfg,
        r#"{
            "model": {"kind": "custom", "x0": [0.0], "scale": 50,
                      "reactions": [{"label": "arrival", "stoichiometry": [1], "rate_constant": 1.0}]},
            "horizon": 1.0,
            "optimal_path": {"target": [2.0], "collocation": {"nodes": 32}},
            "output": {"dir": "out", "plot_data": true}
        }"#,
    )
    .unwrap();
    let out = run(&["optimal-path", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("out");
    let report = json(&dir.join("optimal_path.json"));
    assert!((report["action"].as_f64().unwrap() - 0.386_294_361_119_890_6).abs() < 1e-6);
    assert!(report["collocation"]["relative_gap"].as_f64().unwrap() < 1e-3);
    assert_eq!(
        listing(&dir),
        ["collocation.csv", "manifest.json", "optimal_path.csv", "optimal_path.json", "optimal_path_plot.csv"]
    );

    // Action of the fluid limit written next to the config, resolved relative to it.
    let model = calcium_model(&CalciumParams::default()).unwrap();
    let path = deterministic_limit(&model, 2.0).unwrap().sample(401).unwrap();
    fs::write(tmp.path().join("flow.csv"), path_table(&path).to_csv()).unwrap();
    let cfg2 = tmp.path().join("action.json");
    fs::write(&cfg2, r#"{"action": {"path": "flow.csv"}}"#).unwrap();
    let env_out = tmp.path().join("from-env");
    let out = bin()
        .args(["action", "--config", cfg2.to_str().unwrap()])
        .env("PDMP_LDP_OUT", &env_out)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&env_out.join("action.json"));
    assert!(report["total"].as_f64().unwrap() < 1e-5, "{}", report["total"]);
    assert_eq!(report["nodes"], 401);
}

#[test]
fn ensemble_and_validate_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    let out = run(&[
        "simulate",
        "--out",
        dir,
        "--set",
        "simulate.trajectories=50",
        "--set",
        "model.params.n=200",
        "--set",
        "horizon=2",
        "--set",
        "output.plot_data=true",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let plot = fs::read_to_string(tmp.path().join("ensemble_plot.csv")).unwrap();
    assert!(plot.lines().any(|l| l.starts_with("x_1_upper,")));
    let out = run(&["validate", "--out", dir]);
    assert!(out.status.success());
    assert_eq!(json(&tmp.path().join("validate.json"))["passed"], true);
    let manifest = json(&tmp.path().join("manifest.json"));
    assert_eq!(manifest["command"], "validate");
}
