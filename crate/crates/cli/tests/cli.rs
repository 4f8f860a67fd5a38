use std::path::Path;
use std::process::{Command, Output};

fn cablp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cablp")).args(args).output().unwrap()
}

fn write_config(dir: &Path) -> String {
    let cfg = serde_json::json!({
        "environment": {
            "family": "centered-quadratic",
            "params": { "center": [0.4] },
            "k": 1, "d": 6, "sigma": 0.05, "nu": 0.2, "seed": 0,
            "A": "random_orthonormal"
        },
        "mode": "practical",
        "plan": {
            "m_x": 6, "m_phi": 60, "n_resample": 1, "epsilon": 0.1,
            "lambda": { "rule": "relative", "fraction": 0.05 }
        },
        "horizons": [1000, 2000, 4000],
        "seeds": [1, 2],
        "output_dir": dir.join("out").to_str().unwrap()
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_writes_record_and_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("single");
    let o = cablp(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rec: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(rec["n"], 1000);
    assert_eq!(rec["env_seed"], 1);
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1001);
    assert!(std::fs::read_to_string(out.join("phase2.csv")).unwrap().starts_with("round,arm_id,y_1,reward"));
}

#[test]
fn sweep_then_fit_and_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("sweep");
    let o = cablp(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--seeds", "7:3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("exponent="));
    assert_eq!(std::fs::read_to_string(out.join("runs.csv")).unwrap().lines().count(), 10);
    assert!(out.join("regret.svg").exists());

    let runs = out.join("runs.csv");
    let o = cablp(&["fit", "--runs", runs.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(String::from_utf8(o.stdout).unwrap().contains("exponent="));

    let plot_dir = tmp.path().join("plot");
    let o = cablp(&["plot", "--runs", out.join("summary.json").to_str().unwrap(), "--out", plot_dir.to_str().unwrap()]);
    assert!(o.status.success());
    let svg = std::fs::read_to_string(plot_dir.join("regret.svg")).unwrap();
    assert_eq!(svg.matches("class=\"marker\"").count(), 3);
    assert!(svg.contains("class=\"fit-label\""));
}

#[test]
fn failed_cells_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("bad");
    let o = cablp(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--horizons", "100,2000"]);
    assert_eq!(o.status.code(), Some(2));
    let csv = std::fs::read_to_string(out.join("runs.csv")).unwrap();
    assert!(csv.contains("budget_infeasible"));
}

#[test]
fn config_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.json");
    assert_eq!(cablp(&["sweep", "--config", missing.to_str().unwrap()]).status.code(), Some(1));

    let cfg = write_config(tmp.path());
    assert_eq!(cablp(&["run", "--config", &cfg, "--horizons", "2000,1000"]).status.code(), Some(1));
    assert_eq!(cablp(&["run", "--config", &cfg, "--seeds", "3,3"]).status.code(), Some(1));
    assert_eq!(cablp(&["plan", "--config", &cfg, "--mode", "theory"]).status.code(), Some(1));
}

#[test]
fn plan_reports_theory_parameters() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let o = cablp(&["plan", "--config", &cfg, "--mode", "theory", "--alpha", "0.2", "--horizons", "1000000"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let p = &v[0]["params"];
    assert_eq!(p["inputs"]["n"], 1_000_000);
    assert_eq!(p["feasible"], false);
    assert!(p["m_phi"].as_u64().unwrap() > 1000);
}

#[test]
fn recover_and_conditioning() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path());
    let out = tmp.path().join("rec");
    let o = cablp(&["recover", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("recovery.json")).unwrap()).unwrap();
    assert_eq!(v["measurements"]["y"].as_array().unwrap().len(), 60);
    assert_eq!(v["measurements"]["budget_used"], 6 * 61);

    let o = cablp(&["conditioning", "--config", &cfg, "--samples", "2000"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["alpha_hat"].as_f64().unwrap() > 0.0);
}
