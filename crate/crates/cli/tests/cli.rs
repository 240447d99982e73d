use std::path::Path;
use std::process::{Command, Output};

use exclusion::integrator::Trajectory;
use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exclusion"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let o = run(dir, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn read_traj(path: &Path) -> Trajectory {
    Trajectory::read_csv(path).unwrap()
}

#[test]
fn zero_population_has_zero_mass_column() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["--out", "o", "simulate", "--scenario", "zero_i0", "--grid", "401", "--t-end", "20"]);
    let tr = read_traj(&d.path().join("o/trajectory.csv"));
    assert!(tr.samples.len() > 10);
    assert!(tr.samples.iter().all(|s| s.total_mass == 0.0));
}

#[test]
fn single_atom_reduced_matches_direct() {
    let d = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({"solver": {"rel_tol": 1e-11, "abs_tol": 1e-13}});
    std::fs::write(d.path().join("tight.json"), cfg.to_string()).unwrap();
    let base = ["--config", "tight.json", "simulate", "--scenario", "single_atom", "--t-end", "50", "--samples", "200"];
    ok(d.path(), &[&["--out", "r"], &base[..]].concat());
    ok(d.path(), &[&["--out", "d"], &base[..], &["--direct"]].concat());
    let (r, x) = (read_traj(&d.path().join("r/trajectory.csv")), read_traj(&d.path().join("d/trajectory.csv")));
    assert_eq!(r.samples.len(), x.samples.len());
    for (a, b) in r.samples.iter().zip(&x.samples) {
        assert_eq!(a.t, b.t);
        assert!((a.s - b.s).abs() <= 1e-8, "S at {}: {} vs {}", a.t, a.s, b.s);
        assert!((a.total_mass - b.total_mass).abs() <= 1e-8, "mass at {}", a.t);
    }
}

#[test]
fn trajectory_csv_round_trips() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["--out", "o", "simulate", "--scenario", "fig7", "--grid", "801", "--t-end", "30"]);
    let text = std::fs::read_to_string(d.path().join("o/trajectory.csv")).unwrap();
    let tr = Trajectory::from_csv(&text).unwrap();
    assert_eq!(tr.to_csv(), text);
}

#[test]
fn snapshots_are_written_at_requested_times() {
    let d = tempfile::tempdir().unwrap();
    ok(
        d.path(),
        &["--out", "o", "simulate", "--scenario", "finite2", "--t-end", "10", "--samples", "7", "--snapshots", "2.5,10"],
    );
    let tr = read_traj(&d.path().join("o/trajectory.csv"));
    assert!(tr.samples.iter().any(|s| s.t == 2.5));
    for t in ["2.5", "10"] {
        let v = json(&d.path().join(format!("o/snapshot_t{t}.json")));
        assert_eq!(v["spec_version"], "1.0");
        assert_eq!(v["points"].as_array().unwrap().len(), 2);
    }
    let last = tr.last();
    let snap = exclusion::measures::DiscreteMeasure::read_json(d.path().join("o/snapshot_t10.json")).unwrap();
    assert!((snap.total_mass() - last.total_mass).abs() < 1e-12);
}

#[test]
fn built_scenario_file_reproduces_builtin() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["build", "--name", "fig7_1d", "--grid", "401", "--out", "scenario.json"]);
    assert_eq!(json(&d.path().join("scenario.json"))["spec_version"], "1.0");
    let args = ["simulate", "--t-end", "40", "--samples", "40"];
    ok(d.path(), &[&["--out", "a"], &args[..], &["--scenario", "scenario.json"]].concat());
    ok(d.path(), &[&["--out", "b"], &args[..], &["--scenario", "fig7", "--grid", "401"]].concat());
    let a = std::fs::read_to_string(d.path().join("a/trajectory.csv")).unwrap();
    let b = std::fs::read_to_string(d.path().join("b/trajectory.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn config_file_drives_simulate() {
    let d = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({
        "scenario": "finite3",
        "solver": {"t_end": 5.0, "sampling": {"kind": "uniform", "n": 5}},
        "outputs": {"trajectory": "traj.csv"}
    });
    std::fs::write(d.path().join("run.json"), cfg.to_string()).unwrap();
    ok(d.path(), &["--config", "run.json", "--out", "o", "simulate"]);
    let tr = read_traj(&d.path().join("o/traj.csv"));
    assert_eq!(tr.times(), vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
}

#[test]
fn subcritical_verify_passes_extinction() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), &["--out", "o", "verify", "--scenario", "subcritical", "--grid", "801"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let rep = json(&d.path().join("o/report.json"));
    assert_eq!(rep["spec_version"], "1.0");
    let clauses = rep["scenarios"][0]["clauses"].as_array().unwrap();
    let ext = clauses.iter().find(|c| c["name"] == "omega.extinction").unwrap();
    assert_eq!(ext["pass"], true);
}

fn exponent_clauses(dir: &Path, scenario: &str) -> (Option<i32>, Vec<Value>) {
    let cfg = serde_json::json!({
        "verify": {"rho": false, "selfsimilar": false, "omega": false, "metric_oracle": false}
    });
    std::fs::write(dir.join("exp.json"), cfg.to_string()).unwrap();
    let o = run(dir, &["--config", "exp.json", "--out", "o", "verify", "--scenario", scenario]);
    let rep = json(&dir.join("o/report.json"));
    let cl = rep["scenarios"][0]["clauses"].as_array().unwrap().clone();
    (o.status.code(), cl)
}

#[test]
fn misdeclared_vanishing_order_fails_exponent_clause() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["build", "--name", "fig7", "--out", "fig7.json"]);
    let (_, good) = exponent_clauses(d.path(), "fig7.json");
    let j = good.iter().find(|c| c["name"] == "exponent_1").unwrap();
    assert_eq!(j["pass"], true, "{j}");

    let mut sc = json(&d.path().join("fig7.json"));
    sc["maxima"][0]["kappa"] = 2.0.into();
    std::fs::write(d.path().join("bad.json"), sc.to_string()).unwrap();
    let (code, bad) = exponent_clauses(d.path(), "bad.json");
    assert_eq!(code, Some(1));
    let j = bad.iter().find(|c| c["name"] == "exponent_1").unwrap();
    assert_eq!(j["pass"], false, "{j}");
}

#[test]
fn runtime_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(run(d.path(), &["simulate", "--scenario", "no_such_thing"]).status.code(), Some(2));
    assert_eq!(run(d.path(), &["simulate", "--scenario", "fig7", "--t-end", "-1"]).status.code(), Some(2));
    let o = run(d.path(), &["--out", "o", "verify", "--scenario", "finite2", "--scenario", "nope.json"]);
    assert_eq!(o.status.code(), Some(2));
    let rep = json(&d.path().join("o/report.json"));
    assert!(rep["scenarios"][1]["error"].is_string());
}

#[test]
fn metric_command_reports_distances() {
    let d = tempfile::tempdir().unwrap();
    let m = |pts: &[f64], w: &[f64]| {
        serde_json::json!({
            "dim": 1, "kind": "atomic",
            "points": pts.iter().map(|p| vec![*p]).collect::<Vec<_>>(),
            "weights": w
        })
        .to_string()
    };
    std::fs::write(d.path().join("mu.json"), m(&[0.0], &[1.0])).unwrap();
    std::fs::write(d.path().join("nu.json"), m(&[0.3], &[1.0])).unwrap();
    std::fs::write(d.path().join("k.json"), "[[0.25]]").unwrap();
    ok(d.path(), &["--out", "o", "metric", "--mu", "mu.json", "--nu", "nu.json", "--set", "k.json", "--exact"]);
    let v = json(&d.path().join("o/metric.json"));
    assert_eq!(v["spec_version"], "1.0");
    assert!((v["d0"].as_f64().unwrap() - 0.3).abs() < 1e-12);
    assert!((v["w1_1d"].as_f64().unwrap() - 0.3).abs() < 1e-12);
    assert!((v["av"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert!((v["concentration"]["upper"].as_f64().unwrap() - 0.25).abs() < 1e-9);
}

#[test]
fn predict_countable_reports_both_limits() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["--out", "o", "predict", "--scenario", "countable_truncated50"]);
    let v = json(&d.path().join("o/prediction.json"));
    assert_eq!(v["limit"]["case"], "case_ii_regular");
    assert!((v["limit"]["mass_inf"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(v["truncated"]["case"], "case_i");
    let w: f64 = v["truncated"]["I_inf"]["weights"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
    let m = v["truncated"]["mass_inf"].as_f64().unwrap();
    assert!((w - m).abs() < 1e-12);
    assert!((m - 1.0).abs() < 0.05, "{m}");
}

#[test]
fn analyze_writes_eta_and_coarea() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["--out", "o", "analyze", "--scenario", "fig7", "--grid", "801", "--t-end", "200"]);
    let v = json(&d.path().join("o/analysis.json"));
    assert_eq!(v["prediction"]["rho"], 6.0);
    assert_eq!(v["slopes"].as_array().unwrap().len(), 2);
    let coarea = std::fs::read_to_string(d.path().join("o/coarea.csv")).unwrap();
    assert!(coarea.starts_with("y,density,flag\n"));
    assert!(std::fs::read_to_string(d.path().join("o/eta.csv")).unwrap().lines().count() > 100);
}
